#include "rankdistill/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "rankdistill/bm25.hpp"
#include "rankdistill/errors.hpp"
#include "rankdistill/nn.hpp"

namespace rankdistill {

namespace {

using ad::Mat;

std::vector<std::pair<std::string, double>> sort_scored(
    std::vector<std::pair<std::string, double>> scored) {
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return scored;
}

Mat pooled_embedding(const RraBert& encoder, const std::vector<int>& token_ids) {
  std::vector<int> ids;
  ids.reserve(token_ids.size() + 2);
  ids.push_back(encoder.vocab().cls_id());
  ids.insert(ids.end(), token_ids.begin(), token_ids.end());
  ids.push_back(encoder.vocab().sep_id());
  if (static_cast<int>(ids.size()) > encoder.config().max_seq_len) {
    ids.resize(static_cast<std::size_t>(encoder.config().max_seq_len));
  }
  ModelTape mt(encoder.params());
  TransformerOut out = transformer_forward(mt, encoder.config(), ids, /*causal=*/false);
  return out.last().value().colwise().mean();
}

double cosine(const Mat& a, const Mat& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0;
  return (a.array() * b.array()).sum() / (na * nb);
}

std::vector<int> ids_or_tokenize(const std::vector<int>& ids, const std::string& text,
                                 const Vocabulary& vocab) {
  return ids.empty() ? tokenize(text, vocab) : ids;
}

double sample_stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0;
  double acc = 0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::vector<std::pair<std::string, double>> naive_cosine_rank(const Query& query,
                                                              const std::vector<Document>& docs,
                                                              const RraBert& encoder) {
  Mat q_emb =
      pooled_embedding(encoder, ids_or_tokenize(query.token_ids, query.text, encoder.vocab()));
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(docs.size());
  for (const Document& d : docs) {
    Mat d_emb = pooled_embedding(encoder, ids_or_tokenize(d.token_ids, d.text, encoder.vocab()));
    scored.emplace_back(d.id, cosine(q_emb, d_emb));
  }
  return sort_scored(std::move(scored));
}

std::vector<std::pair<std::string, double>> vanilla_decoder_rank(const Query& query,
                                                                 const std::vector<Document>& docs,
                                                                 const RraGpt& decoder) {
  auto rel_id = decoder.vocab().id_of("relevant");
  auto irr_id = decoder.vocab().id_of("irrelevant");
  if (!rel_id || !irr_id) {
    throw InputError("vanilla decoder ranking needs the words 'relevant' and 'irrelevant'");
  }
  const Mat& lw = decoder.params().at("lm.w");
  const Mat& lb = decoder.params().at("lm.b");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(docs.size());
  for (const Document& d : docs) {
    PromptedExample ex = decoder.build_prompt(query, d);
    ModelTape mt(decoder.params());
    TransformerOut out = transformer_forward(mt, decoder.config(), ex.ids, /*causal=*/true);
    Mat logits = out.last().value().row(ex.response_index) * lw + lb;
    double zr = logits(0, *rel_id), zi = logits(0, *irr_id);
    scored.emplace_back(d.id, std::tanh((zr - zi) / 2));  // p_rel - p_irrel, two-way softmax
  }
  return sort_scored(std::move(scored));
}

Qrels qrels_from_labels(const std::vector<RankingLabel>& labels) {
  Qrels qrels;
  for (const RankingLabel& label : labels) {
    auto& judged = qrels[label.query_id];
    const std::size_t half = (label.ranked.size() + 1) / 2;
    for (std::size_t i = 0; i < label.ranked.size(); ++i) {
      judged[label.ranked[i]] = i < half ? 3 : 2;
    }
    for (const std::string& id : label.excluded) judged[id] = 0;
    for (const std::string& id : label.negatives) judged[id] = 0;
  }
  return qrels;
}

std::vector<BertVariant> bert_table_variants() {
  return {
      {"w/ ts+tcl", true, true, true},
      {"w/o missing", false, true, true},
      {"w/o ts+tcl", true, false, false},
      {"infer w/o tcl", true, true, false},
  };
}

std::vector<GptVariant> gpt_table_variants() {
  std::vector<GptVariant> v;
  v.push_back({"gen", {true, false, false}, true, RankingInput::kResponse, false});
  v.push_back({"gen+clf", {true, true, false}, true, RankingInput::kResponse, false});
  v.push_back({"gen+rank", {true, false, true}, true, RankingInput::kResponse, true});
  v.push_back({"gen+clf+rank", {true, true, true}, true, RankingInput::kResponse, true});
  v.push_back({"gen+clf+rank w/o reasoning", {true, true, true}, false, RankingInput::kResponse,
               true});
  v.push_back({"gen+clf+rank reason input", {true, true, true}, true, RankingInput::kReason,
               true});
  return v;
}

namespace {

struct VariantOutcome {
  double metric = 0;
  long steps = 0;
};

AblationTable run_suite(
    const std::string& suite, const std::vector<std::string>& variant_names,
    const std::vector<std::uint64_t>& seeds,
    const std::function<VariantOutcome(std::size_t variant, std::uint64_t seed)>& run_one,
    const std::function<double(const std::string& baseline, std::uint64_t seed)>& run_baseline,
    const std::vector<std::string>& baselines) {
  if (seeds.empty()) throw InputError("ablation needs at least one seed");
  AblationTable table;
  table.suite = suite;
  table.seeds = seeds;

  auto finish = [](AblationRow& row) {
    double sum = 0;
    for (double m : row.per_seed) sum += m;
    row.mean = sum / static_cast<double>(row.per_seed.size());
    row.stddev = sample_stddev(row.per_seed, row.mean);
    if (!row.steps_per_seed.empty()) {
      double s = 0;
      for (long st : row.steps_per_seed) s += static_cast<double>(st);
      row.mean_steps = s / static_cast<double>(row.steps_per_seed.size());
    }
  };

  for (const std::string& name : baselines) {
    AblationRow row;
    row.variant = name;
    for (std::uint64_t seed : seeds) {
      try {
        row.per_seed.push_back(run_baseline(name, seed));
      } catch (const std::exception& e) {
        throw InputError("ablation baseline '" + name + "' failed: " + e.what());
      }
    }
    finish(row);
    table.rows.push_back(std::move(row));
  }

  for (std::size_t vi = 0; vi < variant_names.size(); ++vi) {
    AblationRow row;
    row.variant = variant_names[vi];
    for (std::uint64_t seed : seeds) {
      try {
        VariantOutcome out = run_one(vi, seed);
        row.per_seed.push_back(out.metric);
        row.steps_per_seed.push_back(out.steps);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged("ablation variant '" + row.variant + "' failed: " + e.what());
      } catch (const std::exception& e) {
        throw InputError("ablation variant '" + row.variant + "' failed: " + e.what());
      }
    }
    finish(row);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Validation split and pools for a seed, mirroring what training will see.
std::vector<QueryTrainItem> seed_validation_items(const Corpus& corpus,
                                                  const std::vector<RankingLabel>& labels,
                                                  double ratio, std::uint64_t seed) {
  auto [train_labels, valid_labels] = split_dataset(labels, ratio, seed);
  return resolve_items(valid_labels, corpus, true);
}

double mean_ndcg5(const std::vector<QueryTrainItem>& items,
                  const std::function<std::vector<std::pair<std::string, double>>(
                      const QueryTrainItem&)>& rank_fn) {
  if (items.empty()) throw InputError("no validation queries");
  double sum = 0;
  for (const QueryTrainItem& item : items) {
    auto ranking = rank_fn(item);
    std::map<std::string, int> gain_of;
    for (std::size_t i = 0; i < item.docs.size(); ++i) gain_of[item.docs[i].id] = item.gain[i];
    std::vector<double> rels;
    rels.reserve(ranking.size());
    for (const auto& [id, score] : ranking) rels.push_back(gain_of.at(id));
    sum += ndcg_at_k(rels, 5);
  }
  return sum / static_cast<double>(items.size());
}

}  // namespace

AblationTable run_bert_ablation(const Corpus& corpus, const std::vector<RankingLabel>& labels,
                                const ModelConfig& model_config, const BertSettings& settings,
                                const TrainConfig& base_config,
                                const std::vector<BertVariant>& variants,
                                const std::vector<std::uint64_t>& seeds) {
  std::vector<std::string> names;
  for (const BertVariant& v : variants) names.push_back(v.name);

  auto run_one = [&](std::size_t vi, std::uint64_t seed) {
    const BertVariant& v = variants[vi];
    BertSettings s = settings;
    s.use_tcl_at_inference = v.infer_tcl;
    RraBert model(model_config, s, corpus.vocab, seed);
    TrainConfig cfg = base_config;
    cfg.seed = seed;
    cfg.use_excluded = v.use_excluded;
    cfg.bert_train_tcl = v.train_tcl;
    cfg.out_dir.clear();
    TrainReport report = train_bert(model, labels, corpus, cfg);
    return VariantOutcome{report.best_metric, report.steps_to_best};
  };

  auto run_baseline = [&](const std::string& name, std::uint64_t seed) {
    auto items = seed_validation_items(corpus, labels, base_config.split_ratio, seed);
    if (name == "bm25") {
      return mean_ndcg5(items, [&](const QueryTrainItem& item) {
        return bm25_rank(item.query, item.docs);
      });
    }
    RraBert untuned(model_config, settings, corpus.vocab, seed);
    return mean_ndcg5(items, [&](const QueryTrainItem& item) {
      return naive_cosine_rank(item.query, item.docs, untuned);
    });
  };

  return run_suite("bert", names, seeds, run_one, run_baseline, {"bm25", "naive cosine"});
}

AblationTable run_gpt_ablation(const Corpus& corpus, const std::vector<RankingLabel>& labels,
                               const ModelConfig& model_config, const GptSettings& settings,
                               const TrainConfig& base_config,
                               const std::vector<GptVariant>& variants,
                               const std::vector<std::uint64_t>& seeds) {
  std::vector<std::string> names;
  for (const GptVariant& v : variants) names.push_back(v.name);

  auto run_one = [&](std::size_t vi, std::uint64_t seed) {
    const GptVariant& v = variants[vi];
    GptSettings s = settings;
    s.tasks = v.tasks;
    s.reasoning = v.reasoning;
    s.ranking_input = v.ranking_input;
    s.use_ranking_layer = v.use_ranking_layer;
    RraGpt model(model_config, s, corpus.vocab, seed);
    model.register_special_tokens();
    TrainConfig cfg = base_config;
    cfg.seed = seed;
    cfg.out_dir.clear();
    TrainReport report = train_gpt(model, labels, corpus, cfg);
    return VariantOutcome{report.best_metric, report.steps_to_best};
  };

  auto run_baseline = [&](const std::string& name, std::uint64_t seed) {
    auto items = seed_validation_items(corpus, labels, base_config.split_ratio, seed);
    if (name == "bm25") {
      return mean_ndcg5(items, [&](const QueryTrainItem& item) {
        return bm25_rank(item.query, item.docs);
      });
    }
    RraGpt untuned(model_config, settings, corpus.vocab, seed);
    untuned.register_special_tokens();
    return mean_ndcg5(items, [&](const QueryTrainItem& item) {
      return vanilla_decoder_rank(item.query, item.docs, untuned);
    });
  };

  return run_suite("gpt", names, seeds, run_one, run_baseline, {"bm25", "vanilla decoder"});
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,mean_ndcg5,stddev_ndcg5,mean_steps_to_best";
  for (std::size_t i = 0; i < table.seeds.size(); ++i) out << ",seed_" << table.seeds[i];
  out << "\n";
  out.precision(10);
  for (const AblationRow& row : table.rows) {
    std::string quoted = row.variant;
    out << '"' << quoted << '"' << ',' << row.mean << ',' << row.stddev << ',' << row.mean_steps;
    for (double m : row.per_seed) out << ',' << m;
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_ablation_json(const AblationTable& table, const std::filesystem::path& path) {
  nlohmann::json j;
  j["suite"] = table.suite;
  j["metric"] = "ndcg@5";
  j["seeds"] = table.seeds;
  j["rows"] = nlohmann::json::array();
  for (const AblationRow& row : table.rows) {
    nlohmann::json r{{"variant", row.variant},
                     {"per_seed", row.per_seed},
                     {"mean", row.mean},
                     {"stddev", row.stddev}};
    if (!row.steps_per_seed.empty()) {
      r["steps_per_seed"] = row.steps_per_seed;
      r["mean_steps_to_best"] = row.mean_steps;
    }
    j["rows"].push_back(std::move(r));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace rankdistill
