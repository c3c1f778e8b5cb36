#include "rankdistill/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rankdistill/errors.hpp"
#include "rankdistill/metrics.hpp"
#include "rankdistill/random.hpp"

namespace rankdistill {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (validate_every <= 0) throw ConfigError("validate_every must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (max_steps <= 0) throw ConfigError("max_steps must be positive");
}

std::pair<std::vector<RankingLabel>, std::vector<RankingLabel>> split_dataset(
    const std::vector<RankingLabel>& labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0 && ratio < 1)) throw ConfigError("split ratio must lie in (0, 1)");
  if (labels.size() < 10) {
    throw InputError("dataset split needs at least 10 queries, got " +
                     std::to_string(labels.size()));
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  RandomSource rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  auto n_train = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(labels.size()) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, labels.size() - 1);
  std::pair<std::vector<RankingLabel>, std::vector<RankingLabel>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(labels[order[i]]);
  }
  return out;
}

std::vector<QueryTrainItem> resolve_items(const std::vector<RankingLabel>& labels,
                                          const Corpus& corpus, bool use_excluded) {
  std::vector<QueryTrainItem> items;
  items.reserve(labels.size());
  for (const RankingLabel& label : labels) {
    const CandidateSet* set = corpus.find_set(label.query_id);
    if (set == nullptr) {
      throw InputError("dataset query '" + label.query_id + "' is not in the corpus");
    }
    QueryTrainItem item;
    item.query = set->query;

    auto push = [&](const std::string& doc_id, int gain) {
      const Document* doc = corpus.find_document(doc_id);
      if (doc == nullptr) {
        throw InputError("dataset document '" + doc_id + "' is not in the corpus");
      }
      auto graded_it = label.graded_scores.find(doc_id);
      auto binary_it = label.binary_labels.find(doc_id);
      if (graded_it == label.graded_scores.end() || binary_it == label.binary_labels.end()) {
        throw InputError("dataset document '" + doc_id + "' is missing its targets");
      }
      item.docs.push_back(*doc);
      item.graded.push_back(graded_it->second);
      item.binary.push_back(binary_it->second);
      item.gain.push_back(gain);
      auto reason_it = label.reasoning.find(doc_id);
      item.reasoning.push_back(reason_it == label.reasoning.end() ? std::string()
                                                                  : reason_it->second);
    };

    const std::size_t half = (label.ranked.size() + 1) / 2;  // upper half of the ranking
    for (std::size_t i = 0; i < label.ranked.size(); ++i) {
      push(label.ranked[i], i < half ? 3 : 2);
    }
    if (use_excluded) {
      for (const std::string& id : label.excluded) push(id, 0);
    }
    for (const std::string& id : label.negatives) push(id, 0);
    items.push_back(std::move(item));
  }
  return items;
}

namespace {

double item_ndcg5(const std::vector<std::pair<std::string, double>>& ranking,
                  const QueryTrainItem& item) {
  std::map<std::string, int> gain_of;
  for (std::size_t i = 0; i < item.docs.size(); ++i) gain_of[item.docs[i].id] = item.gain[i];
  std::vector<double> rels;
  rels.reserve(ranking.size());
  for (const auto& [id, score] : ranking) rels.push_back(gain_of.at(id));
  return ndcg_at_k(rels, 5);
}

struct StepResult {
  double loss = 0;
  nlohmann::json components;
};

// Shared loop: one query per step, reshuffled epochs, periodic validation,
// patience-based stop, best-parameters restore.
TrainReport run_training(ParamStore& params, const std::vector<QueryTrainItem>& train_items,
                         const TrainConfig& config,
                         const std::function<StepResult(const QueryTrainItem&, AdamW&)>& step_fn,
                         const std::function<double()>& validate_fn) {
  config.validate();
  if (train_items.empty()) throw InputError("no training queries after the split");

  std::ofstream log;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    log.open(config.out_dir / "metrics.jsonl");
    if (!log) throw IoError("cannot open metrics log in " + config.out_dir.string());
  }

  AdamW opt(config.learning_rate, config.weight_decay);
  RandomSource order_rng(derive_seed(config.seed, "order"));

  TrainReport report;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Mat> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (std::size_t i = 0; i < params.size(); ++i) best_params.push_back(params.value(i));
  };

  long step = 0;
  int stale = 0;
  bool stop = false;
  std::vector<std::size_t> order(train_items.size());
  std::iota(order.begin(), order.end(), 0);

  auto validate_now = [&] {
    double metric = validate_fn();
    report.curve.emplace_back(step, metric);
    if (log) {
      nlohmann::json line{{"step", step}, {"valid_ndcg5", metric}};
      log << line.dump() << "\n";
    }
    if (metric > best) {
      best = metric;
      report.steps_to_best = step;
      stale = 0;
      snapshot();
    } else {
      ++stale;
    }
  };

  while (!stop) {
    order_rng.shuffle(order);
    for (std::size_t idx : order) {
      ++step;
      StepResult result = step_fn(train_items[idx], opt);
      if (!std::isfinite(result.loss)) {
        throw TrainingDiverged("loss became non-finite at step " + std::to_string(step));
      }
      if (log) {
        nlohmann::json line = result.components;
        line["step"] = step;
        line["loss"] = result.loss;
        log << line.dump() << "\n";
      }
      if (step % config.validate_every == 0) {
        validate_now();
        if (stale >= config.patience) {
          report.stopped_early = true;
          stop = true;
          break;
        }
      }
      if (step >= config.max_steps) {
        stop = true;
        break;
      }
    }
  }
  if (report.curve.empty()) validate_now();  // max_steps below the first validation

  report.best_metric = best;
  for (std::size_t i = 0; i < params.size(); ++i) params.value(i) = best_params[i];
  return report;
}

}  // namespace

double validation_ndcg(const RraBert& model, const std::vector<QueryTrainItem>& items) {
  return validation_ndcg(model, items, model.settings().use_tcl_at_inference);
}

double validation_ndcg(const RraBert& model, const std::vector<QueryTrainItem>& items,
                       bool use_tcl) {
  if (items.empty()) throw InputError("validation needs at least one query");
  double sum = 0;
  for (const QueryTrainItem& item : items) {
    sum += item_ndcg5(model.rank(item.query, item.docs, use_tcl), item);
  }
  return sum / static_cast<double>(items.size());
}

double validation_ndcg(const RraGpt& model, const std::vector<QueryTrainItem>& items) {
  if (items.empty()) throw InputError("validation needs at least one query");
  double sum = 0;
  for (const QueryTrainItem& item : items) {
    sum += item_ndcg5(model.rank(item.query, item.docs), item);
  }
  return sum / static_cast<double>(items.size());
}

TrainReport train_bert(RraBert& model, const std::vector<RankingLabel>& labels,
                       const Corpus& corpus, const TrainConfig& config) {
  auto [train_labels, valid_labels] = split_dataset(labels, config.split_ratio, config.seed);
  std::vector<QueryTrainItem> train_items = resolve_items(train_labels, corpus, config.use_excluded);
  std::vector<QueryTrainItem> valid_items = resolve_items(valid_labels, corpus, true);

  auto step_fn = [&](const QueryTrainItem& item, AdamW& opt) {
    ModelTape mt(model.params());
    std::vector<ad::Var> scores;
    scores.reserve(item.docs.size());
    for (const Document& doc : item.docs) {
      scores.push_back(
          model.score_on_tape(mt, item.query.token_ids, doc.token_ids, config.bert_train_tcl));
    }
    RankNetTerm term = ranknet_loss(mt.tape(), scores, item.graded);
    mt.tape().backward(term.loss);
    GradStore grads = mt.grads();
    opt.step(model.params(), grads);
    StepResult r;
    r.loss = term.loss.scalar();
    r.components = {{"ranknet", r.loss}, {"pairs", term.pair_count}};
    return r;
  };
  auto validate_fn = [&] { return validation_ndcg(model, valid_items); };

  TrainReport report = run_training(model.params(), train_items, config, step_fn, validate_fn);
  if (!config.out_dir.empty()) {
    report.checkpoint = config.out_dir / "model.ckpt";
    model.save(report.checkpoint);
  }
  return report;
}

TrainReport train_gpt(RraGpt& model, const std::vector<RankingLabel>& labels,
                      const Corpus& corpus, const TrainConfig& config) {
  if (!model.specials_registered()) {
    throw ConfigError("register the decoder control tokens before training");
  }
  auto [train_labels, valid_labels] = split_dataset(labels, config.split_ratio, config.seed);
  std::vector<QueryTrainItem> train_items = resolve_items(train_labels, corpus, config.use_excluded);
  std::vector<QueryTrainItem> valid_items = resolve_items(valid_labels, corpus, true);

  auto step_fn = [&](const QueryTrainItem& item, AdamW& opt) {
    ModelTape mt(model.params());
    std::vector<RraGpt::DocTarget> targets;
    targets.reserve(item.docs.size());
    for (std::size_t i = 0; i < item.docs.size(); ++i) {
      targets.push_back({&item.docs[i], item.graded[i], item.binary[i], item.reasoning[i]});
    }
    GptJointLoss joint = model.joint_loss(mt, item.query, targets);
    mt.tape().backward(joint.total);
    GradStore grads = mt.grads();
    opt.step(model.params(), grads);
    StepResult r;
    r.loss = joint.total.scalar();
    r.components = nlohmann::json::object();
    if (joint.gen.valid()) r.components["gen"] = joint.gen.scalar();
    if (joint.clf.valid()) r.components["clf"] = joint.clf.scalar();
    if (joint.rank.valid()) r.components["rank"] = joint.rank.scalar();
    return r;
  };
  auto validate_fn = [&] { return validation_ndcg(model, valid_items); };

  TrainReport report = run_training(model.params(), train_items, config, step_fn, validate_fn);
  if (!config.out_dir.empty()) {
    report.checkpoint = config.out_dir / "model.ckpt";
    model.save(report.checkpoint);
  }
  return report;
}

}  // namespace rankdistill
