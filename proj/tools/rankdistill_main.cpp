#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rankdistill/checkpoint.hpp"
#include "rankdistill/errors.hpp"
#include "rankdistill/evaluation.hpp"
#include "rankdistill/labelgen.hpp"
#include "rankdistill/metrics.hpp"
#include "rankdistill/rra_bert.hpp"
#include "rankdistill/rra_gpt.hpp"
#include "rankdistill/training.hpp"

namespace rd = rankdistill;

namespace {

// Flat key = value config file. '#' starts a comment; keys not consumed by
// any reader are rejected so typos never pass silently.
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw rd::InputError("cannot read config file " + path.string());
    FlatConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw rd::ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
      }
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty() || value.empty()) {
        throw rd::ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": empty key or value");
      }
      if (!cfg.kv_.emplace(key, value).second) {
        throw rd::ConfigError(path.string() + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
      }
    }
    return cfg;
  }

  double get_double(const std::string& key, double fallback) {
    auto v = take(key);
    if (!v) return fallback;
    return parse_number<double>(key, *v);
  }
  long get_long(const std::string& key, long fallback) {
    auto v = take(key);
    if (!v) return fallback;
    return parse_number<long>(key, *v);
  }
  int get_int(const std::string& key, int fallback) {
    return static_cast<int>(get_long(key, fallback));
  }
  bool get_bool(const std::string& key, bool fallback) {
    auto v = take(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw rd::ConfigError("config key '" + key + "' wants true/false, got '" + *v + "'");
  }
  std::string get_string(const std::string& key, std::string fallback) {
    auto v = take(key);
    return v ? *v : fallback;
  }

  void finish() const {
    for (const auto& [key, value] : kv_) {
      if (!consumed_.count(key)) throw rd::ConfigError("unknown config key '" + key + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    consumed_.insert(key);
    return it->second;
  }

  template <typename T>
  static T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out;
    in >> out;
    if (!in || !in.eof()) {
      throw rd::ConfigError("config key '" + key + "' has a malformed number '" + value + "'");
    }
    return out;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> consumed_;
};

rd::ModelConfig model_config_from(FlatConfig& cfg, int vocab_size) {
  rd::ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_hidden = cfg.get_int("d_hidden", m.d_hidden);
  m.n_layers = cfg.get_int("n_layers", m.n_layers);
  m.n_heads = cfg.get_int("n_heads", m.n_heads);
  m.max_seq_len = cfg.get_int("max_seq_len", m.max_seq_len);
  m.ffn_multiplier = cfg.get_int("ffn_multiplier", m.ffn_multiplier);
  m.validate();
  return m;
}

rd::TrainConfig train_config_from(FlatConfig& cfg, std::uint64_t seed, bool decoder) {
  rd::TrainConfig t;
  t.validate_every = decoder ? 1000 : 300;
  t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
  t.weight_decay = cfg.get_double("weight_decay", t.weight_decay);
  t.validate_every = cfg.get_int("validate_every", t.validate_every);
  t.patience = cfg.get_int("patience", t.patience);
  t.split_ratio = cfg.get_double("split_ratio", t.split_ratio);
  t.max_steps = cfg.get_long("max_steps", t.max_steps);
  t.use_excluded = cfg.get_bool("use_excluded", t.use_excluded);
  t.bert_train_tcl = cfg.get_bool("bert_train_tcl", t.bert_train_tcl);
  t.seed = seed;
  t.validate();
  return t;
}

rd::BertSettings bert_settings_from(FlatConfig& cfg) {
  rd::BertSettings s;
  s.k = cfg.get_int("token_select_k", s.k);
  s.alpha = cfg.get_double("alpha", s.alpha);
  s.tcl_heads = cfg.get_int("tcl_heads", s.tcl_heads);
  s.use_tcl_at_inference = cfg.get_bool("use_tcl_at_inference", s.use_tcl_at_inference);
  s.cosine_token_select = cfg.get_bool("cosine_token_select", s.cosine_token_select);
  return s;
}

rd::TaskFlags parse_tasks(const std::string& spec) {
  rd::TaskFlags flags{false, false, false};
  std::stringstream in(spec);
  std::string part;
  while (std::getline(in, part, '+')) {
    if (part == "gen") {
      flags.gen = true;
    } else if (part == "clf") {
      flags.clf = true;
    } else if (part == "rank") {
      flags.rank = true;
    } else {
      throw rd::ConfigError("unknown task '" + part + "' (expected gen, clf, rank)");
    }
  }
  if (!flags.gen && !flags.clf && !flags.rank) {
    throw rd::ConfigError("task list '" + spec + "' enables nothing");
  }
  return flags;
}

rd::GptSettings gpt_settings_from(FlatConfig& cfg) {
  rd::GptSettings s;
  std::string tasks = cfg.get_string("tasks", "gen+clf+rank");
  s.tasks = parse_tasks(tasks);
  s.reasoning = cfg.get_bool("reasoning", s.reasoning);
  s.use_ranking_layer = cfg.get_bool("use_ranking_layer", s.use_ranking_layer);
  std::string input = cfg.get_string("ranking_input", "response");
  if (input == "response") {
    s.ranking_input = rd::RankingInput::kResponse;
  } else if (input == "reason") {
    s.ranking_input = rd::RankingInput::kReason;
  } else {
    throw rd::ConfigError("ranking_input must be response or reason, got '" + input + "'");
  }
  s.mask_prompt = cfg.get_bool("mask_prompt", s.mask_prompt);
  return s;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    std::istringstream num(part);
    std::uint64_t s;
    num >> s;
    if (!num || !num.eof()) throw rd::InputError("bad seed '" + part + "' in --seeds");
    seeds.push_back(s);
  }
  if (seeds.empty()) throw rd::InputError("--seeds names no seeds");
  return seeds;
}

std::vector<rd::Document> load_doc_list(const std::filesystem::path& path,
                                        const rd::Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw rd::InputError("cannot read documents file " + path.string());
  std::vector<rd::Document> docs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      rd::Document d;
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.token_ids = rd::tokenize(d.text, vocab);
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw rd::InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (docs.empty()) throw rd::InputError("documents file " + path.string() + " is empty");
  return docs;
}

void print_run_lines(std::ostream& out, const std::string& query_id,
                     const std::vector<std::pair<std::string, double>>& ranking) {
  out.precision(17);
  int rank = 1;
  for (const auto& [doc_id, score] : ranking) {
    out << query_id << " Q0 " << doc_id << " " << rank++ << " " << score << " rankdistill\n";
  }
}

void report_to_stdout(const rd::TrainReport& report) {
  nlohmann::json j{{"steps_to_best", report.steps_to_best},
                   {"best_ndcg5", report.best_metric},
                   {"stopped_early", report.stopped_early},
                   {"validations", report.curve.size()}};
  if (!report.checkpoint.empty()) j["checkpoint"] = report.checkpoint.string();
  std::cout << j.dump() << "\n";
}

// --- subcommand bodies ------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 1;
  int queries = 200;
  int docs = 50;
  int vocab = 1000;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  rd::Corpus corpus = rd::generate_synthetic_corpus(a.seed, a.queries, a.docs, a.vocab);
  rd::save_corpus(corpus, a.out);
  std::cerr << "wrote " << corpus.sets.size() << " candidate sets to " << a.out << "\n";
}

struct GenLabelsArgs {
  std::string corpus;
  std::string out;
  std::string qrels;
  std::string skip_report;
  std::string labeler = "oracle";
  std::string endpoint;
  double threshold = 0.5;
  double miss_noise = 0.5;
  int negatives = 3;
  int timeout = 30;
  int retries = 2;
  bool sliding_window = false;
  std::uint64_t seed = 1;
};

void cmd_gen_labels(const GenLabelsArgs& a) {
  rd::Corpus corpus = rd::load_corpus(a.corpus);
  std::unique_ptr<rd::Labeler> labeler;
  if (a.labeler == "oracle") {
    labeler = std::make_unique<rd::SyntheticOracleLabeler>(a.threshold, a.miss_noise, a.seed);
  } else if (a.labeler == "http") {
    if (a.endpoint.empty()) throw rd::InputError("--labeler http needs --endpoint");
    rd::HttpLabelerConfig cfg;
    cfg.endpoint = a.endpoint;
    cfg.timeout_seconds = a.timeout;
    cfg.max_retries = a.retries;
    labeler = std::make_unique<rd::HttpChatLabeler>(cfg);
  } else {
    throw rd::InputError("--labeler must be oracle or http, got '" + a.labeler + "'");
  }

  rd::DatasetBuildOptions options;
  options.negatives = a.negatives;
  options.sliding_window = a.sliding_window;
  rd::DatasetBuildResult result = rd::build_dataset(corpus, *labeler, a.seed, options);
  rd::save_dataset(result.labels, a.out);
  if (!a.qrels.empty()) rd::save_qrels(rd::qrels_from_labels(result.labels), a.qrels);
  if (!a.skip_report.empty()) {
    std::ofstream out(a.skip_report);
    if (!out) throw rd::IoError("cannot write " + a.skip_report);
    for (const rd::SkipReport& skip : result.skipped) {
      out << nlohmann::json{{"query_id", skip.query_id}, {"reason", skip.reason}}.dump() << "\n";
    }
  }
  std::cerr << "labeled " << result.labels.size() << " queries, skipped "
            << result.skipped.size() << "\n";
}

struct TrainArgs {
  std::string dataset;
  std::string corpus;
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
};

void cmd_train_bert(const TrainArgs& a) {
  rd::Corpus corpus = rd::load_corpus(a.corpus);
  std::vector<rd::RankingLabel> labels = rd::load_dataset(a.dataset);
  FlatConfig cfg = a.config.empty() ? FlatConfig() : FlatConfig::from_file(a.config);
  rd::ModelConfig mc = model_config_from(cfg, corpus.vocab.size());
  rd::BertSettings settings = bert_settings_from(cfg);
  rd::TrainConfig tc = train_config_from(cfg, a.seed, /*decoder=*/false);
  cfg.finish();
  tc.out_dir = a.out;
  rd::RraBert model(mc, settings, corpus.vocab, a.seed);
  rd::TrainReport report = rd::train_bert(model, labels, corpus, tc);
  report_to_stdout(report);
}

void cmd_train_gpt(const TrainArgs& a) {
  rd::Corpus corpus = rd::load_corpus(a.corpus);
  std::vector<rd::RankingLabel> labels = rd::load_dataset(a.dataset);
  FlatConfig cfg = a.config.empty() ? FlatConfig() : FlatConfig::from_file(a.config);
  rd::ModelConfig mc = model_config_from(cfg, corpus.vocab.size());
  rd::GptSettings settings = gpt_settings_from(cfg);
  rd::TrainConfig tc = train_config_from(cfg, a.seed, /*decoder=*/true);
  cfg.finish();
  tc.out_dir = a.out;
  rd::RraGpt model(mc, settings, corpus.vocab, a.seed);
  model.register_special_tokens();
  rd::TrainReport report = rd::train_gpt(model, labels, corpus, tc);
  report_to_stdout(report);
}

struct RankArgs {
  std::string model;
  std::string query;
  std::string query_id = "q0";
  std::string docs;
};

void cmd_rank(const RankArgs& a) {
  rd::CheckpointPayload payload = rd::load_checkpoint(a.model);
  if (payload.kind == "rra_bert") {
    rd::RraBert model = rd::RraBert::load(a.model);
    std::vector<rd::Document> docs = load_doc_list(a.docs, model.vocab());
    rd::Query query{a.query_id, a.query, rd::tokenize(a.query, model.vocab())};
    print_run_lines(std::cout, a.query_id,
                    model.rank(query, docs, model.settings().use_tcl_at_inference));
  } else if (payload.kind == "rra_gpt") {
    rd::RraGpt model = rd::RraGpt::load(a.model);
    std::vector<rd::Document> docs = load_doc_list(a.docs, model.vocab());
    rd::Query query{a.query_id, a.query, rd::tokenize(a.query, model.vocab())};
    print_run_lines(std::cout, a.query_id, model.rank(query, docs));
  } else {
    throw rd::CheckpointKindError("unknown checkpoint kind '" + payload.kind + "'");
  }
}

struct EvaluateArgs {
  std::string run;
  std::string qrels;
  std::vector<int> ks;
  bool per_query = false;
};

void cmd_evaluate(const EvaluateArgs& a) {
  rd::Run run = rd::load_run(a.run);
  rd::Qrels qrels = rd::load_qrels(a.qrels);
  std::vector<int> ks = a.ks.empty() ? std::vector<int>{5, 10} : a.ks;
  rd::EvalResult result = rd::evaluate_run(run, qrels, ks);
  nlohmann::json j;
  for (const auto& [k, mean] : result.mean) j["mean"]["ndcg@" + std::to_string(k)] = mean;
  j["evaluated_queries"] = result.evaluated_queries;
  j["skipped_queries"] = result.skipped_queries;
  if (a.per_query) {
    for (const auto& [qid, by_k] : result.per_query) {
      for (const auto& [k, v] : by_k) j["per_query"][qid]["ndcg@" + std::to_string(k)] = v;
    }
  }
  std::cout << j.dump(2) << "\n";
}

struct AblateArgs {
  std::string suite = "bert";
  std::string corpus;
  std::string dataset;
  std::string config;
  std::string seeds = "1,2,3";
  std::string out_csv;
  std::string out_json;
};

void cmd_ablate(const AblateArgs& a) {
  rd::Corpus corpus = rd::load_corpus(a.corpus);
  std::vector<rd::RankingLabel> labels = rd::load_dataset(a.dataset);
  std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  FlatConfig cfg = a.config.empty() ? FlatConfig() : FlatConfig::from_file(a.config);
  rd::ModelConfig mc = model_config_from(cfg, corpus.vocab.size());

  rd::AblationTable table;
  if (a.suite == "bert") {
    rd::BertSettings settings = bert_settings_from(cfg);
    rd::TrainConfig tc = train_config_from(cfg, seeds.front(), /*decoder=*/false);
    cfg.finish();
    table = rd::run_bert_ablation(corpus, labels, mc, settings, tc, rd::bert_table_variants(),
                                  seeds);
  } else if (a.suite == "gpt") {
    rd::GptSettings settings = gpt_settings_from(cfg);
    rd::TrainConfig tc = train_config_from(cfg, seeds.front(), /*decoder=*/true);
    cfg.finish();
    table =
        rd::run_gpt_ablation(corpus, labels, mc, settings, tc, rd::gpt_table_variants(), seeds);
  } else {
    throw rd::InputError("--suite must be bert or gpt, got '" + a.suite + "'");
  }

  std::cout.precision(6);
  for (const rd::AblationRow& row : table.rows) {
    std::cout << row.variant << ": ndcg@5 " << row.mean << " +- " << row.stddev;
    if (!row.steps_per_seed.empty()) std::cout << ", steps_to_best " << row.mean_steps;
    std::cout << "\n";
  }
  if (!a.out_csv.empty()) rd::write_ablation_csv(table, a.out_csv);
  if (!a.out_json.empty()) rd::write_ablation_json(table, a.out_json);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distills list-wise ranking labels into small encoder and decoder rankers"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-corpus", "generate a synthetic retrieval corpus");
  synth_cmd->add_option("--seed", synth.seed, "RNG seed");
  synth_cmd->add_option("--queries", synth.queries, "number of queries");
  synth_cmd->add_option("--docs", synth.docs, "candidate documents per query");
  synth_cmd->add_option("--vocab", synth.vocab, "vocabulary budget");
  synth_cmd->add_option("--out", synth.out, "output corpus JSONL")->required();
  synth_cmd->callback([&] { cmd_synth(synth); });

  GenLabelsArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-labels", "label a corpus and build the training set");
  gen_cmd->add_option("--corpus", gen.corpus, "corpus JSONL")->required();
  gen_cmd->add_option("--out", gen.out, "output labels JSONL")->required();
  gen_cmd->add_option("--qrels", gen.qrels, "also write TREC qrels here");
  gen_cmd->add_option("--skip-report", gen.skip_report, "write skipped-query report here");
  gen_cmd->add_option("--labeler", gen.labeler, "oracle | http");
  gen_cmd->add_option("--endpoint", gen.endpoint, "chat endpoint for --labeler http");
  gen_cmd->add_option("--threshold", gen.threshold, "oracle relevance threshold");
  gen_cmd->add_option("--miss-noise", gen.miss_noise, "oracle borderline flip probability");
  gen_cmd->add_option("--negatives", gen.negatives, "negatives sampled per query");
  gen_cmd->add_option("--timeout", gen.timeout, "HTTP timeout seconds");
  gen_cmd->add_option("--retries", gen.retries, "HTTP retry budget");
  gen_cmd->add_flag("--sliding-window", gen.sliding_window,
                    "label the full list with a sliding window");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed");
  gen_cmd->callback([&] { cmd_gen_labels(gen); });

  TrainArgs train_bert_args;
  auto* tb_cmd = app.add_subcommand("train-bert", "train the encoder ranker");
  tb_cmd->add_option("--dataset", train_bert_args.dataset, "labels JSONL")->required();
  tb_cmd->add_option("--corpus", train_bert_args.corpus, "corpus JSONL")->required();
  tb_cmd->add_option("--config", train_bert_args.config, "flat key=value config file");
  tb_cmd->add_option("--out", train_bert_args.out, "output directory")->required();
  tb_cmd->add_option("--seed", train_bert_args.seed, "RNG seed");
  tb_cmd->callback([&] { cmd_train_bert(train_bert_args); });

  TrainArgs train_gpt_args;
  auto* tg_cmd = app.add_subcommand("train-gpt", "train the decoder ranker");
  tg_cmd->add_option("--dataset", train_gpt_args.dataset, "labels JSONL")->required();
  tg_cmd->add_option("--corpus", train_gpt_args.corpus, "corpus JSONL")->required();
  tg_cmd->add_option("--config", train_gpt_args.config, "flat key=value config file");
  tg_cmd->add_option("--out", train_gpt_args.out, "output directory")->required();
  tg_cmd->add_option("--seed", train_gpt_args.seed, "RNG seed");
  tg_cmd->callback([&] { cmd_train_gpt(train_gpt_args); });

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("rank", "rank documents with a trained checkpoint");
  rank_cmd->add_option("--model", rank.model, "checkpoint file")->required();
  rank_cmd->add_option("--query", rank.query, "query text")->required();
  rank_cmd->add_option("--query-id", rank.query_id, "query id for the run lines");
  rank_cmd->add_option("--docs", rank.docs, "documents JSONL ({\"id\",\"text\"})")->required();
  rank_cmd->callback([&] { cmd_rank(rank); });

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a TREC run against qrels");
  eval_cmd->add_option("--run", eval.run, "TREC run file")->required();
  eval_cmd->add_option("--qrels", eval.qrels, "TREC qrels file")->required();
  eval_cmd->add_option("--k", eval.ks, "nDCG cutoffs (default 5 and 10)");
  eval_cmd->add_flag("--per-query", eval.per_query, "include per-query values");
  eval_cmd->callback([&] { cmd_evaluate(eval); });

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the standard variants");
  ablate_cmd->add_option("--suite", ablate.suite, "bert | gpt");
  ablate_cmd->add_option("--corpus", ablate.corpus, "corpus JSONL")->required();
  ablate_cmd->add_option("--dataset", ablate.dataset, "labels JSONL")->required();
  ablate_cmd->add_option("--config", ablate.config, "flat key=value config file");
  ablate_cmd->add_option("--seeds", ablate.seeds, "comma-separated seed list");
  ablate_cmd->add_option("--out-csv", ablate.out_csv, "comparison table CSV");
  ablate_cmd->add_option("--out-json", ablate.out_json, "comparison table JSON");
  ablate_cmd->callback([&] { cmd_ablate(ablate); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const rd::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
