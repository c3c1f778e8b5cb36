#include "rankdistill/rra_gpt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "rankdistill/checkpoint.hpp"
#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"
#include "rankdistill/rra_bert.hpp"

namespace rankdistill {

namespace {

using ad::Mat;
using ad::Var;

struct SpecialSpec {
  const char* token;
  const char* source;  // vocabulary word whose embedding seeds the new row
};

constexpr SpecialSpec kSpecialSpecs[] = {
    {SpecialTokens::kRelevant, "relevant"},
    {SpecialTokens::kIrrelevant, "irrelevant"},
    {SpecialTokens::kResponse, "response"},
    {SpecialTokens::kReason, "reason"},
};

nlohmann::json gpt_settings_to_json(const GptSettings& s) {
  return {{"tasks", {{"gen", s.tasks.gen}, {"clf", s.tasks.clf}, {"rank", s.tasks.rank}}},
          {"reasoning", s.reasoning},
          {"use_ranking_layer", s.use_ranking_layer},
          {"ranking_input", s.ranking_input == RankingInput::kReason ? "reason" : "response"},
          {"mask_prompt", s.mask_prompt}};
}

GptSettings gpt_settings_from_json(const nlohmann::json& j) {
  GptSettings s;
  s.tasks.gen = j.at("tasks").at("gen").get<bool>();
  s.tasks.clf = j.at("tasks").at("clf").get<bool>();
  s.tasks.rank = j.at("tasks").at("rank").get<bool>();
  s.reasoning = j.at("reasoning").get<bool>();
  s.use_ranking_layer = j.at("use_ranking_layer").get<bool>();
  std::string input = j.at("ranking_input").get<std::string>();
  if (input == "reason") {
    s.ranking_input = RankingInput::kReason;
  } else if (input == "response") {
    s.ranking_input = RankingInput::kResponse;
  } else {
    throw CheckpointConfigError("unknown ranking_input '" + input + "'");
  }
  s.mask_prompt = j.at("mask_prompt").get<bool>();
  return s;
}

// Scales scores with their min-max span; a flat list has no span and maps to
// constant 0.5 (zero gradient, matching the plain scaler).
std::vector<Var> min_max_scale_vars(ad::Tape& tape, std::span<const Var> scores) {
  double lo = scores[0].scalar();
  double hi = lo;
  for (const Var& s : scores) {
    lo = std::min(lo, s.scalar());
    hi = std::max(hi, s.scalar());
  }
  std::vector<Var> out;
  out.reserve(scores.size());
  if (hi == lo) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      out.push_back(tape.leaf(Mat::Constant(1, 1, 0.5), "minmax_flat"));
    }
    return out;
  }
  Var mn = ad::vmin(scores);
  Var span = ad::sub(ad::vmax(scores), mn);
  for (const Var& s : scores) out.push_back(ad::div(ad::sub(s, mn), span));
  return out;
}

}  // namespace

std::vector<double> min_max_scale(std::span<const double> values) {
  if (values.empty()) return {};
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(hi == lo ? 0.5 : (v - lo) / (hi - lo));
  return out;
}

RraGpt::RraGpt(ModelConfig config, GptSettings settings, Vocabulary vocab, std::uint64_t seed)
    : config_(config), settings_(settings), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw ConfigError("decoder config vocab_size disagrees with the vocabulary");
  }
  init_transformer_params(params_, config_, seed);
  RandomSource rng(derive_seed(seed, "gpt-heads"));
  init_linear(params_, "lm", config_.d_hidden, config_.vocab_size, rng);
  init_linear(params_, "rank", config_.d_hidden, 1, rng);
}

void RraGpt::register_special_tokens() {
  if (vocab_.has(SpecialTokens::kResponse)) {
    // Already present (repeated call, or a checkpointed vocabulary).
    for (const SpecialSpec& spec : kSpecialSpecs) {
      if (!vocab_.has(spec.token)) {
        throw ConfigError("vocabulary carries only some of the control tokens");
      }
    }
    specials_.relevant = *vocab_.id_of(SpecialTokens::kRelevant);
    specials_.irrelevant = *vocab_.id_of(SpecialTokens::kIrrelevant);
    specials_.response = *vocab_.id_of(SpecialTokens::kResponse);
    specials_.reason = *vocab_.id_of(SpecialTokens::kReason);
    return;
  }

  Mat& emb = params_.at("embed.word");
  Mat& lw = params_.at("lm.w");
  Mat& lb = params_.at("lm.b");
  const int old_v = static_cast<int>(emb.rows());
  const int d = config_.d_hidden;
  const int added = static_cast<int>(std::size(kSpecialSpecs));
  emb.conservativeResize(old_v + added, d);
  lw.conservativeResize(d, old_v + added);
  lb.conservativeResize(1, old_v + added);

  for (const SpecialSpec& spec : kSpecialSpecs) {
    std::vector<int> source_ids = tokenize(spec.source, vocab_);
    for (int id : source_ids) {
      if (id == vocab_.unk_id()) special_init_warning_ = true;
    }
    // Mean of the source rows; a single in-vocabulary word copies its row
    // exactly, so retraining after registration starts from familiar mass.
    Mat row = Mat::Zero(1, d);
    Mat col = Mat::Zero(d, 1);
    double bias = 0;
    for (int id : source_ids) {
      row += emb.row(id);
      col += lw.col(id);
      bias += lb(0, id);
    }
    const double inv = 1.0 / static_cast<double>(source_ids.size());
    if (source_ids.size() > 1) {
      row *= inv;
      col *= inv;
      bias *= inv;
    }
    int new_id = vocab_.add_token(spec.token);
    emb.row(new_id) = row;
    lw.col(new_id) = col;
    lb(0, new_id) = bias;
  }

  specials_.relevant = old_v;
  specials_.irrelevant = old_v + 1;
  specials_.response = old_v + 2;
  specials_.reason = old_v + 3;
  config_.vocab_size = vocab_.size();
}

PromptedExample RraGpt::build_prompt(const Query& query, const Document& doc,
                                     std::optional<int> label,
                                     const std::string& reasoning) const {
  if (!specials_registered()) {
    throw ConfigError("control tokens must be registered before building prompts");
  }
  if (label && *label != 0 && *label != 1) throw InputError("document label must be 0 or 1");

  std::vector<int> q_ids = query.token_ids.empty() ? tokenize(query.text, vocab_) : query.token_ids;
  std::vector<int> d_ids = doc.token_ids.empty() ? tokenize(doc.text, vocab_) : doc.token_ids;
  const int q_marker = vocab_.id_of("query").value_or(vocab_.unk_id());
  const int d_marker = vocab_.id_of("document").value_or(vocab_.unk_id());

  std::vector<int> head;
  head.push_back(q_marker);
  head.insert(head.end(), q_ids.begin(), q_ids.end());
  head.push_back(d_marker);

  // Tail after the document: <|Response|>, then in training form the label
  // token and optionally <|Reason|> plus the explanation.
  std::vector<int> reason_section;
  if (label && !reasoning.empty()) {
    reason_section.push_back(specials_.reason);
    std::vector<int> r_ids = tokenize(reasoning, vocab_);
    reason_section.insert(reason_section.end(), r_ids.begin(), r_ids.end());
  }

  PromptedExample ex;
  ex.label = label ? *label : -1;
  int doc_len = static_cast<int>(d_ids.size());
  int reason_len = static_cast<int>(reason_section.size());
  const int fixed = static_cast<int>(head.size()) + 1 + (label ? 1 : 0);
  int over = fixed + doc_len + reason_len - config_.max_seq_len;
  if (over > 0) {
    // Document tokens go first, explanation tokens second, the query never.
    int cut = std::min(over, doc_len);
    doc_len -= cut;
    over -= cut;
    ex.truncated = true;
  }
  if (over > 0) {
    int cut = std::min(over, reason_len);
    reason_len -= cut;
    over -= cut;
  }
  if (over > 0) {
    throw InputError("prompt for query '" + query.id + "' cannot fit max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }

  ex.ids = head;
  ex.ids.insert(ex.ids.end(), d_ids.begin(), d_ids.begin() + doc_len);
  ex.response_index = static_cast<int>(ex.ids.size());
  ex.ids.push_back(specials_.response);
  if (label) {
    ex.ids.push_back(*label == 1 ? specials_.relevant : specials_.irrelevant);
    if (reason_len > 0) {
      ex.reason_index = static_cast<int>(ex.ids.size());
      ex.ids.insert(ex.ids.end(), reason_section.begin(), reason_section.begin() + reason_len);
    }
  }
  return ex;
}

GptDocForward RraGpt::forward_example(ModelTape& mt, const PromptedExample& ex) const {
  const int n = static_cast<int>(ex.ids.size());
  if (n < 2) throw InputError("prompt too short for a decoder forward pass");
  if (ex.response_index < 0 || ex.response_index >= n) {
    throw InputError("prompt is missing its response position");
  }

  TransformerOut out = transformer_forward(mt, config_, ex.ids, /*causal=*/true);
  Var h = out.last();

  GptDocForward fwd;

  // Label logits live at the response position: the next token after
  // <|Response|> is the label in training prompts.
  Var label_row =
      ad::add_rowvec(ad::matmul(ad::row(h, ex.response_index), mt.p("lm.w")), mt.p("lm.b"));
  Var z_rel = ad::pick(label_row, 0, specials_.relevant);
  Var z_irr = ad::pick(label_row, 0, specials_.irrelevant);
  fwd.predicted_label =
      label_row.value()(0, specials_.relevant) > label_row.value()(0, specials_.irrelevant) ? 1 : 0;

  if (settings_.use_ranking_layer) {
    int pos = ex.response_index;
    if (settings_.ranking_input == RankingInput::kReason && ex.reason_index >= 0) {
      pos = ex.reason_index;
    }
    fwd.score = ad::add(ad::matmul(ad::row(h, pos), mt.p("rank.w")), mt.p("rank.b"));
  } else {
    // p(relevant) - p(irrelevant) under the two-way softmax.
    Var pair = ad::hstack(std::array<Var, 2>{z_rel, z_irr});
    Var probs = ad::softmax_rows(pair);
    fwd.score = ad::sub(ad::pick(probs, 0, 0), ad::pick(probs, 0, 1));
  }

  const bool labeled = ex.label >= 0;
  if (settings_.tasks.clf && labeled) {
    // Two-way cross entropy in closed form: softplus of the wrong-way margin.
    fwd.clf_loss = ad::softplus(ex.label == 1 ? ad::sub(z_irr, z_rel) : ad::sub(z_rel, z_irr));
  }

  if (settings_.tasks.gen && labeled) {
    const int start = settings_.mask_prompt ? ex.response_index : 0;
    const int count = n - 1 - start;  // positions start..n-2 predict ids[t+1]
    if (count <= 0) throw InputError("no generation targets in prompt");
    Var pred = ad::rows(h, start, count);
    Var logp = ad::log_softmax_rows(
        ad::add_rowvec(ad::matmul(pred, mt.p("lm.w")), mt.p("lm.b")));
    Var acc;
    for (int t = 0; t < count; ++t) {
      Var term = ad::pick(logp, t, ex.ids[static_cast<std::size_t>(start + t + 1)]);
      acc = t == 0 ? term : ad::add(acc, term);
    }
    fwd.gen_loss = ad::scale(acc, -1.0 / count);
  }

  return fwd;
}

double RraGpt::score(const Query& query, const Document& doc) const {
  ModelTape mt(params_);
  PromptedExample ex = build_prompt(query, doc);
  return forward_example(mt, ex).score.scalar();
}

std::vector<std::pair<std::string, double>> RraGpt::rank(
    const Query& query, const std::vector<Document>& docs) const {
  std::vector<std::pair<std::string, double>> out;
  out.reserve(docs.size());
  for (const Document& d : docs) out.emplace_back(d.id, score(query, d));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

int RraGpt::classify(const Query& query, const Document& doc) const {
  ModelTape mt(params_);
  PromptedExample ex = build_prompt(query, doc);
  return forward_example(mt, ex).predicted_label;
}

GptJointLoss RraGpt::joint_loss(ModelTape& mt, const Query& query,
                                std::span<const DocTarget> docs) const {
  if (!settings_.tasks.gen && !settings_.tasks.clf && !settings_.tasks.rank) {
    throw ConfigError("decoder training needs at least one task enabled");
  }
  if (docs.empty()) throw InputError("joint loss needs at least one document");

  std::vector<Var> scores;
  std::vector<double> graded;
  Var gen_acc, clf_acc;
  int gen_n = 0, clf_n = 0;
  for (const DocTarget& t : docs) {
    if (t.doc == nullptr) throw InputError("joint loss given a null document");
    PromptedExample ex =
        build_prompt(query, *t.doc, t.binary, settings_.reasoning ? t.reasoning : std::string());
    GptDocForward fwd = forward_example(mt, ex);
    if (fwd.gen_loss.valid()) {
      gen_acc = gen_n == 0 ? fwd.gen_loss : ad::add(gen_acc, fwd.gen_loss);
      ++gen_n;
    }
    if (fwd.clf_loss.valid()) {
      clf_acc = clf_n == 0 ? fwd.clf_loss : ad::add(clf_acc, fwd.clf_loss);
      ++clf_n;
    }
    if (settings_.tasks.rank) {
      scores.push_back(fwd.score);
      graded.push_back(t.graded);
    }
  }

  GptJointLoss out;
  bool have_total = false;
  Var total;
  auto fold = [&](Var term) {
    total = have_total ? ad::add(total, term) : term;
    have_total = true;
  };
  if (gen_n > 0) {
    out.gen = ad::scale(gen_acc, 1.0 / gen_n);
    fold(out.gen);
  }
  if (clf_n > 0) {
    out.clf = ad::scale(clf_acc, 1.0 / clf_n);
    fold(out.clf);
  }
  if (settings_.tasks.rank) {
    std::vector<Var> scaled = min_max_scale_vars(mt.tape(), scores);
    RankNetTerm term = ranknet_loss(mt.tape(), scaled, graded);
    out.rank = term.loss;
    out.rank_pairs = term.pair_count;
    out.rank_degenerate = term.degenerate;
    fold(term.loss);
  }
  if (!have_total) throw InputError("joint loss produced no terms");
  out.total = total;
  return out;
}

std::vector<int> RraGpt::generate_greedy(const std::vector<int>& prompt,
                                         int max_new_tokens) const {
  if (prompt.empty()) throw InputError("cannot generate from an empty prompt");
  std::vector<int> ids = prompt;
  std::vector<int> produced;
  const Mat& lw = params_.at("lm.w");
  const Mat& lb = params_.at("lm.b");
  for (int step = 0; step < max_new_tokens; ++step) {
    if (static_cast<int>(ids.size()) >= config_.max_seq_len) break;
    ModelTape mt(params_);
    TransformerOut out = transformer_forward(mt, config_, ids, /*causal=*/true);
    const Mat& h = out.last().value();
    Mat logits = h.row(h.rows() - 1) * lw + lb;
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v) {
      if (logits(0, v) > logits(0, best)) best = v;  // ties keep the smaller id
    }
    ids.push_back(best);
    produced.push_back(best);
    ++generation_steps_;
  }
  return produced;
}

void RraGpt::save(const std::filesystem::path& path) const {
  CheckpointPayload payload;
  payload.kind = "rra_gpt";
  payload.config = model_config_to_json(config_);
  payload.config["gpt"] = gpt_settings_to_json(settings_);
  payload.vocab = vocab_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    payload.params.add(params_.name(i), params_.value(i));
  }
  save_checkpoint(payload, path);
}

RraGpt RraGpt::load(const std::filesystem::path& path) {
  CheckpointPayload payload = load_checkpoint(path);
  if (payload.kind != "rra_gpt") {
    throw CheckpointKindError("expected an rra_gpt checkpoint, found '" + payload.kind + "' in " +
                              path.string());
  }
  RraGpt model;
  model.config_ = model_config_from_json(payload.config);
  model.settings_ = gpt_settings_from_json(payload.config.at("gpt"));
  model.vocab_ = std::move(payload.vocab);
  if (model.vocab_.size() != model.config_.vocab_size) {
    throw CheckpointConfigError("checkpoint vocabulary size disagrees with its config");
  }
  model.params_ = std::move(payload.params);
  if (model.vocab_.has(SpecialTokens::kResponse)) model.register_special_tokens();
  return model;
}

RraGpt RraGpt::load(const std::filesystem::path& path, const ModelConfig& expected) {
  RraGpt model = load(path);
  if (!(model.config_ == expected)) {
    throw CheckpointConfigError("checkpoint model configuration differs from the expected one: " +
                                path.string());
  }
  return model;
}

}  // namespace rankdistill
