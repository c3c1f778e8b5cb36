#include "rankdistill/rra_bert.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rankdistill/checkpoint.hpp"
#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"

namespace rankdistill {

using ad::Var;

EncoderInput build_encoder_input(std::span<const int> query_ids, std::span<const int> doc_ids,
                                 const Vocabulary& vocab, int max_seq_len) {
  if (query_ids.empty()) throw InputError("encoder input requires a nonempty query");
  EncoderInput in;
  int q_len = static_cast<int>(query_ids.size());
  // scaffold is [CLS] + query + [SEP]; the query is only cut when it alone
  // cannot fit, documents absorb all other overflow
  if (q_len + 2 > max_seq_len) {
    q_len = max_seq_len - 2;
    if (q_len < 1) throw InputError("max_seq_len too small for any query token");
    in.truncated = true;
  }
  int d_len = static_cast<int>(doc_ids.size());
  if (q_len + 2 + d_len > max_seq_len) {
    d_len = max_seq_len - q_len - 2;
    in.truncated = true;
  }
  in.token_ids.push_back(vocab.cls_id());
  in.token_ids.insert(in.token_ids.end(), query_ids.begin(), query_ids.begin() + q_len);
  in.sep_index = static_cast<int>(in.token_ids.size());
  in.token_ids.push_back(vocab.sep_id());
  in.doc_begin = static_cast<int>(in.token_ids.size());
  in.token_ids.insert(in.token_ids.end(), doc_ids.begin(), doc_ids.begin() + d_len);
  return in;
}

std::vector<int> token_select(const Mat& query_emb, const Mat& doc_emb,
                              std::span<const int> doc_token_ids, int k, bool cosine) {
  if (k <= 0) throw ConfigError("token_select requires k > 0");
  if (doc_emb.rows() != static_cast<Eigen::Index>(doc_token_ids.size())) {
    throw InputError("token_select: doc embedding rows must match doc token count");
  }
  if (query_emb.rows() == 0 || doc_emb.rows() == 0) return {};

  // per-pair dot products, not a GEMM: the blocked product sums in a
  // different order per output column, so identical embedding rows (the
  // same token twice) would miss the exact tie the position rule needs
  Mat sim(query_emb.rows(), doc_emb.rows());
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    const double qn = cosine ? query_emb.row(i).norm() : 0.0;
    for (Eigen::Index j = 0; j < sim.cols(); ++j) {
      double s = query_emb.row(i).dot(doc_emb.row(j));
      if (cosine) {
        const double dn = doc_emb.row(j).norm();
        s = (qn > 0 && dn > 0) ? s / (qn * dn) : 0.0;
      }
      sim(i, j) = s;
    }
  }

  const int m = static_cast<int>(doc_emb.rows());
  const int kk = std::min(k, m);
  std::vector<bool> selected(static_cast<std::size_t>(m), false);
  std::vector<int> order(static_cast<std::size_t>(m));
  for (Eigen::Index qi = 0; qi < sim.rows(); ++qi) {
    std::iota(order.begin(), order.end(), 0);
    // ties go to the smaller document position
    std::stable_sort(order.begin(), order.end(), [&sim, qi](int a, int b) {
      return sim(qi, a) > sim(qi, b);
    });
    for (int j = 0; j < kk; ++j) selected[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = true;
  }

  // collapse duplicate token ids to their leftmost selected position
  std::map<int, int> first_pos;
  for (int p = 0; p < m; ++p) {
    if (!selected[static_cast<std::size_t>(p)]) continue;
    const int tok = doc_token_ids[static_cast<std::size_t>(p)];
    auto it = first_pos.find(tok);
    if (it == first_pos.end() || p < it->second) first_pos.emplace(tok, p);
  }
  std::vector<int> out;
  out.reserve(first_pos.size());
  for (const auto& [tok, pos] : first_pos) {
    (void)tok;
    out.push_back(pos);
  }
  std::sort(out.begin(), out.end());
  return out;
}

int effective_tcl_heads(int requested, int d_hidden, bool* warned) {
  if (warned) *warned = false;
  int heads = requested;
  while (heads > 1 && (d_hidden % heads != 0 || d_hidden / heads < 8)) heads /= 2;
  if (d_hidden % heads != 0) heads = 1;
  if (heads != requested && warned) *warned = true;
  return heads;
}

double combine_scores(double score_base, double score_tcl, double alpha, bool use_tcl) {
  return use_tcl ? score_base + alpha * score_tcl : score_base;
}

RraBert::RraBert(ModelConfig config, BertSettings settings, Vocabulary vocab, std::uint64_t seed)
    : config_(std::move(config)), settings_(settings), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw ConfigError("model vocab_size disagrees with the vocabulary");
  }
  config_.validate();
  tcl_heads_effective_ = effective_tcl_heads(settings_.tcl_heads, config_.d_hidden,
                                             &tcl_head_warning_);

  init_transformer_params(params_, config_, seed);
  RandomSource rng(derive_seed(seed, "bert-heads"));
  init_linear(params_, "clf", config_.d_hidden, 1, rng);
  init_attention_params(params_, "tcl", config_.d_hidden, rng);
}

Var RraBert::score_on_tape(ModelTape& mt, std::span<const int> query_ids,
                           std::span<const int> doc_ids, bool use_tcl) const {
  EncoderInput in = build_encoder_input(query_ids, doc_ids, vocab_, config_.max_seq_len);
  TransformerOut enc = transformer_forward(mt, config_, in.token_ids, /*causal=*/false);
  Var h = enc.last();
  Var s_base = clf_head(mt, ad::row(h, 0));
  if (!use_tcl) return s_base;

  ++tcl_evaluations_;
  // selection uses the current input-embedding rows; it is an index
  // computation, gradients flow only through the gathered hidden states
  const Mat& emb = params_.at("embed.word");
  Mat q_emb(in.query_len(), config_.d_hidden);
  for (int i = 0; i < in.query_len(); ++i) {
    q_emb.row(i) = emb.row(in.token_ids[static_cast<std::size_t>(in.query_begin + i)]);
  }
  const int d_len = in.doc_len();
  Mat d_emb(d_len, config_.d_hidden);
  std::vector<int> doc_tokens(static_cast<std::size_t>(d_len));
  for (int i = 0; i < d_len; ++i) {
    doc_tokens[static_cast<std::size_t>(i)] = in.token_ids[static_cast<std::size_t>(in.doc_begin + i)];
    d_emb.row(i) = emb.row(doc_tokens[static_cast<std::size_t>(i)]);
  }
  std::vector<int> sel =
      d_len > 0 ? token_select(q_emb, d_emb, doc_tokens, settings_.k, settings_.cosine_token_select)
                : std::vector<int>{};

  std::vector<int> rows_idx;
  rows_idx.push_back(0);  // [CLS]
  for (int i = 0; i < in.query_len(); ++i) rows_idx.push_back(in.query_begin + i);
  rows_idx.push_back(in.sep_index);
  for (int p : sel) rows_idx.push_back(in.doc_begin + p);

  Var h_t = ad::gather_rows(h, rows_idx);
  Var mixed = multi_head_attention(h_t, mt.p("tcl.wq"), mt.p("tcl.bq"), mt.p("tcl.wk"),
                                   mt.p("tcl.bk"), mt.p("tcl.wv"), mt.p("tcl.bv"), mt.p("tcl.wo"),
                                   mt.p("tcl.bo"), tcl_heads_effective_, /*causal=*/false);
  Var s_tcl = clf_head(mt, ad::row(mixed, 0));
  return ad::add(s_base, ad::scale(s_tcl, settings_.alpha));
}

double RraBert::score(std::span<const int> query_ids, std::span<const int> doc_ids,
                      bool use_tcl) const {
  ModelTape mt(params_);
  return score_on_tape(mt, query_ids, doc_ids, use_tcl).scalar();
}

std::vector<std::pair<std::string, double>> RraBert::rank(const Query& query,
                                                          const std::vector<Document>& docs,
                                                          bool use_tcl) const {
  if (docs.empty()) throw InputError("rank: empty document list");
  std::vector<std::pair<std::string, double>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    std::vector<int> doc_ids = d.token_ids.empty() ? tokenize(d.text, vocab_) : d.token_ids;
    std::vector<int> q_ids = query.token_ids.empty() ? tokenize(query.text, vocab_) : query.token_ids;
    out.emplace_back(d.id, score(q_ids, doc_ids, use_tcl));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

namespace {

nlohmann::json bert_settings_to_json(const BertSettings& s) {
  return {{"k", s.k},
          {"alpha", s.alpha},
          {"tcl_heads", s.tcl_heads},
          {"use_tcl_at_inference", s.use_tcl_at_inference},
          {"cosine_token_select", s.cosine_token_select}};
}

BertSettings bert_settings_from_json(const nlohmann::json& j) {
  BertSettings s;
  s.k = j.at("k").get<int>();
  s.alpha = j.at("alpha").get<double>();
  s.tcl_heads = j.at("tcl_heads").get<int>();
  s.use_tcl_at_inference = j.at("use_tcl_at_inference").get<bool>();
  s.cosine_token_select = j.at("cosine_token_select").get<bool>();
  return s;
}

}  // namespace

void RraBert::save(const std::filesystem::path& path) const {
  CheckpointPayload payload;
  payload.kind = "rra_bert";
  payload.config = model_config_to_json(config_);
  payload.config["bert"] = bert_settings_to_json(settings_);
  payload.vocab = vocab_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    payload.params.add(params_.name(i), params_.value(i));
  }
  save_checkpoint(payload, path);
}

RraBert RraBert::load(const std::filesystem::path& path) {
  CheckpointPayload payload = load_checkpoint(path);
  if (payload.kind != "rra_bert") {
    throw CheckpointKindError("expected an rra_bert checkpoint, found '" + payload.kind + "' in " +
                              path.string());
  }
  RraBert model;
  model.config_ = model_config_from_json(payload.config);
  model.settings_ = bert_settings_from_json(payload.config.at("bert"));
  model.vocab_ = std::move(payload.vocab);
  if (model.vocab_.size() != model.config_.vocab_size) {
    throw CheckpointConfigError("checkpoint vocabulary size disagrees with its config");
  }
  model.params_ = std::move(payload.params);
  model.tcl_heads_effective_ =
      effective_tcl_heads(model.settings_.tcl_heads, model.config_.d_hidden,
                          &model.tcl_head_warning_);
  return model;
}

RraBert RraBert::load(const std::filesystem::path& path, const ModelConfig& expected) {
  RraBert model = load(path);
  if (!(model.config_ == expected)) {
    throw CheckpointConfigError("checkpoint model configuration differs from the expected one: " +
                                path.string());
  }
  return model;
}

RankNetTerm ranknet_loss(ad::Tape& tape, std::span<const Var> scores,
                         std::span<const double> labels) {
  if (scores.size() != labels.size()) throw InputError("ranknet: scores/labels length mismatch");
  RankNetTerm term;
  Var acc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] <= labels[j]) continue;
      Var pair_loss = ad::softplus(ad::sub(scores[j], scores[i]));
      acc = term.pair_count == 0 ? pair_loss : ad::add(acc, pair_loss);
      ++term.pair_count;
    }
  }
  if (term.pair_count == 0) {
    term.loss = tape.leaf(Mat::Zero(1, 1), "ranknet_degenerate");
    term.degenerate = true;
    return term;
  }
  term.loss = ad::scale(acc, 1.0 / term.pair_count);
  return term;
}

double ranknet_loss_value(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw InputError("ranknet: scores/labels length mismatch");
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] <= labels[j]) continue;
      const double x = scores[j] - scores[i];
      sum += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      ++pairs;
    }
  }
  return pairs ? sum / pairs : 0.0;
}

}  // namespace rankdistill
