#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rankdistill/nn.hpp"
#include "rankdistill/text.hpp"

namespace rankdistill {

// [CLS] query [SEP] document, with span bookkeeping. Over-length inputs
// lose document tokens first, never query tokens.
struct EncoderInput {
  std::vector<int> token_ids;
  int query_begin = 1;  // query span [query_begin, sep_index)
  int sep_index = 0;
  int doc_begin = 0;    // doc span [doc_begin, token_ids.size())
  bool truncated = false;

  int query_len() const { return sep_index - query_begin; }
  int doc_len() const { return static_cast<int>(token_ids.size()) - doc_begin; }
};

EncoderInput build_encoder_input(std::span<const int> query_ids, std::span<const int> doc_ids,
                                 const Vocabulary& vocab, int max_seq_len);

// Per query token, the k document positions with the largest raw
// dot-product similarity between word-embedding rows (ties to the smaller
// position). The union over query tokens, with duplicate token ids
// collapsed to their first (leftmost) document position, ascending.
std::vector<int> token_select(const Mat& query_emb, const Mat& doc_emb,
                              std::span<const int> doc_token_ids, int k, bool cosine = false);

struct BertSettings {
  int k = 3;           // selections per query token
  double alpha = 0.3;  // weight of the term-control score
  int tcl_heads = 8;   // desired; effective count shrinks for narrow models
  bool use_tcl_at_inference = true;
  bool cosine_token_select = false;
};

// Effective head count: keeps the requested heads for d_hidden >= 64 when
// they divide it, otherwise halves until the width divides cleanly with at
// least 8 dims per head. Sets *warned when it had to shrink.
int effective_tcl_heads(int requested, int d_hidden, bool* warned = nullptr);

// Encoder ranker: relevance = clf(h_cls) + alpha * clf(tcl(h_selected)_cls)
// with one shared scoring head. The term-control layer is a separate
// attention block over [CLS], query, [SEP] and the selected document rows
// of the final hidden states; it can be dropped at inference.
class RraBert {
 public:
  RraBert(ModelConfig config, BertSettings settings, Vocabulary vocab, std::uint64_t seed);

  // training path: score as a tape node
  ad::Var score_on_tape(ModelTape& mt, std::span<const int> query_ids,
                        std::span<const int> doc_ids, bool use_tcl) const;

  double score(std::span<const int> query_ids, std::span<const int> doc_ids, bool use_tcl) const;

  // docs sorted by score descending, doc-id ascending on ties
  std::vector<std::pair<std::string, double>> rank(const Query& query,
                                                   const std::vector<Document>& docs,
                                                   bool use_tcl) const;

  const ModelConfig& config() const { return config_; }
  const BertSettings& settings() const { return settings_; }
  // Deploy-time switch: the TCL branch can be dropped at serving without
  // retraining. Affects rank()/validation defaults, not training.
  void set_use_tcl_at_inference(bool on) { settings_.use_tcl_at_inference = on; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  long tcl_evaluations() const { return tcl_evaluations_; }
  void reset_counters() const { tcl_evaluations_ = 0; }
  bool tcl_head_warning() const { return tcl_head_warning_; }

  void save(const std::filesystem::path& path) const;
  static RraBert load(const std::filesystem::path& path);
  static RraBert load(const std::filesystem::path& path, const ModelConfig& expected);

 private:
  RraBert() = default;

  ModelConfig config_;
  BertSettings settings_;
  Vocabulary vocab_;
  ParamStore params_;
  int tcl_heads_effective_ = 0;
  bool tcl_head_warning_ = false;
  mutable long tcl_evaluations_ = 0;
};

// score_base + alpha * score_tcl when use_tcl, else score_base.
double combine_scores(double score_base, double score_tcl, double alpha, bool use_tcl);

struct RankNetTerm {
  ad::Var loss;
  int pair_count = 0;
  bool degenerate = false;  // no ordered pairs (all labels equal)
};

// Mean over ordered pairs (i, j) with label_i > label_j of
// log(1 + exp(-(s_i - s_j))). Zero (with the flag) when no such pair exists.
RankNetTerm ranknet_loss(ad::Tape& tape, std::span<const ad::Var> scores,
                         std::span<const double> labels);

// Plain-number twin of ranknet_loss for evaluation and oracle comparisons.
double ranknet_loss_value(std::span<const double> scores, std::span<const double> labels);

}  // namespace rankdistill
