#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankdistill/autodiff.hpp"

namespace rankdistill {

using ad::Mat;

struct ModelConfig {
  int vocab_size = 0;
  int d_hidden = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 64;
  int ffn_multiplier = 4;

  void validate() const;  // positive fields, n_heads divides d_hidden
  bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors in a stable order. Gradients and optimizer state
// align with this order by index.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat value);  // error on duplicate name
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int index_of(const std::string& name) const;  // -1 when absent

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat& value(std::size_t i) { return values_[i]; }
  const Mat& value(std::size_t i) const { return values_[i]; }

  bool all_finite() const;
  std::size_t coordinate_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, int> index_;
};

using GradStore = std::vector<Mat>;  // aligned with ParamStore order

// One loss evaluation: a tape plus memoized leafs for the parameters it
// touches. After backward(), grads() exports d(loss)/d(param) for every
// parameter (zeros for untouched ones).
class ModelTape {
 public:
  explicit ModelTape(const ParamStore& params) : params_(&params) {}

  ad::Tape& tape() { return tape_; }
  ad::Var p(const std::string& name);
  bool touched(const std::string& name) const { return leafs_.count(name) > 0; }
  bool touched_prefix(std::string_view prefix) const;
  GradStore grads() const;  // requires backward() to have run

 private:
  ad::Tape tape_;
  const ParamStore* params_;
  std::unordered_map<std::string, ad::Var> leafs_;
};

// --- parameter initialization ---------------------------------------------

// Xavier-uniform weights, zero biases, unit layer-norm gains. Embedding rows
// are uniform in [-1/sqrt(d), 1/sqrt(d)]. Uses only uniform draws so results
// are identical across platforms for a given seed.
void init_transformer_params(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed);
void init_linear(ParamStore& params, const std::string& prefix, int d_in, int d_out,
                 class RandomSource& rng);
void init_attention_params(ParamStore& params, const std::string& prefix, int d,
                           class RandomSource& rng);

// --- forward passes --------------------------------------------------------

struct TransformerOut {
  std::vector<ad::Var> levels;  // levels[0] = embeddings + positions; levels[i] = block i output;
                                // levels[n_layers] = final layer norm output
  bool truncated = false;
  std::vector<int> ids;  // ids actually consumed (after any truncation)

  ad::Var last() const { return levels.back(); }
};

// Pre-LN transformer over the given token ids. causal=true masks attention
// to the prefix (decoder); false is bidirectional (encoder). Inputs longer
// than max_seq_len are truncated from the tail with the flag set.
TransformerOut transformer_forward(ModelTape& mt, const ModelConfig& cfg,
                                   std::span<const int> ids, bool causal);

// Word-embedding rows only (no positions); out-of-range ids are an error.
ad::Var embed_tokens(ModelTape& mt, const ModelConfig& cfg, std::span<const int> ids);

// Standalone multi-head self-attention over x (m x d) with explicit weights.
ad::Var multi_head_attention(ad::Var x, ad::Var wq, ad::Var bq, ad::Var wk, ad::Var bk, ad::Var wv,
                             ad::Var bv, ad::Var wo, ad::Var bo, int n_heads, bool causal);

// Attention using parameters under `prefix` (wq/bq/wk/bk/wv/bv/wo/bo).
ad::Var attention_from_params(ModelTape& mt, const std::string& prefix, ad::Var x, int n_heads,
                              bool causal);

ad::Var clf_head(ModelTape& mt, ad::Var h_row);  // params clf.w (d x 1), clf.b -> 1x1
ad::Var lm_head(ModelTape& mt, ad::Var h);       // params lm.w (d x V), lm.b -> rows x V

// --- optimizer --------------------------------------------------------------

class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const GradStore& grads);

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

// --- gradient verification ---------------------------------------------------

struct GradCheckViolation {
  std::string param;
  int row = 0, col = 0;
  double analytic = 0, central = 0, rel_err = 0;
};

struct GradCheckReport {
  bool passed = false;
  int coords_checked = 0;
  double max_rel_err = 0;
  std::vector<GradCheckViolation> violations;
};

// loss(params, grads): returns the loss; when grads != nullptr also fills
// analytic gradients. The checker perturbs a seeded sample of coordinates
// (up to max_coords_per_tensor from each tensor), compares analytic against
// central differences (f(x+eps) - f(x-eps)) / (2 eps), and flags coordinates
// where |analytic - central| / max(1, |central|) >= tol.
using LossFn = std::function<double(ParamStore&, GradStore*)>;
GradCheckReport grad_check(const LossFn& loss, ParamStore& params, double eps, double tol,
                           int max_coords_per_tensor, std::uint64_t seed);

}  // namespace rankdistill
