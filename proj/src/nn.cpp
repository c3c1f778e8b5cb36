#include "rankdistill/nn.hpp"

#include <cmath>

#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"

namespace rankdistill {

using ad::Var;

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_hidden <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0 ||
      ffn_multiplier <= 0) {
    throw ConfigError("model config fields must be positive");
  }
  if (d_hidden % n_heads != 0) {
    throw ConfigError("n_heads must divide d_hidden");
  }
}

Mat& ParamStore::add(const std::string& name, Mat value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, static_cast<int>(values_.size()));
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

Mat& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return values_[static_cast<std::size_t>(it->second)];
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return values_[static_cast<std::size_t>(it->second)];
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

bool ParamStore::all_finite() const {
  for (const auto& m : values_) {
    if (!m.allFinite()) return false;
  }
  return true;
}

std::size_t ParamStore::coordinate_count() const {
  std::size_t n = 0;
  for (const auto& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

Var ModelTape::p(const std::string& name) {
  auto it = leafs_.find(name);
  if (it != leafs_.end()) return it->second;
  Var v = tape_.leaf(params_->at(name), "param:" + name);
  leafs_.emplace(name, v);
  return v;
}

bool ModelTape::touched_prefix(std::string_view prefix) const {
  for (const auto& [name, var] : leafs_) {
    (void)var;
    if (name.size() >= prefix.size() && std::string_view(name).substr(0, prefix.size()) == prefix) {
      return true;
    }
  }
  return false;
}

GradStore ModelTape::grads() const {
  if (!tape_.backward_done()) throw InputError("grads requested before backward");
  GradStore g(params_->size());
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto it = leafs_.find(params_->name(i));
    if (it == leafs_.end()) {
      g[i] = Mat::Zero(params_->value(i).rows(), params_->value(i).cols());
    } else {
      g[i] = it->second.grad();
    }
  }
  return g;
}

namespace {

Mat xavier_uniform(int rows, int cols, RandomSource& rng) {
  double a = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-a, a);
  }
  return m;
}

}  // namespace

void init_linear(ParamStore& params, const std::string& prefix, int d_in, int d_out,
                 RandomSource& rng) {
  params.add(prefix + ".w", xavier_uniform(d_in, d_out, rng));
  params.add(prefix + ".b", Mat::Zero(1, d_out));
}

void init_attention_params(ParamStore& params, const std::string& prefix, int d,
                           RandomSource& rng) {
  for (const char* name : {"wq", "wk", "wv", "wo"}) {
    params.add(prefix + "." + name, xavier_uniform(d, d, rng));
  }
  for (const char* name : {"bq", "bk", "bv", "bo"}) {
    params.add(prefix + "." + name, Mat::Zero(1, d));
  }
}

void init_transformer_params(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomSource rng(derive_seed(seed, "init"));
  const int d = cfg.d_hidden;
  double ea = 1.0 / std::sqrt(static_cast<double>(d));
  Mat emb(cfg.vocab_size, d);
  for (Eigen::Index r = 0; r < emb.rows(); ++r) {
    for (Eigen::Index c = 0; c < emb.cols(); ++c) emb(r, c) = rng.uniform(-ea, ea);
  }
  params.add("embed.word", std::move(emb));
  Mat pos(cfg.max_seq_len, d);
  for (Eigen::Index r = 0; r < pos.rows(); ++r) {
    for (Eigen::Index c = 0; c < pos.cols(); ++c) pos(r, c) = rng.uniform(-ea, ea);
  }
  params.add("embed.pos", std::move(pos));

  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string pre = "block" + std::to_string(l);
    params.add(pre + ".ln1.g", Mat::Ones(1, d));
    params.add(pre + ".ln1.b", Mat::Zero(1, d));
    init_attention_params(params, pre + ".attn", d, rng);
    params.add(pre + ".ln2.g", Mat::Ones(1, d));
    params.add(pre + ".ln2.b", Mat::Zero(1, d));
    init_linear(params, pre + ".ffn1", d, d * cfg.ffn_multiplier, rng);
    init_linear(params, pre + ".ffn2", d * cfg.ffn_multiplier, d, rng);
  }
  params.add("ln_f.g", Mat::Ones(1, d));
  params.add("ln_f.b", Mat::Zero(1, d));
}

Var embed_tokens(ModelTape& mt, const ModelConfig& cfg, std::span<const int> ids) {
  std::vector<int> idx;
  idx.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw InputError("token id out of embedding range: " + std::to_string(id));
    }
    idx.push_back(id);
  }
  return ad::gather_rows(mt.p("embed.word"), std::move(idx));
}

Var multi_head_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo,
                         int n_heads, bool causal) {
  const int d = static_cast<int>(x.value().cols());
  if (n_heads <= 0 || d % n_heads != 0) throw ConfigError("attention heads must divide width");
  const int hd = d / n_heads;
  const int m = static_cast<int>(x.value().rows());

  Var q = ad::add_rowvec(ad::matmul(x, wq), bq);
  Var k = ad::add_rowvec(ad::matmul(x, wk), bk);
  Var v = ad::add_rowvec(ad::matmul(x, wv), bv);

  Mat mask;
  if (causal) {
    mask = Mat::Zero(m, m);
    for (int r = 0; r < m; ++r) {
      for (int c = r + 1; c < m; ++c) mask(r, c) = -1e9;
    }
  }

  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var qh = ad::cols(q, h * hd, hd);
    Var kh = ad::cols(k, h * hd, hd);
    Var vh = ad::cols(v, h * hd, hd);
    Var scores = ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd)));
    if (causal) scores = ad::add_const(scores, mask);
    Var probs = ad::softmax_rows(scores);
    heads.push_back(ad::matmul(probs, vh));
  }
  Var concat = ad::hstack(heads);
  return ad::add_rowvec(ad::matmul(concat, wo), bo);
}

Var attention_from_params(ModelTape& mt, const std::string& prefix, Var x, int n_heads,
                          bool causal) {
  return multi_head_attention(x, mt.p(prefix + ".wq"), mt.p(prefix + ".bq"), mt.p(prefix + ".wk"),
                              mt.p(prefix + ".bk"), mt.p(prefix + ".wv"), mt.p(prefix + ".bv"),
                              mt.p(prefix + ".wo"), mt.p(prefix + ".bo"), n_heads, causal);
}

TransformerOut transformer_forward(ModelTape& mt, const ModelConfig& cfg, std::span<const int> ids,
                                   bool causal) {
  if (ids.empty()) throw InputError("transformer input must be nonempty");
  TransformerOut out;
  if (static_cast<int>(ids.size()) > cfg.max_seq_len) {
    out.truncated = true;
    ids = ids.subspan(0, static_cast<std::size_t>(cfg.max_seq_len));
  }
  out.ids.assign(ids.begin(), ids.end());

  Var e = embed_tokens(mt, cfg, ids);
  Var pos = ad::rows(mt.p("embed.pos"), 0, static_cast<int>(ids.size()));
  Var x = ad::add(e, pos);
  out.levels.push_back(x);

  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string pre = "block" + std::to_string(l);
    Var normed = ad::layer_norm_rows(x, mt.p(pre + ".ln1.g"), mt.p(pre + ".ln1.b"));
    Var att = attention_from_params(mt, pre + ".attn", normed, cfg.n_heads, causal);
    x = ad::add(x, att);
    Var normed2 = ad::layer_norm_rows(x, mt.p(pre + ".ln2.g"), mt.p(pre + ".ln2.b"));
    Var h1 = ad::gelu(ad::add_rowvec(ad::matmul(normed2, mt.p(pre + ".ffn1.w")), mt.p(pre + ".ffn1.b")));
    Var h2 = ad::add_rowvec(ad::matmul(h1, mt.p(pre + ".ffn2.w")), mt.p(pre + ".ffn2.b"));
    x = ad::add(x, h2);
    out.levels.push_back(x);
  }
  // The final level is the last block's stream after the closing norm, so
  // levels has n_layers + 1 entries and last() is what heads consume.
  out.levels.back() = ad::layer_norm_rows(x, mt.p("ln_f.g"), mt.p("ln_f.b"));
  return out;
}

Var clf_head(ModelTape& mt, Var h_row) {
  return ad::add(ad::matmul(h_row, mt.p("clf.w")), mt.p("clf.b"));
}

Var lm_head(ModelTape& mt, Var h) {
  return ad::add_rowvec(ad::matmul(h, mt.p("lm.w")), mt.p("lm.b"));
}

void AdamW::step(ParamStore& params, const GradStore& grads) {
  if (grads.size() != params.size()) throw InputError("gradient store misaligned with parameters");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Mat::Zero(params.value(i).rows(), params.value(i).cols());
      v_[i] = Mat::Zero(params.value(i).rows(), params.value(i).cols());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    params.value(i).array() -=
        lr_ * (mhat.array() / (vhat.array().sqrt() + eps_) + wd_ * params.value(i).array());
  }
}

GradCheckReport grad_check(const LossFn& loss, ParamStore& params, double eps, double tol,
                           int max_coords_per_tensor, std::uint64_t seed) {
  GradStore analytic;
  loss(params, &analytic);
  if (analytic.size() != params.size()) {
    throw InputError("loss function returned misaligned gradients");
  }

  RandomSource rng(derive_seed(seed, "grad-check"));
  GradCheckReport report;
  report.passed = true;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Mat& tensor = params.value(pi);
    const std::size_t n = static_cast<std::size_t>(tensor.size());
    if (n == 0) continue;
    std::vector<std::size_t> coords;
    if (n <= static_cast<std::size_t>(max_coords_per_tensor)) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords = rng.sample_without_replacement(n, static_cast<std::size_t>(max_coords_per_tensor));
    }
    for (std::size_t flat : coords) {
      const Eigen::Index r = static_cast<Eigen::Index>(flat) % tensor.rows();
      const Eigen::Index c = static_cast<Eigen::Index>(flat) / tensor.rows();
      const double saved = tensor(r, c);
      tensor(r, c) = saved + eps;
      const double up = loss(params, nullptr);
      tensor(r, c) = saved - eps;
      const double down = loss(params, nullptr);
      tensor(r, c) = saved;
      const double central = (up - down) / (2.0 * eps);
      const double a = analytic[pi](r, c);
      const double rel = std::abs(a - central) / std::max(1.0, std::abs(central));
      ++report.coords_checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel >= tol || !std::isfinite(rel)) {
        report.passed = false;
        report.violations.push_back({params.name(pi), static_cast<int>(r), static_cast<int>(c), a,
                                     central, rel});
      }
    }
  }
  return report;
}

}  // namespace rankdistill
