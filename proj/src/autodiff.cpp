#include "rankdistill/autodiff.hpp"

#include <cmath>

#include "rankdistill/errors.hpp"

namespace rankdistill::ad {

const Mat& Var::value() const { return tape->value(index); }
const Mat& Var::grad() const { return tape->grad(index); }
double Var::scalar() const { return value()(0, 0); }

Var Tape::leaf(Mat value, std::string op) { return make(std::move(value), std::move(op)); }

Var Tape::make(Mat value, std::string op) {
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_pull(Var v, std::function<void(Tape&)> pull) {
  nodes_[static_cast<std::size_t>(v.index)].pull = std::move(pull);
}

void Tape::backward(Var root) {
  if (backward_done_) throw InputError("tape backward called twice");
  if (root.tape != this) throw InputError("backward root belongs to a different tape");
  const Mat& rv = value(root.index);
  if (rv.rows() != 1 || rv.cols() != 1) throw InputError("backward root must be a 1x1 node");
  for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  nodes_[static_cast<std::size_t>(root.index)].grad(0, 0) = 1.0;
  for (int i = root.index; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.pull) n.pull(*this);
  }
  backward_done_ = true;
}

std::vector<int> Tape::nodes_with_op(std::string_view op) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (nodes_[static_cast<std::size_t>(i)].op == op) out.push_back(i);
  }
  return out;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw InputError("operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.value().cols() != b.value().rows()) throw InputError("matmul: inner dimension mismatch");
  Var out = t.make(a.value() * b.value(), "matmul");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    tp.grad_ref(ia) += g * tp.value(ib).transpose();
    tp.grad_ref(ib) += tp.value(ia).transpose() * g;
  });
  return out;
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.value().cols() != b.value().cols()) throw InputError("matmul_nt: inner dimension mismatch");
  Var out = t.make(a.value() * b.value().transpose(), "matmul_nt");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    tp.grad_ref(ia) += g * tp.value(ib);
    tp.grad_ref(ib) += g.transpose() * tp.value(ia);
  });
  return out;
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Var out = t.make(a.value() + b.value(), "add");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    tp.grad_ref(ia) += tp.grad(io);
    tp.grad_ref(ib) += tp.grad(io);
  });
  return out;
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Var out = t.make(a.value() - b.value(), "sub");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    tp.grad_ref(ia) += tp.grad(io);
    tp.grad_ref(ib) -= tp.grad(io);
  });
  return out;
}

Var add_rowvec(Var a, Var rowv) {
  Tape& t = same_tape(a, rowv);
  if (rowv.value().rows() != 1 || rowv.value().cols() != a.value().cols()) {
    throw InputError("add_rowvec: row vector shape mismatch");
  }
  Mat v = a.value();
  v.rowwise() += rowv.value().row(0);
  Var out = t.make(std::move(v), "add_rowvec");
  int ia = a.index, ir = rowv.index, io = out.index;
  t.set_pull(out, [ia, ir, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    tp.grad_ref(ia) += g;
    tp.grad_ref(ir) += g.colwise().sum();
  });
  return out;
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Var out = t.make(a.value() * c, "scale");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, c](Tape& tp) { tp.grad_ref(ia) += c * tp.grad(io); });
  return out;
}

Var add_const(Var a, const Mat& c) {
  Tape& t = *a.tape;
  require_same_shape(a.value(), c, "add_const");
  Var out = t.make(a.value() + c, "add_const");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) { tp.grad_ref(ia) += tp.grad(io); });
  return out;
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  Var out = t.make(a.value().cwiseProduct(b.value()), "hadamard");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
    tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
  });
  return out;
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "div");
  Var out = t.make(a.value().cwiseQuotient(b.value()), "div");
  int ia = a.index, ib = b.index, io = out.index;
  t.set_pull(out, [ia, ib, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    const Mat& bv = tp.value(ib);
    tp.grad_ref(ia) += g.cwiseQuotient(bv);
    tp.grad_ref(ib) -= g.cwiseProduct(tp.value(io)).cwiseQuotient(bv);
  });
  return out;
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Mat y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  Var out = t.make(std::move(y), "softmax");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    const Mat& yv = tp.value(io);
    Mat& ga = tp.grad_ref(ia);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      double dot = g.row(r).dot(yv.row(r));
      ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(yv.row(r));
    }
  });
  return out;
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  Mat y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double mx = y.row(r).maxCoeff();
    double lse = mx + std::log((y.row(r).array() - mx).exp().sum());
    y.row(r).array() -= lse;
  }
  Var out = t.make(std::move(y), "log_softmax");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) {
    const Mat& g = tp.grad(io);
    const Mat& yv = tp.value(io);
    Mat& ga = tp.grad_ref(ia);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      double gsum = g.row(r).sum();
      ga.row(r) += g.row(r) - gsum * yv.row(r).array().exp().matrix();
    }
  });
  return out;
}

Var layer_norm_rows(Var a, Var gamma, Var beta, double eps) {
  Tape& t = *a.tape;
  same_tape(a, gamma);
  same_tape(a, beta);
  const Mat& x = a.value();
  const Eigen::Index n = x.cols();
  if (gamma.value().cols() != n || beta.value().cols() != n || gamma.value().rows() != 1 ||
      beta.value().rows() != 1) {
    throw InputError("layer_norm: gamma/beta must be 1 x cols");
  }
  Mat xhat(x.rows(), n);
  Eigen::VectorXd sinv(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(n);
    double si = 1.0 / std::sqrt(var + eps);
    sinv(r) = si;
    xhat.row(r) = (x.row(r).array() - mu) * si;
  }
  Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
          beta.value().row(0).array();
  Var out = t.make(std::move(y), "layer_norm");
  int ia = a.index, ig = gamma.index, ib = beta.index, io = out.index;
  // caches move into the closure
  t.set_pull(out, [ia, ig, ib, io, xhat = std::move(xhat), sinv = std::move(sinv)](Tape& tp) {
    const Mat& g = tp.grad(io);
    const Eigen::Index n2 = g.cols();
    const Mat& gam = tp.value(ig);
    tp.grad_ref(ib) += g.colwise().sum();
    tp.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
    Mat& ga = tp.grad_ref(ia);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gam.row(0));
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      ga.row(r) +=
          sinv(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
      (void)n2;
    }
  });
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Var gelu(Var a) {
  Tape& t = *a.tape;
  const Mat& x = a.value();
  Mat y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  Var out = t.make(std::move(y), "gelu");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) {
    const Mat& xv = tp.value(ia);
    Mat d = xv.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
             v * std::exp(-0.5 * v * v) * kInvSqrt2Pi;
    });
    tp.grad_ref(ia) += tp.grad(io).cwiseProduct(d);
  });
  return out;
}

Var softplus(Var a) {
  Tape& t = *a.tape;
  const Mat& x = a.value();
  Mat y = x.array().max(0.0) + (-x.array().abs()).exp().log1p();
  Var out = t.make(std::move(y), "softplus");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) {
    const Mat& xv = tp.value(ia);
    Mat sig = 1.0 / (1.0 + (-xv.array()).exp());
    tp.grad_ref(ia) += tp.grad(io).cwiseProduct(sig);
  });
  return out;
}

Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  const Mat& x = a.value();
  Mat y(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.rows()) throw InputError("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
  }
  Var out = t.make(std::move(y), "gather_rows");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, idx = std::move(idx)](Tape& tp) {
    const Mat& g = tp.grad(io);
    Mat& ga = tp.grad_ref(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    }
  });
  return out;
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("vstack: empty input");
  Tape& t = *parts[0].tape;
  Eigen::Index total = 0;
  const Eigen::Index ncols = parts[0].value().cols();
  for (const auto& p : parts) {
    if (p.tape != &t) throw InputError("vstack: operands on different tapes");
    if (p.value().cols() != ncols) throw InputError("vstack: column mismatch");
    total += p.value().rows();
  }
  Mat y(total, ncols);
  std::vector<int> srcs;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.value().rows()) = p.value();
    srcs.push_back(p.index);
    offsets.push_back(at);
    at += p.value().rows();
  }
  Var out = t.make(std::move(y), "vstack");
  int io = out.index;
  t.set_pull(out, [io, srcs = std::move(srcs), offsets = std::move(offsets)](Tape& tp) {
    const Mat& g = tp.grad(io);
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      Mat& gs = tp.grad_ref(srcs[i]);
      gs += g.middleRows(offsets[i], gs.rows());
    }
  });
  return out;
}

Var hstack(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("hstack: empty input");
  Tape& t = *parts[0].tape;
  Eigen::Index total = 0;
  const Eigen::Index nrows = parts[0].value().rows();
  for (const auto& p : parts) {
    if (p.tape != &t) throw InputError("hstack: operands on different tapes");
    if (p.value().rows() != nrows) throw InputError("hstack: row mismatch");
    total += p.value().cols();
  }
  Mat y(nrows, total);
  std::vector<int> srcs;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.value().cols()) = p.value();
    srcs.push_back(p.index);
    offsets.push_back(at);
    at += p.value().cols();
  }
  Var out = t.make(std::move(y), "hstack");
  int io = out.index;
  t.set_pull(out, [io, srcs = std::move(srcs), offsets = std::move(offsets)](Tape& tp) {
    const Mat& g = tp.grad(io);
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      Mat& gs = tp.grad_ref(srcs[i]);
      gs += g.middleCols(offsets[i], gs.cols());
    }
  });
  return out;
}

Var rows(Var a, int start, int count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.value().rows()) {
    throw InputError("rows: slice out of range");
  }
  Var out = t.make(a.value().middleRows(start, count), "rows");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, start, count](Tape& tp) {
    tp.grad_ref(ia).middleRows(start, count) += tp.grad(io);
  });
  return out;
}

Var cols(Var a, int start, int count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.value().cols()) {
    throw InputError("cols: slice out of range");
  }
  Var out = t.make(a.value().middleCols(start, count), "cols");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, start, count](Tape& tp) {
    tp.grad_ref(ia).middleCols(start, count) += tp.grad(io);
  });
  return out;
}

Var row(Var a, int r) { return rows(a, r, 1); }

Var pick(Var a, int r, int c) {
  Tape& t = *a.tape;
  if (r < 0 || r >= a.value().rows() || c < 0 || c >= a.value().cols()) {
    throw InputError("pick: index out of range");
  }
  Mat y(1, 1);
  y(0, 0) = a.value()(r, c);
  Var out = t.make(std::move(y), "pick");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, r, c](Tape& tp) { tp.grad_ref(ia)(r, c) += tp.grad(io)(0, 0); });
  return out;
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  Var out = t.make(std::move(y), "sum_all");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io](Tape& tp) {
    tp.grad_ref(ia).array() += tp.grad(io)(0, 0);
  });
  return out;
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const double m = static_cast<double>(a.value().rows());
  Var out = t.make(a.value().colwise().mean(), "mean_rows");
  int ia = a.index, io = out.index;
  t.set_pull(out, [ia, io, m](Tape& tp) {
    const Mat& g = tp.grad(io);
    tp.grad_ref(ia) += (g / m).replicate(tp.value(ia).rows(), 1);
  });
  return out;
}

namespace {

Var vext(std::span<const Var> scalars, bool want_min) {
  if (scalars.empty()) throw InputError("vmin/vmax: empty input");
  Tape& t = *scalars[0].tape;
  int best = 0;
  double bestv = scalars[0].scalar();
  for (std::size_t i = 1; i < scalars.size(); ++i) {
    double v = scalars[i].scalar();
    if (want_min ? v < bestv : v > bestv) {
      bestv = v;
      best = static_cast<int>(i);
    }
  }
  Mat y(1, 1);
  y(0, 0) = bestv;
  Var out = t.make(std::move(y), want_min ? "vmin" : "vmax");
  int isrc = scalars[static_cast<std::size_t>(best)].index, io = out.index;
  t.set_pull(out, [isrc, io](Tape& tp) { tp.grad_ref(isrc)(0, 0) += tp.grad(io)(0, 0); });
  return out;
}

}  // namespace

Var vmin(std::span<const Var> scalars) { return vext(scalars, true); }
Var vmax(std::span<const Var> scalars) { return vext(scalars, false); }

}  // namespace rankdistill::ad
