#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rankdistill::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a tape node. Cheap to copy; values and gradients live on the tape.
struct Var {
  Tape* tape = nullptr;
  int index = -1;

  bool valid() const { return tape != nullptr && index >= 0; }
  const Mat& value() const;
  const Mat& grad() const;
  double scalar() const;  // value()(0,0); node must be 1x1
};

// Reverse-mode tape over dense double matrices. Nodes are appended in
// evaluation order; backward() walks them in reverse, each node adding into
// its parents' gradients. One tape per loss evaluation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, std::string op = "leaf");
  Var make(Mat value, std::string op);
  void set_pull(Var v, std::function<void(Tape&)> pull);

  // Seeds d(root)/d(root) = 1 and accumulates gradients for every node.
  // root must be 1x1. May be called once per tape.
  void backward(Var root);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Mat& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
  const Mat& grad(int i) const { return nodes_[static_cast<std::size_t>(i)].grad; }
  Mat& grad_ref(int i) { return nodes_[static_cast<std::size_t>(i)].grad; }
  const std::string& op(int i) const { return nodes_[static_cast<std::size_t>(i)].op; }
  bool backward_done() const { return backward_done_; }

  std::vector<int> nodes_with_op(std::string_view op) const;

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::string op;
    std::function<void(Tape&)> pull;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// --- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);     // A * B
Var matmul_nt(Var a, Var b);  // A * B^T
Var add(Var a, Var b);        // same shape
Var sub(Var a, Var b);
Var add_rowvec(Var a, Var row);       // broadcast 1 x n over rows
Var scale(Var a, double c);
Var add_const(Var a, const Mat& c);   // constant offset (e.g. attention mask)
Var hadamard(Var a, Var b);
Var div(Var a, Var b);                // elementwise
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var a);      // exact erf form
Var softplus(Var a);  // log(1 + e^x), overflow-safe
Var gather_rows(Var a, std::vector<int> idx);
Var vstack(std::span<const Var> parts);
Var hstack(std::span<const Var> parts);
Var rows(Var a, int start, int count);
Var cols(Var a, int start, int count);
Var row(Var a, int r);
Var pick(Var a, int r, int c);  // 1x1
Var sum_all(Var a);             // 1x1
Var mean_rows(Var a);           // 1 x cols, column means
Var vmin(std::span<const Var> scalars);  // subgradient to first arg-min
Var vmax(std::span<const Var> scalars);

}  // namespace rankdistill::ad
