#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "prosynth/common.hpp"

namespace ps::ad {

// Define-by-run reverse-mode automatic differentiation over dense matrices.
// A Graph owns the nodes of one forward pass; creation order is the
// topological order, so backward() is a single reverse sweep. Graphs are
// built per training step and discarded.

class Graph;

struct Node {
  Mat value;
  Mat grad;  // allocated on first accumulation
  bool needs_grad = false;
  std::function<void()> backprop;  // accumulates into parent grads

  bool has_grad() const { return grad.size() > 0; }
};

class Graph {
 public:
  Node* make(Mat value, bool needs_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    return &n;
  }

  static void accumulate(Node* n, const Mat& g) {
    if (!n->needs_grad) return;
    if (!n->has_grad()) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
    n->grad += g;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must
  /// be 1x1.
  void backward(Node* loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;  // stable addresses
};

/// Lightweight handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  Node* node = nullptr;

  const Mat& value() const { return node->value; }
  const Mat& grad() const { return node->grad; }
  Index rows() const { return node->value.rows(); }
  Index cols() const { return node->value.cols(); }
  double scalar() const { return node->value(0, 0); }
};

Var constant(Graph& g, Mat v);
Var leaf(Graph& g, Mat v, bool needs_grad = true);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);  // elementwise
Var div(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);

// Row-vector broadcasts: b is 1 x C, applied to every row of a.
Var add_rowvec(Var a, Var b);
Var mul_rowvec(Var a, Var b);
/// Column-vector broadcast: b is R x 1, added to every column of a.
Var add_colvec(Var a, Var b);
/// Replicates a 1 x C row n times.
Var repeat_row(Var a, Index n);

Var sum(Var a);   // 1x1
Var mean(Var a);  // 1x1

Var exp_(Var a);
Var log_(Var a);
Var tanh_(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double alpha);
Var abs_(Var a);
Var square(Var a);
Var sqrt_(Var a);

/// Row gather; index -1 yields a zero row. Backward scatter-adds.
Var gather_rows(Var a, std::vector<int> idx);
/// Element gather by flat column-major index into a's storage; -1 yields 0.
Var gather_flat(Var a, Eigen::MatrixXi index_map);

/// Carries `value` forward unchanged (bit-exact) while routing gradients to
/// `grad_target` as the identity.
Var straight_through(Var grad_target, Mat value);

Var hstack(Var a, Var b);
Var vstack(Var a, Var b);
Var slice_cols(Var a, Index c0, Index n);
Var slice_rows(Var a, Index r0, Index n);
Var stop_gradient(Var a);

Var softmax_rows(Var a);
/// Row-wise zero-mean unit-variance normalization (no affine).
Var layer_norm_rows(Var a, double eps = 1e-5);
/// Column-wise batch normalization over all rows (training mode). The
/// per-column mean and variance used are written to *mean/*var when given.
Var batch_norm_cols(Var a, double eps, RowVec* mean_out = nullptr,
                    RowVec* var_out = nullptr);
/// k x k uniform box filter, valid region only (output (R-k+1) x (C-k+1)).
Var box_filter_valid(Var a, int k);

}  // namespace ps::ad
