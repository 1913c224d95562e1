#include "prosynth/autodiff.hpp"

namespace ps::ad {

void Graph::backward(Node* loss) {
  if (loss->value.rows() != 1 || loss->value.cols() != 1)
    throw ArgumentError("backward: loss must be a 1x1 node");
  loss->grad = Mat::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.has_grad() && n.backprop) n.backprop();
  }
}

namespace {

inline void check_same_graph(Var a, Var b) {
  if (a.graph != b.graph)
    throw ArgumentError("autodiff: operands from different graphs");
}

inline Var wrap(Graph& g, Node* n) { return Var{&g, n}; }

/// Creates the result node; registers backprop only when a parent needs it.
template <class Fwd, class Bwd>
Var unary(Var a, Fwd&& fwd, Bwd&& bwd) {
  Graph& g = *a.graph;
  Node* out = g.make(fwd(a.value()), a.node->needs_grad);
  if (out->needs_grad) {
    Node* pa = a.node;
    Node* po = out;
    out->backprop = [pa, po, bwd]() { bwd(pa, po); };
  }
  return wrap(g, out);
}

template <class Fwd, class Bwd>
Var binary(Var a, Var b, Fwd&& fwd, Bwd&& bwd) {
  check_same_graph(a, b);
  Graph& g = *a.graph;
  Node* out = g.make(fwd(a.value(), b.value()),
                     a.node->needs_grad || b.node->needs_grad);
  if (out->needs_grad) {
    Node* pa = a.node;
    Node* pb = b.node;
    Node* po = out;
    out->backprop = [pa, pb, po, bwd]() { bwd(pa, pb, po); };
  }
  return wrap(g, out);
}

}  // namespace

Var constant(Graph& g, Mat v) { return wrap(g, g.make(std::move(v), false)); }
Var leaf(Graph& g, Mat v, bool needs_grad) {
  return wrap(g, g.make(std::move(v), needs_grad));
}

Var add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("add: shape mismatch");
  return binary(
      a, b, [](const Mat& x, const Mat& y) { return Mat(x + y); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad);
        Graph::accumulate(pb, po->grad);
      });
}

Var sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("sub: shape mismatch");
  return binary(
      a, b, [](const Mat& x, const Mat& y) { return Mat(x - y); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad);
        Graph::accumulate(pb, -po->grad);
      });
}

Var neg(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(-x); },
      [](Node* pa, Node* po) { Graph::accumulate(pa, -po->grad); });
}

Var mul(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("mul: shape mismatch");
  return binary(
      a, b, [](const Mat& x, const Mat& y) { return Mat(x.cwiseProduct(y)); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad.cwiseProduct(pb->value));
        Graph::accumulate(pb, po->grad.cwiseProduct(pa->value));
      });
}

Var div(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("div: shape mismatch");
  return binary(
      a, b, [](const Mat& x, const Mat& y) { return Mat(x.cwiseQuotient(y)); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad.cwiseQuotient(pb->value));
        Graph::accumulate(
            pb, -(po->grad.cwiseProduct(pa->value))
                     .cwiseQuotient(pb->value.cwiseProduct(pb->value)));
      });
}

Var scale(Var a, double s) {
  return unary(
      a, [s](const Mat& x) { return Mat(s * x); },
      [s](Node* pa, Node* po) { Graph::accumulate(pa, s * po->grad); });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, [c](const Mat& x) { return Mat(x.array() + c); },
      [](Node* pa, Node* po) { Graph::accumulate(pa, po->grad); });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ArgumentError("matmul: inner dim mismatch");
  return binary(
      a, b, [](const Mat& x, const Mat& y) { return Mat(x * y); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad * pb->value.transpose());
        Graph::accumulate(pb, pa->value.transpose() * po->grad);
      });
}

Var transpose(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.transpose()); },
      [](Node* pa, Node* po) { Graph::accumulate(pa, po->grad.transpose()); });
}

Var add_rowvec(Var a, Var b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ArgumentError("add_rowvec: b must be 1 x cols(a)");
  return binary(
      a, b,
      [](const Mat& x, const Mat& y) {
        return Mat(x.rowwise() + y.row(0));
      },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad);
        Graph::accumulate(pb, po->grad.colwise().sum());
      });
}

Var mul_rowvec(Var a, Var b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ArgumentError("mul_rowvec: b must be 1 x cols(a)");
  return binary(
      a, b,
      [](const Mat& x, const Mat& y) {
        return Mat(x.array().rowwise() * y.row(0).array());
      },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, Mat(po->grad.array().rowwise() *
                                  pb->value.row(0).array()));
        Graph::accumulate(
            pb, (po->grad.cwiseProduct(pa->value)).colwise().sum());
      });
}

Var add_colvec(Var a, Var b) {
  if (b.cols() != 1 || b.rows() != a.rows())
    throw ArgumentError("add_colvec: b must be rows(a) x 1");
  return binary(
      a, b,
      [](const Mat& x, const Mat& y) { return Mat(x.colwise() + y.col(0)); },
      [](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad);
        Graph::accumulate(pb, po->grad.rowwise().sum());
      });
}

Var repeat_row(Var a, Index n) {
  if (a.rows() != 1) throw ArgumentError("repeat_row: input must be 1 x C");
  return unary(
      a,
      [n](const Mat& x) {
        Mat out(n, x.cols());
        out.rowwise() = x.row(0);
        return out;
      },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, po->grad.colwise().sum());
      });
}

Var sum(Var a) {
  return unary(
      a,
      [](const Mat& x) {
        Mat out(1, 1);
        out(0, 0) = x.sum();
        return out;
      },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, Mat::Constant(pa->value.rows(), pa->value.cols(),
                                            po->grad(0, 0)));
      });
}

Var mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return unary(
      a,
      [](const Mat& x) {
        Mat out(1, 1);
        out(0, 0) = x.mean();
        return out;
      },
      [inv](Node* pa, Node* po) {
        Graph::accumulate(pa, Mat::Constant(pa->value.rows(), pa->value.cols(),
                                            po->grad(0, 0) * inv));
      });
}

Var exp_(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().exp()); },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, po->grad.cwiseProduct(po->value));
      });
}

Var log_(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().log()); },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, po->grad.cwiseQuotient(pa->value));
      });
}

Var tanh_(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().tanh()); },
      [](Node* pa, Node* po) {
        Graph::accumulate(
            pa, po->grad.cwiseProduct(
                    Mat(1.0 - po->value.array().square())));
      });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](const Mat& x) {
        return Mat((1.0 / (1.0 + (-x.array()).exp())));
      },
      [](Node* pa, Node* po) {
        Graph::accumulate(
            pa, po->grad.cwiseProduct(
                    Mat(po->value.array() * (1.0 - po->value.array()))));
      });
}

Var relu(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.cwiseMax(0.0)); },
      [](Node* pa, Node* po) {
        Graph::accumulate(
            pa, po->grad.cwiseProduct(
                    Mat((pa->value.array() > 0.0).cast<double>())));
      });
}

Var leaky_relu(Var a, double alpha) {
  return unary(
      a,
      [alpha](const Mat& x) {
        return Mat(x.array().max(alpha * x.array()));
      },
      [alpha](Node* pa, Node* po) {
        Mat slope = (pa->value.array() > 0.0).cast<double>() * (1.0 - alpha) + alpha;
        Graph::accumulate(pa, po->grad.cwiseProduct(slope));
      });
}

Var abs_(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.cwiseAbs()); },
      [](Node* pa, Node* po) {
        Mat sign = (pa->value.array() > 0.0).cast<double>() -
                   (pa->value.array() < 0.0).cast<double>();
        Graph::accumulate(pa, po->grad.cwiseProduct(sign));
      });
}

Var square(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().square()); },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, 2.0 * po->grad.cwiseProduct(pa->value));
      });
}

Var sqrt_(Var a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().sqrt()); },
      [](Node* pa, Node* po) {
        Graph::accumulate(pa, 0.5 * po->grad.cwiseQuotient(po->value));
      });
}

Var gather_rows(Var a, std::vector<int> idx) {
  Graph& g = *a.graph;
  Mat out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0)
      out.row(static_cast<Index>(i)).setZero();
    else if (idx[i] >= a.rows())
      throw ArgumentError("gather_rows: index out of range");
    else
      out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  Node* o = g.make(std::move(out), a.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = a.node;
    o->backprop = [pa, o, idx = std::move(idx)]() {
      if (!pa->needs_grad) return;
      if (!pa->has_grad()) pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) pa->grad.row(idx[i]) += o->grad.row(static_cast<Index>(i));
    };
  }
  return wrap(g, o);
}

Var gather_flat(Var a, Eigen::MatrixXi index_map) {
  Graph& g = *a.graph;
  const Index total = a.rows() * a.cols();
  Mat out(index_map.rows(), index_map.cols());
  const double* src = a.value().data();
  for (Index c = 0; c < index_map.cols(); ++c)
    for (Index r = 0; r < index_map.rows(); ++r) {
      const int id = index_map(r, c);
      if (id >= total) throw ArgumentError("gather_flat: index out of range");
      out(r, c) = id < 0 ? 0.0 : src[id];
    }
  Node* o = g.make(std::move(out), a.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = a.node;
    o->backprop = [pa, o, map = std::move(index_map)]() {
      if (!pa->needs_grad) return;
      if (!pa->has_grad()) pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
      double* dst = pa->grad.data();
      for (Index c = 0; c < map.cols(); ++c)
        for (Index r = 0; r < map.rows(); ++r) {
          const int id = map(r, c);
          if (id >= 0) dst[id] += o->grad(r, c);
        }
    };
  }
  return wrap(g, o);
}

Var straight_through(Var grad_target, Mat value) {
  if (grad_target.rows() != value.rows() || grad_target.cols() != value.cols())
    throw ArgumentError("straight_through: shape mismatch");
  Graph& g = *grad_target.graph;
  Node* o = g.make(std::move(value), grad_target.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = grad_target.node;
    o->backprop = [pa, o]() { Graph::accumulate(pa, o->grad); };
  }
  return Var{&g, o};
}

Var hstack(Var a, Var b) {
  if (a.rows() != b.rows()) throw ArgumentError("hstack: row mismatch");
  const Index ca = a.cols();
  return binary(
      a, b,
      [](const Mat& x, const Mat& y) {
        Mat out(x.rows(), x.cols() + y.cols());
        out << x, y;
        return out;
      },
      [ca](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad.leftCols(ca));
        Graph::accumulate(pb, po->grad.rightCols(po->grad.cols() - ca));
      });
}

Var vstack(Var a, Var b) {
  if (a.cols() != b.cols()) throw ArgumentError("vstack: col mismatch");
  const Index ra = a.rows();
  return binary(
      a, b,
      [](const Mat& x, const Mat& y) {
        Mat out(x.rows() + y.rows(), x.cols());
        out << x, y;
        return out;
      },
      [ra](Node* pa, Node* pb, Node* po) {
        Graph::accumulate(pa, po->grad.topRows(ra));
        Graph::accumulate(pb, po->grad.bottomRows(po->grad.rows() - ra));
      });
}

Var slice_cols(Var a, Index c0, Index n) {
  if (c0 < 0 || c0 + n > a.cols()) throw ArgumentError("slice_cols: out of range");
  return unary(
      a, [c0, n](const Mat& x) { return Mat(x.middleCols(c0, n)); },
      [c0, n](Node* pa, Node* po) {
        if (!pa->needs_grad) return;
        if (!pa->has_grad()) pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
        pa->grad.middleCols(c0, n) += po->grad;
      });
}

Var slice_rows(Var a, Index r0, Index n) {
  if (r0 < 0 || r0 + n > a.rows()) throw ArgumentError("slice_rows: out of range");
  return unary(
      a, [r0, n](const Mat& x) { return Mat(x.middleRows(r0, n)); },
      [r0, n](Node* pa, Node* po) {
        if (!pa->needs_grad) return;
        if (!pa->has_grad()) pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
        pa->grad.middleRows(r0, n) += po->grad;
      });
}

Var stop_gradient(Var a) { return constant(*a.graph, a.value()); }

Var softmax_rows(Var a) {
  return unary(
      a,
      [](const Mat& x) {
        Mat out(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
          const double m = x.row(r).maxCoeff();
          Eigen::ArrayXd e = (x.row(r).array() - m).exp();
          out.row(r) = (e / e.sum()).matrix();
        }
        return out;
      },
      [](Node* pa, Node* po) {
        Mat dx(po->value.rows(), po->value.cols());
        for (Index r = 0; r < po->value.rows(); ++r) {
          const double dot = po->grad.row(r).dot(po->value.row(r));
          dx.row(r) =
              (po->value.row(r).array() * (po->grad.row(r).array() - dot))
                  .matrix();
        }
        Graph::accumulate(pa, dx);
      });
}

Var layer_norm_rows(Var a, double eps) {
  Graph& g = *a.graph;
  const Index cols = a.cols();
  Mat out(a.rows(), cols);
  Vec inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    Eigen::RowVectorXd d = a.value().row(r).array() - mu;
    const double var = d.squaredNorm() / static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(r) = inv;
    out.row(r) = d * inv;
  }
  Node* o = g.make(std::move(out), a.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = a.node;
    o->backprop = [pa, o, inv_std = std::move(inv_std), cols]() {
      Mat dx(o->value.rows(), cols);
      for (Index r = 0; r < o->value.rows(); ++r) {
        const auto gr = o->grad.row(r);
        const auto yr = o->value.row(r);
        const double gmean = gr.mean();
        const double gymean = gr.cwiseProduct(yr).mean();
        dx.row(r) =
            (inv_std(r) * (gr.array() - gmean - yr.array() * gymean)).matrix();
      }
      Graph::accumulate(pa, dx);
    };
  }
  return wrap(g, o);
}

Var batch_norm_cols(Var a, double eps, RowVec* mean_out, RowVec* var_out) {
  Graph& g = *a.graph;
  const Index rows = a.rows();
  if (rows < 2) throw ArgumentError("batch_norm_cols: needs >= 2 rows");
  RowVec mu = a.value().colwise().mean();
  Mat centered = a.value().rowwise() - mu;
  RowVec var = centered.array().square().colwise().mean();
  RowVec inv_std = (var.array() + eps).rsqrt();
  Mat out = centered.array().rowwise() * inv_std.array();
  if (mean_out) *mean_out = mu;
  if (var_out) *var_out = var;
  Node* o = g.make(std::move(out), a.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = a.node;
    o->backprop = [pa, o, inv_std = std::move(inv_std), rows]() {
      // Standard batch-norm backward per column.
      (void)rows;
      const Mat& y = o->value;
      const Mat& gy = o->grad;
      RowVec gmean = gy.colwise().mean();
      RowVec gymean = gy.cwiseProduct(y).colwise().mean();
      Mat dx = gy.rowwise() - gmean;
      dx -= (y.array().rowwise() * gymean.array()).matrix();
      dx = (dx.array().rowwise() * inv_std.array()).matrix();
      Graph::accumulate(pa, dx);
    };
  }
  return wrap(g, o);
}

Var box_filter_valid(Var a, int k) {
  if (k < 1 || k > a.rows() || k > a.cols())
    throw ArgumentError("box_filter_valid: window larger than input");
  Graph& g = *a.graph;
  const Index orows = a.rows() - k + 1;
  const Index ocols = a.cols() - k + 1;
  const double inv = 1.0 / (static_cast<double>(k) * k);
  Mat out(orows, ocols);
  for (Index i = 0; i < orows; ++i)
    for (Index j = 0; j < ocols; ++j)
      out(i, j) = a.value().block(i, j, k, k).sum() * inv;
  Node* o = g.make(std::move(out), a.node->needs_grad);
  if (o->needs_grad) {
    Node* pa = a.node;
    o->backprop = [pa, o, k, inv]() {
      if (!pa->needs_grad) return;
      if (!pa->has_grad()) pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
      for (Index i = 0; i < o->value.rows(); ++i)
        for (Index j = 0; j < o->value.cols(); ++j)
          pa->grad.block(i, j, k, k).array() += o->grad(i, j) * inv;
    };
  }
  return wrap(g, o);
}

}  // namespace ps::ad
