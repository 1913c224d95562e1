#include <doctest.h>

#include "prosynth/autodiff.hpp"
#include "prosynth/nn.hpp"
#include "test_support.hpp"

using namespace ps;
using ad::Var;
using testsupport::grad_check;
using testsupport::grad_check_values;

TEST_CASE("elementwise and arithmetic op gradients") {
  Rng rng(7);
  const Mat x = rng.normal_matrix(5, 4);
  const Mat other = rng.normal_matrix(5, 4);

  auto with_const = [&](std::function<Var(ad::Graph&, Var, Var)> f) {
    return [f, &other](ad::Graph& g, Var x) {
      Var c = ad::constant(g, other);
      return ad::mean(f(g, x, c));
    };
  };

  CHECK(grad_check(with_const([](ad::Graph&, Var a, Var b) { return ad::add(a, b); }), x) < 1e-6);
  CHECK(grad_check(with_const([](ad::Graph&, Var a, Var b) { return ad::sub(a, b); }), x) < 1e-6);
  CHECK(grad_check(with_const([](ad::Graph&, Var a, Var b) { return ad::mul(a, b); }), x) < 1e-6);
  CHECK(grad_check(with_const([](ad::Graph&, Var a, Var b) {
          return ad::div(a, ad::add_scalar(ad::square(b), 1.0));
        }), x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::mean(ad::exp_(a)); }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) {
          return ad::mean(ad::log_(ad::add_scalar(ad::square(a), 1.0)));
        }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::mean(ad::tanh_(a)); }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::mean(ad::sigmoid(a)); }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::sum(ad::square(a)); }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) {
          return ad::mean(ad::sqrt_(ad::add_scalar(ad::square(a), 0.5)));
        }, x) < 1e-6);
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::mean(ad::leaky_relu(a, 0.2)); },
                   x) < 1e-4);  // kink at 0 never hit by this data
  CHECK(grad_check([](ad::Graph&, Var a) { return ad::mean(ad::abs_(a)); }, x) < 1e-4);
}

TEST_CASE("matmul, transpose, broadcast gradients") {
  Rng rng(11);
  const Mat x = rng.normal_matrix(4, 3);
  const Mat w = rng.normal_matrix(3, 5);
  const Mat b = rng.normal_matrix(1, 5);

  CHECK(grad_check([&](ad::Graph& g, Var a) {
          return ad::mean(ad::square(ad::matmul(a, ad::constant(g, w))));
        }, x) < 1e-6);
  CHECK(grad_check([&](ad::Graph& g, Var a) {
          return ad::mean(ad::matmul(ad::constant(g, w.transpose()), ad::transpose(a)));
        }, x) < 1e-6);
  CHECK(grad_check([&](ad::Graph& g, Var a) {
          Var y = ad::add_rowvec(ad::matmul(a, ad::constant(g, w)), ad::constant(g, b));
          return ad::mean(ad::square(y));
        }, x) < 1e-6);
  // Gradient w.r.t. the broadcast row itself.
  CHECK(grad_check([&](ad::Graph& g, Var bias) {
          Var y = ad::add_rowvec(ad::constant(g, x * w), bias);
          return ad::mean(ad::square(y));
        }, b) < 1e-6);
  CHECK(grad_check([&](ad::Graph& g, Var bias) {
          Var y = ad::mul_rowvec(ad::constant(g, x * w), bias);
          return ad::mean(ad::square(y));
        }, b) < 1e-6);
  CHECK(grad_check([&](ad::Graph&, Var row) {
          return ad::mean(ad::square(ad::repeat_row(row, 6)));
        }, b) < 1e-6);
}

TEST_CASE("structural op gradients") {
  Rng rng(13);
  const Mat x = rng.normal_matrix(6, 4);

  std::vector<int> idx = {2, 2, 0, -1, 5, 3, 1};
  CHECK(grad_check([&](ad::Graph&, Var a) {
          return ad::mean(ad::square(ad::gather_rows(a, idx)));
        }, x) < 1e-6);

  Eigen::MatrixXi map(3, 5);
  int k = 0;
  for (int c = 0; c < 5; ++c)
    for (int r = 0; r < 3; ++r) map(r, c) = (k++ % 7 == 0) ? -1 : (k * 3) % 24;
  CHECK(grad_check([&](ad::Graph&, Var a) {
          return ad::mean(ad::square(ad::gather_flat(a, map)));
        }, x) < 1e-6);

  CHECK(grad_check([&](ad::Graph& g, Var a) {
          Var s = ad::hstack(a, ad::constant(g, Mat::Ones(6, 2)));
          s = ad::vstack(s, ad::constant(g, Mat::Ones(1, 6)));
          return ad::mean(ad::square(s));
        }, x) < 1e-6);
  CHECK(grad_check([&](ad::Graph&, Var a) {
          return ad::mean(ad::square(ad::slice_cols(a, 1, 2)));
        }, x) < 1e-6);
  CHECK(grad_check([&](ad::Graph&, Var a) {
          return ad::mean(ad::square(ad::slice_rows(a, 2, 3)));
        }, x) < 1e-6);
}

TEST_CASE("fused op gradients: softmax, layer norm, batch norm, box filter") {
  Rng rng(17);
  const Mat x = rng.normal_matrix(5, 6);
  const Mat probe = rng.normal_matrix(5, 6);

  CHECK(grad_check([&](ad::Graph& g, Var a) {
          Var s = ad::softmax_rows(a);
          return ad::mean(ad::mul(s, ad::constant(g, probe)));
        }, x) < 1e-5);
  CHECK(grad_check([&](ad::Graph& g, Var a) {
          Var y = ad::layer_norm_rows(a);
          return ad::mean(ad::mul(y, ad::constant(g, probe)));
        }, x) < 1e-5);
  CHECK(grad_check([&](ad::Graph& g, Var a) {
          Var y = ad::batch_norm_cols(a, 1e-5);
          return ad::mean(ad::mul(y, ad::constant(g, probe)));
        }, x) < 1e-5);

  const Mat img = rng.normal_matrix(9, 10);
  CHECK(grad_check([&](ad::Graph&, Var a) {
          return ad::mean(ad::square(ad::box_filter_valid(a, 3)));
        }, img) < 1e-6);
}

TEST_CASE("stop_gradient blocks flow") {
  Rng rng(3);
  const Mat x = rng.normal_matrix(3, 3);
  ad::Graph g;
  Var a = ad::leaf(g, x, true);
  Var loss = ad::mean(ad::square(ad::stop_gradient(a)));
  g.backward(loss.node);
  CHECK_FALSE(a.node->has_grad());
}

TEST_CASE("gradient accumulates when a node is used twice") {
  Mat x(1, 1);
  x << 3.0;
  ad::Graph g;
  Var a = ad::leaf(g, x, true);
  Var loss = ad::sum(ad::mul(a, a));  // d/da (a*a) = 2a
  g.backward(loss.node);
  CHECK(a.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("nn layers: parameter gradients match finite differences") {
  Rng rng(23);
  nn::ParamRegistry reg;
  nn::Conv1d conv(reg, "conv", 3, 4, 5, rng);
  nn::SelfAttention attn(reg, "attn", 4, 2, rng);
  nn::LayerNorm ln(reg, "ln", 4);
  const Mat x = rng.normal_matrix(7, 3);
  const Mat target = rng.normal_matrix(7, 4);

  auto loss_with = [&](const Mat& wval, nn::Parameter* which) {
    const Mat saved = which->value;
    const_cast<nn::Parameter*>(which)->value = wval;
    ad::Graph g;
    nn::Binder bind(g);
    Var h = conv.forward(bind, ad::constant(g, x));
    h = attn.forward(bind, h);
    h = ln.forward(bind, h);
    Var loss = ad::mean(ad::square(ad::sub(h, ad::constant(g, target))));
    const double v = loss.scalar();
    const_cast<nn::Parameter*>(which)->value = saved;
    return v;
  };

  // Analytic gradients in one pass.
  reg.zero_grad();
  ad::Graph g;
  nn::Binder bind(g);
  Var h = conv.forward(bind, ad::constant(g, x));
  h = attn.forward(bind, h);
  h = ln.forward(bind, h);
  Var loss = ad::mean(ad::square(ad::sub(h, ad::constant(g, target))));
  g.backward(loss.node);
  bind.harvest();

  for (const char* pname : {"conv.w", "conv.b", "attn.wq.w", "attn.wo.b",
                            "ln.gamma", "ln.beta"}) {
    nn::Parameter* p = reg.find(pname);
    REQUIRE(p != nullptr);
    const double err = grad_check_values(
        [&](const Mat& v) { return loss_with(v, p); }, p->value, p->grad, 1e-6);
    INFO("parameter ", pname);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("batch norm layer: train vs eval modes") {
  Rng rng(29);
  nn::ParamRegistry reg;
  nn::BatchNorm bn(reg, "bn", 3);
  const Mat x = rng.normal_matrix(20, 3, 2.0);

  {
    ad::Graph g;
    nn::Binder bind(g);
    Var y = bn.forward(bind, ad::constant(g, x), true);
    // Normalized output has ~zero mean, ~unit variance per column.
    RowVec mu = y.value().colwise().mean();
    CHECK(mu.cwiseAbs().maxCoeff() < 1e-12);
  }
  {
    ad::Graph g;
    nn::Binder bind(g);
    Var y = bn.forward(bind, ad::constant(g, x), false);
    CHECK(y.value().allFinite());
  }
}

TEST_CASE("FftBlock forward is deterministic in eval mode") {
  Rng rng(31);
  nn::ParamRegistry reg;
  nn::FftBlock block(reg, "blk", 8, 16, 5, 2, rng);
  const Mat x = rng.normal_matrix(6, 8);
  ad::Graph g1, g2;
  nn::Binder b1(g1), b2(g2);
  Mat y1 = block.forward(b1, ad::constant(g1, x), false, nullptr).value();
  Mat y2 = block.forward(b2, ad::constant(g2, x), false, nullptr).value();
  CHECK((y1 - y2).cwiseAbs().maxCoeff() == 0.0);
}
