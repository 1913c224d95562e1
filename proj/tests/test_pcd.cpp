#include <doctest.h>

#include "prosynth/pcd.hpp"
#include "test_support.hpp"

using namespace ps;
using ad::Var;

namespace {

PcdConfig tiny_pcd() {
  PcdConfig cfg;
  cfg.windows.lengths = {4, 8};
  cfg.n_mels = 6;
  cfg.d_z = 5;
  cfg.channels = {2, 3, 4};
  cfg.fc1 = 8;
  cfg.fc2 = 4;
  return cfg;
}

}  // namespace

TEST_CASE("clip_windows") {
  Rng rng(71);
  WindowSpec spec;  // {32, 64, 128}

  SUBCASE("40 frames produce only the 32-window") {
    const Mat mel = rng.normal_matrix(40, 8);
    const Mat pros = rng.normal_matrix(40, 4);
    auto windows = clip_windows(mel, pros, spec, rng);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].spec_index == 0);
    CHECK(windows[0].mel_window.rows() == 32);
    CHECK(windows[0].pros_window.rows() == 32);
  }

  SUBCASE("exactly 128 frames pins the 128-window to start 0") {
    const Mat mel = rng.normal_matrix(128, 8);
    const Mat pros = rng.normal_matrix(128, 4);
    auto windows = clip_windows(mel, pros, spec, rng);
    REQUIRE(windows.size() == 3);
    CHECK(windows[2].start == 0);
  }

  SUBCASE("fixed seed reproduces the same starts") {
    const Mat mel = rng.normal_matrix(150, 8);
    const Mat pros = rng.normal_matrix(150, 4);
    Rng a(5), b(5);
    auto wa = clip_windows(mel, pros, spec, a);
    auto wb = clip_windows(mel, pros, spec, b);
    REQUIRE(wa.size() == wb.size());
    for (std::size_t i = 0; i < wa.size(); ++i) CHECK(wa[i].start == wb[i].start);
  }

  SUBCASE("never reads out of bounds for random lengths 1..200") {
    Rng lens(6);
    for (int trial = 0; trial < 60; ++trial) {
      const Index frames = 1 + static_cast<Index>(lens.uniform_int(200));
      const Mat mel = Mat::Zero(frames, 3);
      const Mat pros = Mat::Zero(frames, 2);
      auto windows = clip_windows(mel, pros, spec, lens);
      for (const auto& w : windows) {
        CHECK(w.start >= 0);
        CHECK(w.start + w.mel_window.rows() <= frames);
        CHECK(static_cast<Index>(spec.lengths[w.spec_index]) ==
              w.mel_window.rows());
      }
    }
  }

  SUBCASE("mismatched frame counts rejected") {
    CHECK_THROWS_AS(clip_windows(Mat::Zero(10, 3), Mat::Zero(9, 2), spec, rng),
                    ArgumentError);
  }
}

TEST_CASE("discriminator scores: shape, conditional sensitivity") {
  const PcdConfig cfg = tiny_pcd();
  PcdSet pcd(cfg, 73);
  Rng rng(74);

  SUBCASE("batch of B windows gives B scores") {
    ad::Graph g;
    nn::Binder bind(g);
    std::vector<Mat> mels, pros;
    for (int b = 0; b < 3; ++b) {
      mels.push_back(rng.normal_matrix(4, cfg.n_mels));
      pros.push_back(rng.normal_matrix(4, cfg.d_z));
    }
    Var scores = pcd.discriminate(bind, 0, mels, pros, false);
    CHECK(scores.rows() == 3);
    CHECK(scores.cols() == 1);
  }

  SUBCASE("score responds to the prosody channel") {
    std::vector<Mat> mels = {rng.normal_matrix(8, cfg.n_mels)};
    std::vector<Mat> pros = {rng.normal_matrix(8, cfg.d_z)};
    std::vector<Mat> permuted = {Mat(pros[0].colwise().reverse())};
    ad::Graph g;
    nn::Binder bind(g);
    const double s1 = pcd.discriminate(bind, 1, mels, pros, false).scalar();
    const double s2 = pcd.discriminate(bind, 1, mels, permuted, false).scalar();
    CHECK(s1 != s2);
  }

  SUBCASE("shape mismatch rejected") {
    ad::Graph g;
    nn::Binder bind(g);
    std::vector<Mat> mels = {rng.normal_matrix(4, cfg.n_mels)};
    std::vector<Mat> pros = {rng.normal_matrix(5, cfg.d_z)};
    CHECK_THROWS_AS(pcd.discriminate(bind, 0, mels, pros, false), ArgumentError);
  }
}

TEST_CASE("lsgan objectives") {
  ad::Graph g;
  auto scores = [&](double v, Index n) {
    return ad::constant(g, Mat::Constant(n, 1, v));
  };

  SUBCASE("discriminator optimum: real 1, fake 0") {
    auto l = lsgan_losses(g, {scores(1.0, 4)}, {scores(0.0, 4)});
    CHECK(l.d_loss.scalar() == doctest::Approx(0.0));
  }
  SUBCASE("generator optimum: fake 1") {
    auto l = lsgan_losses(g, {scores(1.0, 4)}, {scores(1.0, 4)});
    CHECK(l.g_loss.scalar() == doctest::Approx(0.0));
  }
  SUBCASE("scalar 0.5/0.5 case") {
    auto l = lsgan_losses(g, {scores(0.5, 1)}, {scores(0.5, 1)});
    CHECK(l.d_loss.scalar() == doctest::Approx(0.5));
    CHECK(l.g_loss.scalar() == doctest::Approx(0.25));
  }
  SUBCASE("losses are non-negative and L_D = 0 only at the optimum") {
    Rng rng(75);
    for (int trial = 0; trial < 20; ++trial) {
      auto real = ad::constant(g, rng.normal_matrix(3, 1));
      auto fake = ad::constant(g, rng.normal_matrix(3, 1));
      auto l = lsgan_losses(g, {real}, {fake});
      CHECK(l.d_loss.scalar() >= 0.0);
      CHECK(l.g_loss.scalar() >= 0.0);
      const bool at_optimum = (real.value().array() == 1.0).all() &&
                              (fake.value().array() == 0.0).all();
      if (l.d_loss.scalar() == 0.0) CHECK(at_optimum);
    }
  }

  SUBCASE("gradients w.r.t. scores match finite differences at 8x8") {
    Rng rng(76);
    const Mat real0 = rng.normal_matrix(8, 8);
    const Mat fake0 = rng.normal_matrix(8, 8);
    // d_loss gradient in the fake scores.
    double err = testsupport::grad_check(
        [&](ad::Graph& gg, Var fake) {
          auto l = lsgan_losses(gg, {ad::constant(gg, real0)}, {fake});
          return l.d_loss;
        },
        fake0, 1e-6);
    CHECK(err < 1e-3);
    // g_loss gradient in the fake scores.
    err = testsupport::grad_check(
        [&](ad::Graph& gg, Var fake) {
          auto l = lsgan_losses(gg, {ad::constant(gg, real0)}, {fake});
          return l.g_loss;
        },
        fake0, 1e-6);
    CHECK(err < 1e-3);
    // d_loss gradient in the real scores.
    err = testsupport::grad_check(
        [&](ad::Graph& gg, Var real) {
          auto l = lsgan_losses(gg, {real}, {ad::constant(gg, fake0)});
          return l.d_loss;
        },
        real0, 1e-6);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("total tts loss arithmetic") {
  CHECK(total_tts_loss_value(0, 0, 0, 0, 0.01) == doctest::Approx(0.0));
  CHECK(total_tts_loss_value(1, 1, 1, 1, 0.01) == doctest::Approx(3.01));
  // lambda1 = 0 removes the adversarial term entirely.
  CHECK(total_tts_loss_value(1, 1, 1, 123.0, 0.0) == doctest::Approx(3.0));
}

TEST_CASE("pcd branch parameters receive finite-difference-correct gradients") {
  PcdConfig cfg = tiny_pcd();
  cfg.windows.lengths = {4};
  PcdSet pcd(cfg, 77);
  Rng rng(78);
  std::vector<Mat> mels = {rng.normal_matrix(4, cfg.n_mels),
                           rng.normal_matrix(4, cfg.n_mels)};
  std::vector<Mat> pros = {rng.normal_matrix(4, cfg.d_z),
                           rng.normal_matrix(4, cfg.d_z)};

  auto loss_value = [&]() {
    ad::Graph g;
    nn::Binder bind(g);
    Var s = pcd.discriminate(bind, 0, mels, pros, false);
    return ad::mean(ad::square(ad::add_scalar(s, -1.0))).scalar();
  };

  pcd.params().zero_grad();
  {
    ad::Graph g;
    nn::Binder bind(g);
    Var s = pcd.discriminate(bind, 0, mels, pros, false);
    Var loss = ad::mean(ad::square(ad::add_scalar(s, -1.0)));
    g.backward(loss.node);
    bind.harvest();
  }
  for (const char* name : {"pcd0.uncond.conv1.w", "pcd0.cond.conv2.w",
                           "pcd0.uncond.fc3.w", "pcd0.cond.bn1.gamma"}) {
    nn::Parameter* p = pcd.params().find(name);
    REQUIRE(p != nullptr);
    const double err = testsupport::grad_check_values(
        [&](const Mat& v) {
          const Mat saved = p->value;
          p->value = v;
          const double out = loss_value();
          p->value = saved;
          return out;
        },
        p->value, p->grad, 1e-6);
    INFO("parameter ", name);
    CHECK(err < 1e-4);
  }
}
