#include <doctest.h>

#include <functional>
#include <thread>

#include "prosynth/metrics.hpp"

using namespace ps;

namespace {

/// Exhaustive minimal-cost search over every monotone path (no memoization:
/// this literally enumerates all paths, independent of the DP implementation).
double dtw_exhaustive_cost(const Vec& a, const Vec& b) {
  std::function<double(int, int)> rec = [&](int i, int j) -> double {
    const double c = std::abs(a(i) - b(j));
    if (i == 0 && j == 0) return c;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0 && j > 0) best = std::min(best, rec(i - 1, j - 1));
    if (i > 0) best = std::min(best, rec(i - 1, j));
    if (j > 0) best = std::min(best, rec(i, j - 1));
    return c + best;
  };
  return rec(static_cast<int>(a.size()) - 1, static_cast<int>(b.size()) - 1);
}

PitchTrack constant_track(Index frames, double f0, double periodicity,
                          bool voiced) {
  PitchTrack t;
  t.f0 = Vec::Constant(frames, voiced ? f0 : 0.0);
  t.periodicity = Vec::Constant(frames, periodicity);
  t.voiced.assign(frames, voiced ? 1 : 0);
  return t;
}

}  // namespace

TEST_CASE("dtw alignment") {
  SUBCASE("identical sequences align on the diagonal with zero cost") {
    Vec a(4);
    a << 1, 2, 3, 4;
    const auto path = dtw_align(a, a);
    CHECK(path.cost == 0.0);
    REQUIRE(path.pairs.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(path.pairs[i] == std::make_pair(i, i));
  }

  SUBCASE("insertion example has zero cost") {
    Vec a(3), b(4);
    a << 1, 2, 3;
    b << 1, 2, 2, 3;
    CHECK(dtw_align(a, b).cost == 0.0);
  }

  SUBCASE("random short pairs match exhaustive path enumeration exactly") {
    Rng rng(111);
    for (int trial = 0; trial < 40; ++trial) {
      const Index n = 1 + static_cast<Index>(rng.uniform_int(7));
      const Index m = 1 + static_cast<Index>(rng.uniform_int(7));
      Vec a(n), b(m);
      for (Index i = 0; i < n; ++i) a(i) = rng.uniform(-3.0, 3.0);
      for (Index j = 0; j < m; ++j) b(j) = rng.uniform(-3.0, 3.0);
      const auto path = dtw_align(a, b);
      CHECK(path.cost == doctest::Approx(dtw_exhaustive_cost(a, b)).epsilon(1e-12));
      path.validate(static_cast<int>(n), static_cast<int>(m));
    }
  }

  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(dtw_align(Vec(), Vec::Ones(2)), ArgumentError);
  }
}

TEST_CASE("pitch RMSE in cents") {
  SUBCASE("identical tracks give zero") {
    const auto t = constant_track(10, 220.0, 0.9, true);
    CHECK(rmse_f0_cents(t, t).value() == doctest::Approx(0.0));
  }

  SUBCASE("220 Hz vs 440 Hz constant tracks give exactly 1200 cents") {
    const auto gt = constant_track(8, 220.0, 0.9, true);
    const auto pred = constant_track(8, 440.0, 0.9, true);
    CHECK(rmse_f0_cents(gt, pred).value() == doctest::Approx(1200.0).epsilon(1e-12));
  }

  SUBCASE("random case equals a direct loop over the aligned path") {
    Rng rng(113);
    PitchTrack gt, pred;
    const Index n = 6, m = 5;
    gt.f0 = Vec(n);
    pred.f0 = Vec(m);
    for (Index i = 0; i < n; ++i) gt.f0(i) = rng.uniform(100.0, 300.0);
    for (Index j = 0; j < m; ++j) pred.f0(j) = rng.uniform(100.0, 300.0);
    gt.periodicity = Vec::Constant(n, 0.9);
    pred.periodicity = Vec::Constant(m, 0.9);
    gt.voiced.assign(n, 1);
    pred.voiced.assign(m, 1);
    gt.voiced[2] = 0;  // one unvoiced frame must be excluded
    const auto path = dtw_align(gt.f0, pred.f0);
    double acc = 0.0;
    long count = 0;
    for (const auto& [i, j] : path.pairs) {
      if (!gt.voiced[i] || !pred.voiced[j]) continue;
      const double cents = 1200.0 * std::log2(gt.f0(i) / pred.f0(j));
      acc += cents * cents;
      ++count;
    }
    const double expect = std::sqrt(acc / count);
    CHECK(rmse_f0_cents(gt, pred).value() == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("no mutually voiced frames yields the explicit undefined result") {
    const auto gt = constant_track(5, 200.0, 0.9, true);
    const auto pred = constant_track(5, 0.0, 0.1, false);
    CHECK_FALSE(rmse_f0_cents(gt, pred).has_value());
  }
}

TEST_CASE("periodicity RMSE") {
  SUBCASE("identical gives zero") {
    const auto t = constant_track(7, 150.0, 0.8, true);
    CHECK(rmse_periodicity(t, t).value() == doctest::Approx(0.0));
  }
  SUBCASE("constants 0 vs 1 give 1") {
    auto gt = constant_track(6, 150.0, 0.0, true);
    auto pred = constant_track(6, 150.0, 1.0, true);
    CHECK(rmse_periodicity(gt, pred).value() == doctest::Approx(1.0));
  }
  SUBCASE("random case equals a loop oracle over the full path") {
    Rng rng(117);
    PitchTrack gt, pred;
    gt.f0 = rng.uniform_matrix(5, 1, 100, 200).col(0);
    pred.f0 = rng.uniform_matrix(7, 1, 100, 200).col(0);
    gt.periodicity = rng.uniform_matrix(5, 1, 0, 1).col(0);
    pred.periodicity = rng.uniform_matrix(7, 1, 0, 1).col(0);
    gt.voiced.assign(5, 1);
    pred.voiced.assign(7, 1);
    const auto path = dtw_align(gt.f0, pred.f0);
    double acc = 0;
    for (const auto& [i, j] : path.pairs) {
      const double d = gt.periodicity(i) - pred.periodicity(j);
      acc += d * d;
    }
    const double expect = std::sqrt(acc / path.pairs.size());
    CHECK(rmse_periodicity(gt, pred).value() ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("voiced/unvoiced F1") {
  SUBCASE("identical all-voiced flags give 1") {
    std::vector<std::uint8_t> v(6, 1);
    const auto r = f1_vuv(v, v);
    CHECK_FALSE(r.degenerate);
    CHECK(r.f1 == doctest::Approx(1.0));
  }
  SUBCASE("hand-enumerated case gives 0.5") {
    const std::vector<std::uint8_t> gt = {1, 1, 0, 0};
    const std::vector<std::uint8_t> pred = {1, 0, 0, 1};
    const auto r = f1_vuv(gt, pred);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.f1 == doctest::Approx(0.5));
  }
  SUBCASE("all-unvoiced is the degenerate zero-positive case") {
    std::vector<std::uint8_t> uv(5, 0);
    const auto r = f1_vuv(uv, uv);
    CHECK(r.degenerate);
    CHECK(r.f1 == 0.0);
  }
  SUBCASE("flipping ground-truth-voiced predictions degrades recall monotonically") {
    std::vector<std::uint8_t> gt(10, 1);
    std::vector<std::uint8_t> pred(10, 1);
    double prev = f1_vuv(gt, pred).f1;
    for (int k = 0; k < 9; ++k) {
      pred[k] = 0;
      const double cur = f1_vuv(gt, pred).f1;
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("length mismatch rejected") {
    CHECK_THROWS_AS(f1_vuv({1, 0}, {1}), ArgumentError);
  }
}

TEST_CASE("duration difference (DDUR)") {
  CHECK(ddur({1.0, 2.0}, {1.0, 2.0}) == doctest::Approx(0.0));
  CHECK(ddur({2.0}, {2.5}) == doctest::Approx(0.5));
  Rng rng(119);
  std::vector<double> a, b;
  double acc = 0;
  for (int i = 0; i < 9; ++i) {
    a.push_back(rng.uniform(0.5, 4.0));
    b.push_back(rng.uniform(0.5, 4.0));
    acc += std::abs(a.back() - b.back());
  }
  CHECK(ddur(a, b) == doctest::Approx(acc / 9.0).epsilon(1e-12));
  CHECK_THROWS_AS(ddur({1.0}, {1.0, 2.0}), ArgumentError);
}

TEST_CASE("KL divergence of KDE-smoothed features") {
  Rng rng(121);
  std::vector<double> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(rng.normal(2.0, 0.5));

  SUBCASE("identical sample sets give (numerically) zero") {
    CHECK(kld_feature(samples, samples) < 1e-9);
  }

  SUBCASE("divergence grows monotonically with cluster separation") {
    double prev = -1.0;
    for (double sep : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      std::vector<double> shifted;
      for (double v : samples) shifted.push_back(v + sep);
      const double kl = kld_feature(samples, shifted);
      CHECK(kl > prev);
      prev = kl;
    }
  }

  SUBCASE("non-negative on random pairs") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> a, b;
      for (int i = 0; i < 50; ++i) {
        a.push_back(rng.normal(0.0, 1.0));
        b.push_back(rng.normal(rng.uniform(-1.0, 1.0), 1.5));
      }
      CHECK(kld_feature(a, b) >= 0.0);
    }
  }

  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(kld_feature({}, samples), ArgumentError);
  }
}

TEST_CASE("real-time-factor measurement") {
  // A synthesizer that sleeps 30 ms to produce 0.3 s of audio: RTF ~ 0.1.
  const auto report = measure_rtf(
      [](int) {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        return 0.3;
      },
      3);
  CHECK(report.rtf_mean == doctest::Approx(0.1).epsilon(0.25));
  CHECK(report.per_utterance.size() == 3);
  CHECK(report.rtf_variance >= 0.0);
}
