#include <doctest.h>

#include "prosynth/tts.hpp"
#include "test_support.hpp"

using namespace ps;
using ad::Var;

namespace {

TtsConfig tiny_config() {
  TtsConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden = 8;
  cfg.filter = 16;
  cfg.kernel = 3;
  cfg.heads = 2;
  cfg.n_mels = 10;
  return cfg;
}

}  // namespace

TEST_CASE("encode_text shape and word-encoder ablation") {
  const TtsConfig cfg = tiny_config();
  TtsModel model(cfg, 6, 4, {"spk0"}, 77);

  SUBCASE("single phoneme, single word gives a length-1 sequence") {
    ad::Graph g;
    nn::Binder bind(g);
    WordGrouping grouping{{{0, 1}}};
    auto enc = model.encode_text(bind, {1}, {1}, grouping, false, nullptr);
    CHECK(enc.h_txt.rows() == 1);
    CHECK(enc.h_txt.cols() == cfg.hidden);
  }

  SUBCASE("zeroed word branch leaves exactly the phoneme encoding") {
    TtsConfig no_word = cfg;
    no_word.use_word_encoder = false;
    TtsModel ablated(no_word, 6, 4, {"spk0"}, 77);  // same init seed
    WordGrouping grouping{{{0, 2}, {2, 3}}};
    ad::Graph g1, g2;
    nn::Binder b1(g1), b2(g2);
    auto full = model.encode_text(b1, {1, 2, 3}, {1, 2}, grouping, false, nullptr);
    auto onlyp = ablated.encode_text(b2, {1, 2, 3}, {1, 2}, grouping, false, nullptr);
    CHECK((onlyp.h_txt.value() - full.phoneme_feats.value()).cwiseAbs().maxCoeff() ==
          0.0);
  }

  SUBCASE("unknown phoneme id rejected") {
    ad::Graph g;
    nn::Binder bind(g);
    WordGrouping grouping{{{0, 1}}};
    CHECK_THROWS_AS(model.encode_text(bind, {99}, {1}, grouping, false, nullptr),
                    ArgumentError);
  }
}

TEST_CASE("fuse_conditions is the additive composition") {
  const TtsConfig cfg = tiny_config();
  TtsModel model(cfg, 6, 4, {"spk0"}, 78);
  WordGrouping grouping{{{0, 2}, {2, 5}}};
  Rng rng(5);
  const Mat h_txt = rng.normal_matrix(5, cfg.hidden);
  const Mat z = rng.normal_matrix(2, cfg.hidden);
  const Mat spk = rng.normal_matrix(1, cfg.hidden);

  SUBCASE("zero prosody and speaker leave h_txt untouched") {
    ad::Graph g;
    nn::Binder bind(g);
    Var out = model.fuse_conditions(bind, ad::constant(g, h_txt),
                                    ad::constant(g, Mat::Zero(1, cfg.hidden)),
                                    ad::constant(g, Mat::Zero(2, cfg.hidden)),
                                    grouping);
    CHECK((out.value() - h_txt).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("hand-computed elementwise sum") {
    ad::Graph g;
    nn::Binder bind(g);
    Var out = model.fuse_conditions(bind, ad::constant(g, h_txt),
                                    ad::constant(g, spk), ad::constant(g, z),
                                    grouping);
    for (int p = 0; p < 5; ++p) {
      const int w = grouping.word_of(p);
      const RowVec expect = h_txt.row(p) + spk.row(0) + z.row(w);
      CHECK((out.value().row(p) - expect).cwiseAbs().maxCoeff() < 1e-15);
    }
  }

  SUBCASE("permuting words permutes the expanded rows consistently") {
    // Word lengths (2, 3) permuted to (3, 2).
    WordGrouping permuted{{{0, 3}, {3, 5}}};
    Mat z_perm(2, cfg.hidden);
    z_perm.row(0) = z.row(1);
    z_perm.row(1) = z.row(0);
    ad::Graph g;
    nn::Binder bind(g);
    Var out = model.fuse_conditions(bind, ad::constant(g, Mat::Zero(5, cfg.hidden)),
                                    ad::constant(g, Mat::Zero(1, cfg.hidden)),
                                    ad::constant(g, z_perm), permuted);
    for (int p = 0; p < 5; ++p) {
      const int w = permuted.word_of(p);
      CHECK((out.value().row(p) - z.row(w == 0 ? 1 : 0)).cwiseAbs().maxCoeff() ==
            0.0);
    }
  }

  SUBCASE("dimension mismatch rejected") {
    ad::Graph g;
    nn::Binder bind(g);
    CHECK_THROWS_AS(
        model.fuse_conditions(bind, ad::constant(g, h_txt),
                              ad::constant(g, Mat::Zero(1, cfg.hidden)),
                              ad::constant(g, Mat::Zero(3, cfg.hidden)), grouping),
        ArgumentError);
  }
}

TEST_CASE("duration predictor shape and rounding rules") {
  const TtsConfig cfg = tiny_config();
  TtsModel model(cfg, 6, 4, {"spk0"}, 79);
  ad::Graph g;
  nn::Binder bind(g);
  Rng rng(6);
  Var h = ad::constant(g, rng.normal_matrix(7, cfg.hidden));
  Var d = model.predict_durations(bind, h, false, nullptr);
  CHECK(d.rows() == 7);
  CHECK(d.cols() == 1);

  Vec preds(2);
  preds << 0.4, 1.6;
  CHECK(round_durations(preds) == std::vector<int>{0, 2});
  Vec negatives(2);
  negatives << -0.7, 2.5;
  CHECK(round_durations(negatives) == std::vector<int>{0, 3});
}

TEST_CASE("length_regulate repeats phonemes by duration") {
  const TtsConfig cfg = tiny_config();
  TtsModel model(cfg, 6, 4, {"spk0"}, 80);
  Rng rng(7);
  const Mat h = rng.normal_matrix(3, cfg.hidden);

  SUBCASE("durations [2,1,3] give 6 frames") {
    ad::Graph g;
    nn::Binder bind(g);
    Var out = model.length_regulate(ad::constant(g, h), {2, 1, 3});
    REQUIRE(out.rows() == 6);
    // Naive repeat-and-concatenate oracle.
    int f = 0;
    const std::vector<int> durs = {2, 1, 3};
    for (int p = 0; p < 3; ++p)
      for (int k = 0; k < durs[p]; ++k, ++f)
        CHECK((out.value().row(f) - h.row(p)).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("unit durations are the identity") {
    ad::Graph g;
    nn::Binder bind(g);
    Var out = model.length_regulate(ad::constant(g, h), {1, 1, 1});
    CHECK((out.value() - h).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("random case equals the naive loop oracle") {
    Rng lens(8);
    for (int trial = 0; trial < 10; ++trial) {
      const int p_count = 1 + static_cast<int>(lens.uniform_int(6));
      const Mat hp = lens.normal_matrix(p_count, cfg.hidden);
      std::vector<int> durs(p_count);
      int total = 0;
      for (auto& d : durs) {
        d = static_cast<int>(lens.uniform_int(4));
        total += d;
      }
      if (total == 0) durs[0] = total = 1;
      ad::Graph g;
      nn::Binder bind(g);
      Var out = model.length_regulate(ad::constant(g, hp), durs);
      REQUIRE(out.rows() == total);
      int f = 0;
      for (int p = 0; p < p_count; ++p)
        for (int k = 0; k < durs[p]; ++k, ++f)
          CHECK((out.value().row(f) - hp.row(p)).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("all-zero durations rejected") {
    ad::Graph g;
    nn::Binder bind(g);
    CHECK_THROWS_AS(model.length_regulate(ad::constant(g, h), {0, 0, 0}),
                    ArgumentError);
  }
}

TEST_CASE("decode_mel emits frames x n_mels deterministically") {
  const TtsConfig cfg = tiny_config();
  TtsModel model(cfg, 6, 4, {"spk0"}, 81);
  Rng rng(9);
  const Mat frames = rng.normal_matrix(5, cfg.hidden);
  ad::Graph g1, g2;
  nn::Binder b1(g1), b2(g2);
  Var m1 = model.decode_mel(b1, ad::constant(g1, frames), false, nullptr);
  Var m2 = model.decode_mel(b2, ad::constant(g2, frames), false, nullptr);
  CHECK(m1.rows() == 5);
  CHECK(m1.cols() == cfg.n_mels);
  CHECK((m1.value() - m2.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reconstruction loss: identity, closed form, gradient") {
  Rng rng(11);

  SUBCASE("identical matrices give zero loss") {
    const Mat y = rng.normal_matrix(10, 9);
    CHECK(reconstruction_loss_value(y, y) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("constant images differing by delta match the closed form") {
    const double delta = 0.25;
    const Mat y = Mat::Constant(12, 10, 1.0);
    const Mat yp = Mat::Constant(12, 10, 1.0 + delta);
    // Constant target: R = 0 guards to 1, so C1 = 1e-4, C2 = 9e-4. All local
    // stats are exact: mu_x = 1 + delta, mu_y = 1, variances and covariance
    // vanish.
    const double c1 = 1e-4, c2 = 9e-4;
    const double mu_x = 1.0 + delta, mu_y = 1.0;
    const double ssim = ((2 * mu_x * mu_y + c1) * c2) /
                        ((mu_x * mu_x + mu_y * mu_y + c1) * c2);
    const double expect = delta * delta + (1.0 - ssim);
    CHECK(reconstruction_loss_value(y, yp) == doctest::Approx(expect).epsilon(1e-10));
  }

  SUBCASE("loss is non-negative on random pairs") {
    for (int i = 0; i < 10; ++i) {
      const Mat y = rng.normal_matrix(9, 8);
      const Mat yp = rng.normal_matrix(9, 8);
      CHECK(reconstruction_loss_value(y, yp) >= 0.0);
    }
  }

  SUBCASE("gradient matches central finite differences at 8x8") {
    const Mat y = rng.normal_matrix(8, 8);
    const Mat yp = rng.normal_matrix(8, 8);
    const SsimParams p = SsimParams::from_target_range(target_dynamic_range(y));
    const double err = testsupport::grad_check(
        [&](ad::Graph& g, Var pred) {
          return reconstruction_loss_graph(g, pred, y, p);
        },
        yp, 1e-6);
    CHECK(err < 1e-3);
  }

  SUBCASE("shape mismatch rejected") {
    ad::Graph g;
    Var pred = ad::leaf(g, Mat::Zero(3, 3), false);
    const SsimParams p = SsimParams::from_target_range(1.0);
    CHECK_THROWS_AS(reconstruction_loss_graph(g, pred, Mat::Zero(4, 3), p),
                    ArgumentError);
  }
}

TEST_CASE("duration loss: identity, arithmetic, gradient") {
  SUBCASE("equal inputs give zero") {
    Vec d(3);
    d << 1, 5, 2;
    CHECK(duration_loss_value(d, d) == doctest::Approx(0.0));
  }
  SUBCASE("target 1 vs prediction 3 in the log domain") {
    Vec a(1), b(1);
    a << 1.0;
    b << 3.0;
    const double expect = std::pow(std::log(2.0) - std::log(4.0), 2.0);
    CHECK(duration_loss_value(a, b) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(13);
    Mat pred = rng.normal_matrix(8, 1);
    const std::vector<int> target = {1, 2, 3, 4, 5, 1, 2, 3};
    const double err = testsupport::grad_check(
        [&](ad::Graph& g, Var p) { return duration_loss_graph(g, p, target); },
        pred, 1e-6);
    CHECK(err < 1e-3);
  }
  SUBCASE("length mismatch rejected") {
    Vec a(2), b(3);
    a.setZero();
    b.setZero();
    CHECK_THROWS_AS(duration_loss_value(a, b), ArgumentError);
  }
}

TEST_CASE("speaker table: lookup, import adapter") {
  nn::ParamRegistry reg;
  Rng rng(15);
  SpeakerTable table(reg, "spk", {"alice", "bob"}, 8, 6, rng);
  CHECK(table.index_of("bob") == 1);
  CHECK_THROWS_AS(table.index_of("carol"), ArgumentError);

  Vec external = rng.normal_matrix(6, 1).col(0);
  table.import_embedding("alice", external);
  const Mat& proj = reg.find("spk.projection")->value;
  const RowVec expect = external.transpose() * proj;
  CHECK((reg.find("spk.table")->value.row(0) - expect).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK_THROWS_AS(table.import_embedding("alice", Vec::Zero(5)), ArgumentError);
}
