#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "prosynth/corpus.hpp"
#include "prosynth/tensor_io.hpp"

using namespace ps;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("empty manifest yields an empty record list") {
  const auto dir = fresh_dir("ps_corpus_empty");
  const auto path = dir / "manifest.psv";
  std::ofstream(path).close();
  CHECK(load_manifest(path.string()).empty());
}

TEST_CASE("synthetic corpus: determinism, invariants, speaker separation") {
  AudioConfig cfg;
  SyntheticCorpusParams params;

  SUBCASE("same seed twice gives byte-identical corpora") {
    const auto a = generate_synthetic_corpus(123, 2, 6, cfg, params);
    const auto b = generate_synthetic_corpus(123, 2, 6, cfg, params);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].utt_id == b[i].utt_id);
      CHECK(a[i].speaker_id == b[i].speaker_id);
      CHECK(a[i].phonemes == b[i].phonemes);
      CHECK(a[i].durations == b[i].durations);
      REQUIRE(a[i].mel.data.size() == b[i].mel.data.size());
      CHECK(std::memcmp(a[i].mel.data.data(), b[i].mel.data.data(),
                        sizeof(double) * a[i].mel.data.size()) == 0);
      CHECK(std::memcmp(a[i].pitch->f0.data(), b[i].pitch->f0.data(),
                        sizeof(double) * a[i].pitch->f0.size()) == 0);
    }
  }

  SUBCASE("eight utterances satisfy every record invariant") {
    const auto recs = generate_synthetic_corpus(7, 2, 8, cfg, params);
    REQUIRE(recs.size() == 8);
    for (const auto& r : recs) {
      r.validate();  // throws on any violation
      CHECK(r.total_frames() == r.mel.frames());
    }
  }

  SUBCASE("two speakers have distinct low-band base contours") {
    const auto recs = generate_synthetic_corpus(99, 2, 16, cfg, params);
    const int nb = params.lowband_bins;
    double mean0 = 0, mean1 = 0;
    long n0 = 0, n1 = 0;
    for (const auto& r : recs) {
      const double m = r.mel.data.leftCols(nb).mean();
      if (r.speaker_id == "spk0") {
        mean0 += m;
        ++n0;
      } else {
        mean1 += m;
        ++n1;
      }
    }
    REQUIRE(n0 > 0);
    REQUIRE(n1 > 0);
    mean0 /= n0;
    mean1 /= n1;
    // Generator construction: speakers are speaker_lowband_offset apart in
    // the low band; word perturbations are bounded by word_perturb_amp times
    // the bump mean, which is below half the offset.
    CHECK(std::abs(mean1 - mean0) > 0.5 * params.speaker_lowband_offset);
  }

  SUBCASE("counts below one are rejected") {
    CHECK_THROWS_AS(generate_synthetic_corpus(1, 0, 4, cfg, params), ArgumentError);
    CHECK_THROWS_AS(generate_synthetic_corpus(1, 1, 0, cfg, params), ArgumentError);
  }
}

TEST_CASE("manifest round-trip preserves records") {
  AudioConfig cfg;
  const auto dir = fresh_dir("ps_corpus_rt");
  const auto recs = generate_synthetic_corpus(5, 2, 3, cfg);
  const std::string manifest = save_corpus(recs, dir.string());
  const auto back = load_manifest(manifest);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].utt_id == recs[i].utt_id);
    CHECK(back[i].speaker_id == recs[i].speaker_id);
    CHECK(back[i].phonemes == recs[i].phonemes);
    CHECK(back[i].durations == recs[i].durations);
    CHECK(back[i].grouping.word_spans == recs[i].grouping.word_spans);
    CHECK(std::memcmp(back[i].mel.data.data(), recs[i].mel.data.data(),
                      sizeof(double) * recs[i].mel.data.size()) == 0);
    REQUIRE(back[i].pitch.has_value());
    CHECK((back[i].pitch->f0 - recs[i].pitch->f0).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("duration/frame mismatch raises an integrity error naming the utterance") {
  AudioConfig cfg;
  const auto dir = fresh_dir("ps_corpus_bad");
  auto recs = generate_synthetic_corpus(11, 1, 1, cfg);
  const std::string manifest = save_corpus(recs, dir.string());

  // Rewrite the mel with one frame fewer than the durations claim.
  const Mat mel = load_tensor((dir / "mel" / (recs[0].utt_id + ".pst")).string());
  save_tensor((dir / "mel" / (recs[0].utt_id + ".pst")).string(),
              Mat(mel.topRows(mel.rows() - 1)));
  try {
    load_manifest(manifest);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find(recs[0].utt_id) != std::string::npos);
  }
}

TEST_CASE("malformed manifest row raises a parse error naming the line") {
  const auto dir = fresh_dir("ps_corpus_malformed");
  const auto path = dir / "manifest.psv";
  std::ofstream(path) << "only|three|fields\n";
  try {
    load_manifest(path.string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("vocabularies cover the synthetic corpus") {
  AudioConfig cfg;
  const auto recs = generate_synthetic_corpus(17, 2, 8, cfg);
  const PhonemeVocabulary pv = build_phoneme_vocabulary(recs);
  const WordVocabulary wv = build_word_vocabulary(recs);
  for (const auto& r : recs) {
    for (const auto& p : r.phonemes) CHECK(pv.contains(p));
    for (const auto& w : r.words) CHECK(wv.id(w) != 0);
  }
}
