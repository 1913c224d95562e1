#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "prosynth/audio.hpp"
#include "prosynth/common.hpp"

namespace ps {

/// Monotonic DTW path from (0,0) to (n-1, m-1) with steps {(1,0),(0,1),(1,1)}.
struct AlignmentPath {
  std::vector<std::pair<int, int>> pairs;
  double cost = 0.0;

  void validate(int n, int m) const;
};

/// Minimal-cost alignment under absolute-difference local cost; ties prefer
/// the diagonal step, then (1,0).
AlignmentPath dtw_align(const Vec& a, const Vec& b);

/// RMSE of 1200*log2(f0/f0') over DTW-aligned frames voiced in both tracks.
/// Alignment runs on the Hz-domain f0 sequences; cents apply only inside the
/// error. Empty qualifying set -> nullopt (explicitly undefined).
std::optional<double> rmse_f0_cents(const PitchTrack& gt, const PitchTrack& pred);

/// RMSE of periodicity over the full DTW-aligned path (alignment on f0).
std::optional<double> rmse_periodicity(const PitchTrack& gt, const PitchTrack& pred);

struct F1Result {
  double f1 = 0.0;
  bool degenerate = false;  // zero-denominator case
  long tp = 0, fp = 0, fn = 0;
};
/// Voiced/unvoiced F1 over aligned flag sequences.
F1Result f1_vuv(const std::vector<std::uint8_t>& gt_voiced,
                const std::vector<std::uint8_t>& pred_voiced);

/// Mean absolute difference of per-utterance durations (seconds).
double ddur(const std::vector<double>& gt_seconds,
            const std::vector<double>& pred_seconds);

/// KL(gt || pred) between Gaussian-KDE-smoothed histograms over a shared
/// n_bins grid spanning the union range; Silverman bandwidth on the pooled
/// samples; distributions floored at 1e-10 and renormalized.
double kld_feature(const std::vector<double>& gt_values,
                   const std::vector<double>& pred_values, int n_bins = 100);

/// KDE evaluated on a fixed grid (exposed for the report histograms).
Vec kde_on_grid(const std::vector<double>& samples, const Vec& grid,
                double bandwidth);
double silverman_bandwidth(const std::vector<double>& pooled);

struct RtfReport {
  double rtf_mean = 0.0;
  double rtf_variance = 0.0;
  std::vector<double> per_utterance;
};
/// Times `synthesize(i)` (which must return the synthesized audio duration
/// in seconds) for each utterance index.
RtfReport measure_rtf(const std::function<double(int)>& synthesize,
                      int n_utterances);

}  // namespace ps
