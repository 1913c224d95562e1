#include "prosynth/metrics.hpp"

#include <algorithm>
#include <chrono>

namespace ps {

void AlignmentPath::validate(int n, int m) const {
  if (pairs.empty() || pairs.front() != std::make_pair(0, 0) ||
      pairs.back() != std::make_pair(n - 1, m - 1))
    throw IntegrityError("AlignmentPath: endpoints wrong");
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    const int di = pairs[i].first - pairs[i - 1].first;
    const int dj = pairs[i].second - pairs[i - 1].second;
    const bool ok = (di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1);
    if (!ok) throw IntegrityError("AlignmentPath: illegal step");
  }
}

AlignmentPath dtw_align(const Vec& a, const Vec& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (n == 0 || m == 0) throw ArgumentError("dtw_align: empty sequence");
  Mat d(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) d(i, j) = std::abs(a(i) - b(j));
  Mat acc(n, m);
  acc(0, 0) = d(0, 0);
  for (int i = 1; i < n; ++i) acc(i, 0) = acc(i - 1, 0) + d(i, 0);
  for (int j = 1; j < m; ++j) acc(0, j) = acc(0, j - 1) + d(0, j);
  for (int i = 1; i < n; ++i)
    for (int j = 1; j < m; ++j)
      acc(i, j) = d(i, j) + std::min({acc(i - 1, j - 1), acc(i - 1, j), acc(i, j - 1)});

  AlignmentPath path;
  path.cost = acc(n - 1, m - 1);
  std::vector<std::pair<int, int>> rev;
  int i = n - 1, j = m - 1;
  rev.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = acc(i - 1, j - 1);
      const double up = acc(i - 1, j);
      const double left = acc(i, j - 1);
      // Tie order: diagonal, then (1,0).
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    rev.emplace_back(i, j);
  }
  path.pairs.assign(rev.rbegin(), rev.rend());
  path.validate(n, m);
  return path;
}

std::optional<double> rmse_f0_cents(const PitchTrack& gt, const PitchTrack& pred) {
  gt.validate();
  pred.validate();
  const AlignmentPath path = dtw_align(gt.f0, pred.f0);
  double acc = 0.0;
  long count = 0;
  for (const auto& [i, j] : path.pairs) {
    if (!gt.voiced[i] || !pred.voiced[j]) continue;
    if (gt.f0(i) <= 0.0 || pred.f0(j) <= 0.0) continue;
    const double cents = 1200.0 * std::log2(gt.f0(i) / pred.f0(j));
    acc += cents * cents;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return std::sqrt(acc / static_cast<double>(count));
}

std::optional<double> rmse_periodicity(const PitchTrack& gt,
                                       const PitchTrack& pred) {
  gt.validate();
  pred.validate();
  const AlignmentPath path = dtw_align(gt.f0, pred.f0);
  if (path.pairs.empty()) return std::nullopt;
  double acc = 0.0;
  for (const auto& [i, j] : path.pairs) {
    const double d = gt.periodicity(i) - pred.periodicity(j);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(path.pairs.size()));
}

F1Result f1_vuv(const std::vector<std::uint8_t>& gt_voiced,
                const std::vector<std::uint8_t>& pred_voiced) {
  if (gt_voiced.size() != pred_voiced.size())
    throw ArgumentError("f1_vuv: length mismatch");
  F1Result r;
  for (std::size_t i = 0; i < gt_voiced.size(); ++i) {
    if (gt_voiced[i] && pred_voiced[i]) ++r.tp;
    if (!gt_voiced[i] && pred_voiced[i]) ++r.fp;
    if (gt_voiced[i] && !pred_voiced[i]) ++r.fn;
  }
  if (r.tp + r.fp == 0 || r.tp + r.fn == 0 || r.tp == 0) {
    r.degenerate = true;
    r.f1 = 0.0;
    return r;
  }
  const double precision = static_cast<double>(r.tp) / (r.tp + r.fp);
  const double recall = static_cast<double>(r.tp) / (r.tp + r.fn);
  r.f1 = 2.0 / (1.0 / recall + 1.0 / precision);
  return r;
}

double ddur(const std::vector<double>& gt_seconds,
            const std::vector<double>& pred_seconds) {
  if (gt_seconds.size() != pred_seconds.size() || gt_seconds.empty())
    throw ArgumentError("ddur: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt_seconds.size(); ++i)
    acc += std::abs(gt_seconds[i] - pred_seconds[i]);
  return acc / static_cast<double>(gt_seconds.size());
}

double silverman_bandwidth(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  if (n < 2) return 1e-3;
  double mean = 0.0;
  for (double v : pooled) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : pooled) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < n ? sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                      : sorted[lo];
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  const double sigma = std::sqrt(var);
  double spread = std::min(sigma, iqr / 1.34);
  if (spread <= 0.0) spread = sigma > 0.0 ? sigma : 1e-3;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

Vec kde_on_grid(const std::vector<double>& samples, const Vec& grid,
                double bandwidth) {
  if (samples.empty()) throw ArgumentError("kde: empty sample set");
  const double h = std::max(bandwidth, 1e-9);
  Vec density = Vec::Zero(grid.size());
  const double norm = 1.0 / (samples.size() * h * std::sqrt(2.0 * M_PI));
  for (Index g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double s : samples) {
      const double u = (grid(g) - s) / h;
      acc += std::exp(-0.5 * u * u);
    }
    density(g) = acc * norm;
  }
  return density;
}

double kld_feature(const std::vector<double>& gt_values,
                   const std::vector<double>& pred_values, int n_bins) {
  if (gt_values.empty() || pred_values.empty())
    throw ArgumentError("kld_feature: empty sample set");
  if (n_bins < 2) throw ArgumentError("kld_feature: needs >= 2 bins");
  double lo = gt_values[0], hi = gt_values[0];
  for (double v : gt_values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : pred_values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1e-6;
  Vec grid(n_bins);
  for (int i = 0; i < n_bins; ++i)
    grid(i) = lo + (hi - lo) * (i + 0.5) / n_bins;

  std::vector<double> pooled = gt_values;
  pooled.insert(pooled.end(), pred_values.begin(), pred_values.end());
  const double h = silverman_bandwidth(pooled);

  Vec p = kde_on_grid(gt_values, grid, h);
  Vec q = kde_on_grid(pred_values, grid, h);
  constexpr double kFloor = 1e-10;
  p = p.cwiseMax(kFloor);
  q = q.cwiseMax(kFloor);
  p /= p.sum();
  q /= q.sum();
  double kl = 0.0;
  for (int i = 0; i < n_bins; ++i) kl += p(i) * std::log(p(i) / q(i));
  return kl;
}

RtfReport measure_rtf(const std::function<double(int)>& synthesize,
                      int n_utterances) {
  if (n_utterances < 1) throw ArgumentError("measure_rtf: needs >= 1 utterance");
  RtfReport report;
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < n_utterances; ++i) {
    const auto start = clock::now();
    const double audio_seconds = synthesize(i);
    const auto stop = clock::now();
    if (audio_seconds <= 0.0)
      throw ArgumentError("measure_rtf: utterance with non-positive duration");
    const double wall = std::chrono::duration<double>(stop - start).count();
    report.per_utterance.push_back(wall / audio_seconds);
  }
  for (double v : report.per_utterance) report.rtf_mean += v;
  report.rtf_mean /= static_cast<double>(n_utterances);
  for (double v : report.per_utterance)
    report.rtf_variance += (v - report.rtf_mean) * (v - report.rtf_mean);
  report.rtf_variance /= static_cast<double>(n_utterances);
  return report;
}

}  // namespace ps
