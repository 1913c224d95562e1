#pragma once

#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "prosynth/common.hpp"

namespace ps {

struct AudioConfig {
  double sample_rate = 22050.0;
  int n_fft = 1024;  // also the analysis window length
  int hop = 256;
  int n_mels = 80;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;

  void validate() const {
    if (sample_rate <= 0) throw ArgumentError("AudioConfig: sample_rate must be > 0");
    if (n_mels < 1) throw ArgumentError("AudioConfig: n_mels must be >= 1");
    if (hop > n_fft) throw ArgumentError("AudioConfig: hop must be <= window");
    if (hop <= 0 || n_fft <= 0) throw ArgumentError("AudioConfig: hop/window must be > 0");
  }
};

/// frames x n_mels log-amplitude matrix plus the config it was computed with.
struct MelSpectrogram {
  Mat data;  // frames x n_mels
  AudioConfig config;

  Index frames() const { return data.rows(); }
  Index bins() const { return data.cols(); }

  void validate() const {
    if (data.rows() < 1) throw IntegrityError("MelSpectrogram: needs >= 1 frame");
    if (!data.allFinite()) throw IntegrityError("MelSpectrogram: non-finite entries");
  }
};

/// Per-frame pitch descriptor: f0 in Hz (> 0 where voiced), periodicity in
/// [0, 1], and a voiced flag.
struct PitchTrack {
  Vec f0;
  Vec periodicity;
  std::vector<std::uint8_t> voiced;

  Index frames() const { return f0.size(); }

  void validate() const {
    if (f0.size() != periodicity.size() ||
        static_cast<std::size_t>(f0.size()) != voiced.size())
      throw IntegrityError("PitchTrack: arrays must share length");
    if (!f0.allFinite() || !periodicity.allFinite())
      throw IntegrityError("PitchTrack: non-finite entries");
  }
};

/// Amplitude floor applied before taking logs.
inline constexpr double kLogFloor = 1e-5;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filterbank, n_mels x (n_fft/2 + 1).
template <class Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mel_filterbank(
    int n_mels, int n_fft, double sample_rate, double fmin, double fmax) {
  const int n_bins = n_fft / 2 + 1;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> fb =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n_mels, n_bins);
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  for (int m = 0; m < n_mels; ++m) {
    const double fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = sample_rate * b / n_fft;
      double w = 0.0;
      if (f > fl && f < fc)
        w = (f - fl) / (fc - fl);
      else if (f >= fc && f < fr)
        w = (fr - f) / (fr - fc);
      if (w > 0) fb(m, b) = static_cast<Scalar>(w);
    }
  }
  return fb;
}

/// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& x, bool inverse = false);

/// Log-amplitude mel spectrogram of a mono waveform. Frames are centered:
/// frame t covers samples [t*hop - n_fft/2, t*hop + n_fft/2) with zero
/// padding at the edges, giving 1 + floor(len/hop) frames.
MelSpectrogram compute_mel(const Vec& audio, const AudioConfig& cfg);

/// Slice of the lowest N mel bins (columns [0, N)).
MelSpectrogram low_band(const MelSpectrogram& mel, int n);

/// Per-frame log of summed mel amplitude; used for energy distributions.
Vec frame_log_energy(const MelSpectrogram& mel);

/// Pluggable pitch extraction.
class PitchSource {
 public:
  virtual ~PitchSource() = default;
  virtual PitchTrack extract(const Vec& audio, const AudioConfig& cfg) const = 0;
};

/// Normalized-autocorrelation tracker (default PitchSource for real audio).
class AutocorrPitchSource : public PitchSource {
 public:
  AutocorrPitchSource(double fmin = 60.0, double fmax = 400.0,
                      double voicing_threshold = 0.5)
      : fmin_(fmin), fmax_(fmax), threshold_(voicing_threshold) {}
  PitchTrack extract(const Vec& audio, const AudioConfig& cfg) const override;

 private:
  double fmin_, fmax_, threshold_;
};

// Minimal mono PCM16 WAV I/O (plumbing for the vocoder fallback).
void save_wav(const std::string& path, const Vec& audio, double sample_rate);
Vec load_wav(const std::string& path, double* sample_rate_out = nullptr);

/// Phase-reconstruction (Griffin-Lim) mel-to-audio fallback. A real vocoder
/// can be plugged in through the VocoderFn adapter in train.hpp instead.
Vec griffin_lim(const MelSpectrogram& mel, int iterations = 32);

}  // namespace ps
