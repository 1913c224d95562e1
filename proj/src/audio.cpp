#include "prosynth/audio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace ps {

void fft_inplace(std::vector<std::complex<double>>& x, bool inverse) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ArgumentError("fft: size must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : x) v /= static_cast<double>(n);
}

namespace {

Vec hann_window(int n) {
  Vec w(n);
  for (int i = 0; i < n; ++i)
    w(i) = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  return w;
}

/// Magnitude STFT, frames x (n_fft/2 + 1), centered frames.
Mat stft_magnitude(const Vec& audio, const AudioConfig& cfg,
                   std::vector<std::vector<std::complex<double>>>* spectra = nullptr) {
  const int n_fft = cfg.n_fft;
  const int hop = cfg.hop;
  const int n_bins = n_fft / 2 + 1;
  const Index frames = 1 + static_cast<Index>(audio.size()) / hop;
  const Vec win = hann_window(n_fft);
  Mat mag(frames, n_bins);
  std::vector<std::complex<double>> buf(n_fft);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * hop - n_fft / 2;
    for (int i = 0; i < n_fft; ++i) {
      const Index s = start + i;
      const double sample = (s >= 0 && s < audio.size()) ? audio(s) : 0.0;
      buf[i] = sample * win(i);
    }
    fft_inplace(buf);
    for (int b = 0; b < n_bins; ++b) mag(t, b) = std::abs(buf[b]);
    if (spectra) spectra->push_back(std::vector<std::complex<double>>(buf.begin(), buf.begin() + n_bins));
  }
  return mag;
}

}  // namespace

MelSpectrogram compute_mel(const Vec& audio, const AudioConfig& cfg) {
  cfg.validate();
  if (audio.size() == 0) throw ArgumentError("compute_mel: empty audio");
  const Mat fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate,
                                cfg.mel_fmin, cfg.mel_fmax);
  const Mat mag = stft_magnitude(audio, cfg);
  Mat mel = (fb * mag.transpose()).transpose();  // frames x n_mels
  mel = mel.cwiseMax(kLogFloor).array().log().matrix();
  MelSpectrogram out{std::move(mel), cfg};
  out.validate();
  return out;
}

MelSpectrogram low_band(const MelSpectrogram& mel, int n) {
  if (n < 1 || n > mel.bins())
    throw ArgumentError("low_band: N out of range [1, n_mels]");
  MelSpectrogram out;
  out.data = mel.data.leftCols(n);
  out.config = mel.config;
  out.config.n_mels = n;
  return out;
}

Vec frame_log_energy(const MelSpectrogram& mel) {
  Vec e(mel.frames());
  for (Index t = 0; t < mel.frames(); ++t)
    e(t) = std::log(mel.data.row(t).array().exp().sum());
  return e;
}

PitchTrack AutocorrPitchSource::extract(const Vec& audio,
                                        const AudioConfig& cfg) const {
  cfg.validate();
  if (audio.size() == 0) throw ArgumentError("pitch: empty audio");
  const int n = cfg.n_fft;
  const int hop = cfg.hop;
  const Index frames = 1 + audio.size() / hop;
  const int lag_min = std::max(2, static_cast<int>(cfg.sample_rate / fmax_));
  const int lag_max = std::min(n - 1, static_cast<int>(cfg.sample_rate / fmin_));
  PitchTrack track;
  track.f0 = Vec::Zero(frames);
  track.periodicity = Vec::Zero(frames);
  track.voiced.assign(frames, 0);
  Vec frame(n);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * hop - n / 2;
    for (int i = 0; i < n; ++i) {
      const Index s = start + i;
      frame(i) = (s >= 0 && s < audio.size()) ? audio(s) : 0.0;
    }
    frame.array() -= frame.mean();
    const double e0 = frame.squaredNorm();
    if (e0 < 1e-12) continue;
    double best = 0.0;
    int best_lag = 0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      const int m = n - lag;
      const double num = frame.head(m).dot(frame.tail(m));
      const double den = std::sqrt(frame.head(m).squaredNorm() *
                                   frame.tail(m).squaredNorm());
      const double r = den > 0 ? num / den : 0.0;
      if (r > best) {
        best = r;
        best_lag = lag;
      }
    }
    const double p = std::clamp(best, 0.0, 1.0);
    track.periodicity(t) = p;
    if (best_lag > 0 && p >= threshold_) {
      track.f0(t) = cfg.sample_rate / best_lag;
      track.voiced[t] = 1;
    }
  }
  return track;
}

void save_wav(const std::string& path, const Vec& audio, double sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("save_wav: cannot open " + path);
  const std::uint32_t sr = static_cast<std::uint32_t>(sample_rate);
  const std::uint32_t n = static_cast<std::uint32_t>(audio.size());
  const std::uint32_t data_bytes = n * 2;
  auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto put16 = [&](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
  os.write("RIFF", 4);
  put32(36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put32(16);
  put16(1);  // PCM
  put16(1);  // mono
  put32(sr);
  put32(sr * 2);
  put16(2);
  put16(16);
  os.write("data", 4);
  put32(data_bytes);
  for (Index i = 0; i < audio.size(); ++i) {
    const double x = std::clamp(audio(i), -1.0, 1.0);
    const std::int16_t s = static_cast<std::int16_t>(std::lround(x * 32767.0));
    os.write(reinterpret_cast<const char*>(&s), 2);
  }
}

Vec load_wav(const std::string& path, double* sample_rate_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("load_wav: cannot open " + path);
  char tag[4];
  auto get32 = [&]() { std::uint32_t v; is.read(reinterpret_cast<char*>(&v), 4); return v; };
  auto get16 = [&]() { std::uint16_t v; is.read(reinterpret_cast<char*>(&v), 2); return v; };
  is.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw ParseError("load_wav: not RIFF");
  get32();
  is.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw ParseError("load_wav: not WAVE");
  std::uint32_t sr = 0;
  std::uint16_t channels = 1, bits = 16;
  std::vector<std::int16_t> samples;
  while (is.read(tag, 4)) {
    const std::uint32_t size = get32();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      get16();  // format
      channels = get16();
      sr = get32();
      get32();
      get16();
      bits = get16();
      is.seekg(size - 16, std::ios::cur);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (bits != 16) throw ParseError("load_wav: only 16-bit PCM supported");
      samples.resize(size / 2);
      is.read(reinterpret_cast<char*>(samples.data()), size);
      break;
    } else {
      is.seekg(size, std::ios::cur);
    }
  }
  if (samples.empty()) throw ParseError("load_wav: no data chunk in " + path);
  const Index n = static_cast<Index>(samples.size() / channels);
  Vec audio(n);
  for (Index i = 0; i < n; ++i)
    audio(i) = samples[i * channels] / 32768.0;
  if (sample_rate_out) *sample_rate_out = sr;
  return audio;
}

Vec griffin_lim(const MelSpectrogram& mel, int iterations) {
  const AudioConfig& cfg = mel.config;
  const int n_fft = cfg.n_fft;
  const int hop = cfg.hop;
  const int n_bins = n_fft / 2 + 1;
  const Mat fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate,
                                cfg.mel_fmin, cfg.mel_fmax);
  // Least-squares mel inversion, clipped to non-negative amplitudes.
  const Mat pinv = fb.transpose() * (fb * fb.transpose() +
                                     1e-8 * Mat::Identity(fb.rows(), fb.rows()))
                                        .inverse();
  const Mat amp_mel = mel.data.array().exp().matrix();  // frames x n_mels
  Mat target = (pinv * amp_mel.transpose()).cwiseMax(0.0);  // n_bins x frames
  const Index frames = mel.frames();
  const Index out_len = (frames - 1) * hop;
  const Vec win = [&] {
    Vec w(n_fft);
    for (int i = 0; i < n_fft; ++i) w(i) = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n_fft));
    return w;
  }();

  auto istft = [&](const std::vector<std::vector<std::complex<double>>>& spec) {
    Vec out = Vec::Zero(out_len);
    Vec norm = Vec::Zero(out_len);
    std::vector<std::complex<double>> buf(n_fft);
    for (Index t = 0; t < frames; ++t) {
      for (int b = 0; b < n_bins; ++b) buf[b] = spec[t][b];
      for (int b = n_bins; b < n_fft; ++b) buf[b] = std::conj(spec[t][n_fft - b]);
      fft_inplace(buf, true);
      const Index start = t * hop - n_fft / 2;
      for (int i = 0; i < n_fft; ++i) {
        const Index s = start + i;
        if (s >= 0 && s < out_len) {
          out(s) += buf[i].real() * win(i);
          norm(s) += win(i) * win(i);
        }
      }
    }
    for (Index i = 0; i < out_len; ++i)
      if (norm(i) > 1e-9) out(i) /= norm(i);
    return out;
  };

  // Zero-phase start, then alternate projections.
  std::vector<std::vector<std::complex<double>>> spec(
      frames, std::vector<std::complex<double>>(n_bins));
  for (Index t = 0; t < frames; ++t)
    for (int b = 0; b < n_bins; ++b) spec[t][b] = target(b, t);
  Vec audio = istft(spec);
  std::vector<std::complex<double>> buf(n_fft);
  for (int it = 0; it < iterations; ++it) {
    for (Index t = 0; t < frames; ++t) {
      const Index start = t * hop - n_fft / 2;
      for (int i = 0; i < n_fft; ++i) {
        const Index s = start + i;
        buf[i] = ((s >= 0 && s < audio.size()) ? audio(s) : 0.0) * win(i);
      }
      fft_inplace(buf);
      for (int b = 0; b < n_bins; ++b) {
        const double m = std::abs(buf[b]);
        spec[t][b] = m > 1e-12 ? buf[b] / m * target(b, t)
                               : std::complex<double>(target(b, t), 0.0);
      }
    }
    audio = istft(spec);
  }
  return audio;
}

}  // namespace ps
