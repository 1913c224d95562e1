#pragma once

#include <utility>
#include <vector>

#include "prosynth/nn.hpp"
#include "prosynth/text.hpp"

namespace ps {

struct ProsodyEncoderConfig {
  int n_low_bins = 20;  // lowest mel bins fed to the encoder
  int hidden = 192;
  int d_z = 192;
  int kernel = 3;
};

/// Word-level prosody vectors with an optional quantization record.
struct ProsodyLatentSequence {
  Mat latents;  // L x d_z
  bool quantized = false;
  std::vector<int> indices;  // per row, when quantized
};

/// K x d_z code matrix with EMA cluster statistics. Codes are maintained by
/// ema_update (no gradient path); quantize is read-only.
class Codebook {
 public:
  Codebook(int k = 128, int d_z = 192, double decay = 0.998, double eps = 1e-5);

  bool initialized() const { return initialized_; }
  int size() const { return static_cast<int>(codes_.rows()); }
  int dim() const { return static_cast<int>(codes_.cols()); }
  const Mat& codes() const { return codes_; }
  const Vec& ema_counts() const { return ema_counts_; }
  const Mat& ema_sums() const { return ema_sums_; }
  double decay() const { return decay_; }

  /// Nearest code per row (L2), ties resolved to the lowest index. Rows of
  /// the result are bit-exact codebook entries.
  ProsodyLatentSequence quantize(const Mat& h_pros) const;

  /// EMA statistics update from a batch of assigned vectors:
  /// counts_k <- decay*counts_k + (1-decay)*n_k, sums likewise, and
  /// codes_k = sums_k / (counts_k + eps).
  void ema_update(const Mat& h_pros, const std::vector<int>& indices);

  /// K-means (k-means++ seeding, Lloyd iterations capped) over a buffer of
  /// vectors; requires buffer size >= K. Marks the codebook initialized.
  void kmeans_init(const Mat& buffer, Rng& rng, int max_iters = 50);

  /// Restores state (used by checkpoint loading).
  void restore(Mat codes, Vec counts, Mat sums, bool initialized);

  std::uint64_t hash() const {
    return fnv1a64(codes_.data(), sizeof(double) * codes_.size());
  }

 private:
  Mat codes_;       // K x d_z
  Vec ema_counts_;  // K
  Mat ema_sums_;    // K x d_z
  double decay_;
  double eps_;
  bool initialized_ = false;
};

/// sg-based VQ objective with straight-through decoding:
///   loss = ||sg[h] - z||^2 + beta * ||h - sg[z]||^2   (sum of squares)
/// z_st carries the quantized value but routes gradients to h unchanged.
struct VqForward {
  ad::Var z_st;
  ad::Var loss;
  std::vector<int> indices;
};
VqForward vq_quantize_graph(ad::Graph& g, ad::Var h_pros, const Codebook& codebook,
                            double beta = 0.25);

/// Commitment-term value and the closed-form encoder gradient 2*beta*(h-z);
/// exposed for gradient verification.
double vq_loss_value(const Mat& h, const Mat& z, double beta = 0.25);

/// Prosody encoder over the low-band mel: a frame-level convolutional stack,
/// duration-driven word pooling joined with pooled text and speaker states,
/// then a word-level convolutional stack.
class ProsodyEncoder {
 public:
  ProsodyEncoder(const ProsodyEncoderConfig& cfg, std::uint64_t init_seed);

  /// low_mel: frames x n_low_bins; h_txt: P x hidden; h_spk: 1 x hidden.
  /// Durations map frames onto phonemes (and so onto words).
  ad::Var forward(nn::Binder& bind, const Mat& low_mel, ad::Var h_txt,
                  ad::Var h_spk, const WordGrouping& grouping,
                  const std::vector<int>& durations, bool train,
                  Rng* drop_rng) const;

  const ProsodyEncoderConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

 private:
  ProsodyEncoderConfig cfg_;
  nn::ParamRegistry reg_;
  nn::Conv1d frame_conv1_, frame_conv2_;
  nn::LayerNorm frame_norm1_, frame_norm2_;
  nn::Conv1d word_conv1_, word_conv2_;
  nn::LayerNorm word_norm1_, word_norm2_;
  nn::Linear out_;
};

/// L x F pooling matrix mapping frame-level rows onto word means, derived
/// from per-phoneme durations and the word grouping.
Mat frame_to_word_pooling(const WordGrouping& grouping,
                          const std::vector<int>& durations);

}  // namespace ps
