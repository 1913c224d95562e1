#pragma once

#include <vector>

#include "prosynth/nn.hpp"

namespace ps {

/// Multi-length discriminator window sizes in frames.
struct WindowSpec {
  std::vector<int> lengths = {32, 64, 128};

  void validate() const {
    if (lengths.empty()) throw ArgumentError("WindowSpec: needs >= 1 length");
    int prev = 0;
    for (int w : lengths) {
      if (w <= prev) throw ArgumentError("WindowSpec: lengths must be positive ascending");
      prev = w;
    }
  }
};

/// One clipped (mel, frame-level prosody) window pair; both share the window
/// length and start frame.
struct PcdBatch {
  Mat mel_window;   // w x n_mels
  Mat pros_window;  // w x d_z
  Index start = 0;
  std::size_t spec_index = 0;
};

/// Clips one window per spec entry at a uniform random start; entries longer
/// than the utterance are skipped.
std::vector<PcdBatch> clip_windows(const Mat& mel, const Mat& pros_frame_level,
                                   const WindowSpec& spec, Rng& rng);

struct PcdConfig {
  WindowSpec windows;
  int n_mels = 80;
  int d_z = 192;
  std::vector<int> channels = {8, 16, 32};  // three 3x3 stride-2 convs
  int fc1 = 128, fc2 = 64;
  double leaky_slope = 0.2;
};

/// Reorders an H x W image Var into an (H*W) x 1 pixel column with
/// s = y*W + x, the layout Conv2d consumes.
ad::Var image_to_pixel_column(ad::Var img);

/// One conv/FC scoring branch over fixed-size single-channel windows.
class PcdBranch {
 public:
  PcdBranch() = default;
  PcdBranch(nn::ParamRegistry& reg, const std::string& name, const PcdConfig& cfg,
            int window_len, int width, Rng& rng);
  /// windows: one Var per batch item, each window_len x width. Gradients
  /// flow back into window Vars that are graph-connected.
  ad::Var forward(nn::Binder& bind, const std::vector<ad::Var>& windows, bool train);

 private:
  int window_len_ = 0, width_ = 0;
  nn::Conv2d conv1_, conv2_, conv3_;
  nn::BatchNorm bn1_, bn2_, bn3_;
  nn::Linear fc1_, fc2_, fc3_;
  double slope_ = 0.2;
};

/// Prosody conditional discriminator for one window length: an
/// unconditional branch over the mel window plus a conditional branch over
/// the mel window concatenated with the prosody window along the feature
/// axis; the score is the sum of both heads.
class PcdDiscriminator {
 public:
  PcdDiscriminator() = default;
  PcdDiscriminator(nn::ParamRegistry& reg, const std::string& name,
                   const PcdConfig& cfg, int window_len, Rng& rng);
  /// Returns B x 1 scores.
  ad::Var score(nn::Binder& bind, const std::vector<ad::Var>& mel_windows,
                const std::vector<ad::Var>& pros_windows, bool train);

 private:
  int window_len_ = 0;
  int n_mels_ = 0, d_z_ = 0;
  PcdBranch uncond_, cond_;
};

/// The multi-window discriminator set of stage-1 adversarial training.
class PcdSet {
 public:
  explicit PcdSet(const PcdConfig& cfg, std::uint64_t init_seed);

  const PcdConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

  /// Scores the windows of one spec index; shapes must match that window.
  ad::Var discriminate(nn::Binder& bind, std::size_t spec_index,
                       const std::vector<ad::Var>& mel_windows,
                       const std::vector<ad::Var>& pros_windows, bool train);

  /// Convenience overload for plain-matrix windows (no gradient into them).
  ad::Var discriminate(nn::Binder& bind, std::size_t spec_index,
                       const std::vector<Mat>& mel_windows,
                       const std::vector<Mat>& pros_windows, bool train);

 private:
  PcdConfig cfg_;
  nn::ParamRegistry reg_;
  std::vector<PcdDiscriminator> discriminators_;
};

/// Least-squares GAN objectives over per-window score lists:
///   L_D = sum_i E[(D_i(fake))^2] + E[(D_i(real) - 1)^2]
///   L_G = sum_i E[(D_i(fake) - 1)^2]
struct LsganLosses {
  ad::Var d_loss;
  ad::Var g_loss;
};
LsganLosses lsgan_losses(ad::Graph& g, const std::vector<ad::Var>& real_scores,
                         const std::vector<ad::Var>& fake_scores);

/// L_TTS = L_rec + L_dur + L_vq + lambda1 * L_G.
ad::Var total_tts_loss(ad::Var l_rec, ad::Var l_dur, ad::Var l_vq, ad::Var l_g,
                       double lambda1);
double total_tts_loss_value(double l_rec, double l_dur, double l_vq, double l_g,
                            double lambda1);

}  // namespace ps
