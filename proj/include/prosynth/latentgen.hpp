#pragma once

#include <vector>

#include "prosynth/diffusion.hpp"
#include "prosynth/nn.hpp"
#include "prosynth/prosody.hpp"

namespace ps {

/// Backbone configuration for the latent prosody generator (shared by the
/// few-step adversarial model and the DDPM baseline's denoiser).
struct LatentGenConfig {
  int blocks = 20;
  int hidden = 384;
  int d_noise = 64;
  int d_latent = 192;
  int d_cond = 192;  // word-level text conditioning width (speaker adds d_cond more)
  int t_emb_dim = 64;
  int cond_hidden = 256;
  int kernel = 3;  // 1 makes rows fully independent (batched row-wise use)
};

struct LatentDiscConfig {
  int conv_layers = 4;
  int hidden = 384;
  int d_latent = 192;
  int d_cond = 192;
  int t_emb_dim = 64;
  double leaky_slope = 0.2;
  int kernel = 3;
};

struct SampleStats {
  int generator_calls = 0;
};

/// Residual conv stack over the word axis that maps (x_t, t, noise z,
/// conditioning) to a clean-latent estimate x_0'. With the noise channel
/// zeroed it doubles as the DDPM baseline's epsilon-predictor at identical
/// cost per call.
class LatentGenerator {
 public:
  LatentGenerator(const LatentGenConfig& cfg, int max_timesteps,
                  std::uint64_t init_seed);

  /// z_noise is 1 x d_noise (one latent for the whole sequence) or
  /// rows(x_t) x d_noise (one per row).
  ad::Var forward(nn::Binder& bind, ad::Var x_t, int t, const Mat& z_noise,
                  ad::Var h_spk, ad::Var h_txt_word) const;

  /// Plain-value forward for sampling (no gradients retained).
  Mat evaluate(const Mat& x_t, int t, const Mat& z_noise, const Mat& h_spk,
               const Mat& h_txt_word) const;

  const LatentGenConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

 private:
  LatentGenConfig cfg_;
  int max_t_;
  nn::ParamRegistry reg_;
  nn::Linear in_proj_;
  nn::Linear cond1_, cond2_;                 // (t_emb, z) -> film input
  std::vector<nn::Linear> film_;             // per-block FiLM params
  std::vector<nn::Conv1d> block_conv_;
  nn::LayerNorm out_norm_;
  nn::Linear out_proj_;
};

/// Time-dependent discriminator judging whether x_{t-1} is a plausible
/// denoise of x_t under the conditioning.
class LatentDiscriminator {
 public:
  LatentDiscriminator(const LatentDiscConfig& cfg, int max_timesteps,
                      std::uint64_t init_seed);

  ad::Var forward(nn::Binder& bind, ad::Var x_prev, ad::Var x_t, int t,
                  ad::Var h_txt_word, ad::Var h_spk) const;

  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

 private:
  LatentDiscConfig cfg_;
  int max_t_;
  nn::ParamRegistry reg_;
  nn::Linear in_proj_, t_proj_;
  std::vector<nn::Conv1d> convs_;
  nn::Linear out_;
};

/// One training item: target word-level latents plus frozen conditioning.
struct LatentBatchItem {
  Mat x0;          // L x d_latent
  Mat h_txt_word;  // L x d_cond
  Mat h_spk;       // 1 x d_cond
};

struct DdganLossValues {
  double g_total = 0, g_mae = 0, g_adv = 0, d_loss = 0;
};

/// Alternating 1:1 adversarial step (discriminator first, then generator):
///   L_D = E[D(fake)^2 + (D(real)-1)^2],
///   L_G = MAE(x0, x0') + lambda2 * E[(D(x'_{t-1}) - 1)^2],
/// with t sampled uniformly in [1, T] per item, the real pair drawn from the
/// coupled forward chain, and the fake x'_{t-1} posterior-sampled from x0'.
/// apply_updates=false computes losses only.
DdganLossValues ddgan_training_step(LatentGenerator& gen, LatentDiscriminator& disc,
                                    const std::vector<LatentBatchItem>& batch,
                                    const DiffusionSchedule& sched, double lambda2,
                                    Rng& rng, nn::AdamW& opt_g, nn::AdamW& opt_d,
                                    bool apply_updates = true);

/// Few-step sampler: x_T ~ N(0, I); for t = T..1 predict x0' then posterior
/// sample; returns the final x0'. Exactly T generator calls.
Mat sample_prosody(const LatentGenerator& gen, const Mat& h_txt_word,
                   const Mat& h_spk, const DiffusionSchedule& sched, Rng& rng,
                   SampleStats* stats = nullptr);

/// DDPM baseline (epsilon prediction): returns the batch MSE.
double ddpm_training_step(LatentGenerator& eps_net,
                          const std::vector<LatentBatchItem>& batch,
                          const DiffusionSchedule& sched, Rng& rng,
                          nn::AdamW& opt, bool apply_updates = true);

/// Gaussian ancestral sampling over the full schedule (T denoiser calls).
Mat ddpm_sample(const LatentGenerator& eps_net, const Mat& h_txt_word,
                const Mat& h_spk, const DiffusionSchedule& sched, Rng& rng,
                SampleStats* stats = nullptr);

struct ArConfig {
  int layers = 4;
  int hidden = 384;
  int filter = 768;
  int kernel = 5;
  int heads = 2;
  double dropout = 0.1;
};

/// Autoregressive baseline: predicts codebook indices left to right with a
/// causal transformer over previous quantized vectors plus conditioning.
class ArPredictor {
 public:
  ArPredictor(const ArConfig& cfg, int codebook_size, int d_z, int d_cond,
              std::uint64_t init_seed);

  /// Teacher-forced logits, one row per position; position i conditions on
  /// codes[indices[0..i-1]] (learned start token at i = 0).
  ad::Var forward_logits(nn::Binder& bind, const std::vector<int>& target_indices,
                         const Mat& codes, ad::Var h_txt_word, ad::Var h_spk,
                         bool train, Rng* drop_rng) const;

  /// Mean next-index cross-entropy of a teacher-forced batch.
  double train_step(const std::vector<LatentBatchItem>& batch,
                    const std::vector<std::vector<int>>& target_indices,
                    const Codebook& codebook, nn::AdamW& opt, Rng& rng,
                    bool apply_updates = true);

  /// Greedy decoding, one sequential model call per word.
  std::vector<int> predict(const Codebook& codebook, const Mat& h_txt_word,
                           const Mat& h_spk, SampleStats* stats = nullptr) const;

  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }

 private:
  ad::Var embed_prefix(nn::Binder& bind, const std::vector<int>& prev_indices,
                       Index length, const Mat& codes, ad::Var h_txt_word,
                       ad::Var h_spk, bool train, Rng* drop_rng) const;

  ArConfig cfg_;
  int k_ = 0, d_z_ = 0;
  nn::ParamRegistry reg_;
  nn::Linear code_proj_, cond_proj_;
  nn::Parameter* start_token_ = nullptr;
  std::vector<nn::FftBlock> blocks_;
  nn::Linear logits_;
};

/// Mean cross-entropy of logits rows against target indices (stable
/// log-softmax), built on the graph.
ad::Var cross_entropy_rows(ad::Graph& g, ad::Var logits,
                           const std::vector<int>& targets);

}  // namespace ps
