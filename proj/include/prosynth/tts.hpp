#pragma once

#include <map>
#include <string>
#include <vector>

#include "prosynth/corpus.hpp"
#include "prosynth/nn.hpp"

namespace ps {

struct TtsConfig {
  int n_layers = 4;
  int hidden = 192;
  int filter = 384;
  int kernel = 5;
  int heads = 2;
  double dropout = 0.1;
  int n_mels = 80;
  bool use_word_encoder = true;  // ablation: false zeroes the word branch
  int speaker_import_dim = 256;  // external embedding width for the adapter
};

/// Learned speaker lookup table with an import adapter that projects
/// external embeddings onto the model width.
class SpeakerTable {
 public:
  SpeakerTable() = default;
  SpeakerTable(nn::ParamRegistry& reg, const std::string& name,
               const std::vector<std::string>& speaker_ids, int dim,
               int import_dim, Rng& rng);

  int index_of(const std::string& speaker_id) const;
  int count() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// 1 x dim embedding of one speaker, bound into the graph.
  ad::Var embed(nn::Binder& bind, int speaker_index) const;

  /// Projects an external embedding (import_dim wide) onto the table row.
  void import_embedding(const std::string& speaker_id, const Vec& external);

 private:
  std::vector<std::string> ids_;
  nn::Parameter* table_ = nullptr;       // n_speakers x dim
  nn::Parameter* projection_ = nullptr;  // buffer: import_dim x dim
};

/// Rounds duration-domain predictions to non-negative integer frame counts.
std::vector<int> round_durations(const Vec& duration_domain);
/// expm1 of log-domain predictions, then round_durations.
std::vector<int> durations_from_log(const Vec& log_domain);

/// Frame index -> phoneme index map; total length = sum(durations).
/// Throws when every duration is zero.
std::vector<int> length_regulate_indices(const std::vector<int>& durations);

/// MSE in the log(1+d) domain (evaluation-path helper; training uses the
/// graph builder below).
double duration_loss_value(const Vec& dur, const Vec& dur_pred);

/// Windowed SSIM constants: C1 = (0.01 R)^2, C2 = (0.03 R)^2 where R is the
/// dynamic range of the target batch (1.0 when the target is constant).
struct SsimParams {
  int window = 7;
  double c1 = 0.0, c2 = 0.0;
  static SsimParams from_target_range(double range, int window = 7);
};
double target_dynamic_range(const Mat& y);

/// Mean windowed SSIM between prediction (graph) and target (constant),
/// uniform window, valid region. The window shrinks to fit small inputs.
ad::Var ssim_graph(ad::Graph& g, ad::Var y_pred, const Mat& y, const SsimParams& p);

/// L_rec = MSE + (1 - SSIM).
ad::Var reconstruction_loss_graph(ad::Graph& g, ad::Var y_pred, const Mat& y,
                                  const SsimParams& p);
double reconstruction_loss_value(const Mat& y, const Mat& y_pred);
/// MSE between log-domain duration predictions and log(1+target).
ad::Var duration_loss_graph(ad::Graph& g, ad::Var log_pred,
                            const std::vector<int>& target_frames);

/// Non-autoregressive TTS: phoneme/word encoders, conditioning fusion,
/// duration predictor, length regulator, mel decoder.
class TtsModel {
 public:
  TtsModel(const TtsConfig& cfg, int phoneme_vocab, int word_vocab,
           const std::vector<std::string>& speaker_ids, std::uint64_t init_seed);

  struct TextEncoding {
    ad::Var h_txt;          // P x hidden
    ad::Var phoneme_feats;  // P x hidden (phoneme-encoder output alone)
    ad::Var word_feats;     // L x hidden (word-encoder outputs; zero when ablated)
  };

  TextEncoding encode_text(nn::Binder& bind, const std::vector<int>& phoneme_ids,
                           const std::vector<int>& word_ids,
                           const WordGrouping& grouping, bool train,
                           Rng* drop_rng) const;

  /// h_total[i] = h_txt[i] + h_spk + expand(z_pros)[i].
  ad::Var fuse_conditions(nn::Binder& bind, ad::Var h_txt, ad::Var h_spk,
                          ad::Var z_pros_word, const WordGrouping& grouping) const;

  /// Per-phoneme duration estimates in the log(1+d) domain, P x 1.
  ad::Var predict_durations(nn::Binder& bind, ad::Var h_total, bool train,
                            Rng* drop_rng) const;

  /// Repeats phoneme rows per duration; output has sum(durations) rows.
  ad::Var length_regulate(ad::Var h_total, const std::vector<int>& durations) const;

  /// Frame-level hidden sequence -> frames x n_mels mel prediction.
  ad::Var decode_mel(nn::Binder& bind, ad::Var frame_level, bool train,
                     Rng* drop_rng) const;

  /// Word-level conditioning for the latent prosody generator: word-encoder
  /// outputs plus mean-pooled phoneme-encoder states per word.
  ad::Var word_conditioning(nn::Binder& bind, const TextEncoding& enc,
                            const WordGrouping& grouping) const;

  const TtsConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }
  SpeakerTable& speakers() { return speakers_; }
  const SpeakerTable& speakers() const { return speakers_; }

 private:
  TtsConfig cfg_;
  nn::ParamRegistry reg_;
  nn::Embedding phoneme_emb_, word_emb_;
  std::vector<nn::FftBlock> phoneme_encoder_, word_encoder_, decoder_;
  nn::Linear mel_proj_;
  nn::Conv1d dp_conv1_, dp_conv2_;
  nn::LayerNorm dp_norm1_, dp_norm2_;
  nn::Linear dp_out_;
  SpeakerTable speakers_;
};

}  // namespace ps
