#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prosynth/checkpoint.hpp"
#include "prosynth/corpus.hpp"
#include "prosynth/latentgen.hpp"
#include "prosynth/metrics.hpp"
#include "prosynth/pcd.hpp"
#include "prosynth/prosody.hpp"
#include "prosynth/tts.hpp"

namespace ps {

/// Full run configuration. Model defaults follow the published recipe;
/// training defaults are desk-scale (1/80 of the full step counts, batch 8);
/// full_scale restores the published counts.
struct RunConfig {
  std::uint64_t seed = 1234;

  // corpus
  int n_speakers = 2;
  int n_utterances = 8;
  AudioConfig audio;
  SyntheticCorpusParams synth;

  // models
  TtsConfig tts;
  ProsodyEncoderConfig prosody;
  int codebook_size = 128;
  double codebook_decay = 0.998;
  double vq_beta = 0.25;
  PcdConfig pcd;
  LatentGenConfig latent_gen;
  LatentDiscConfig latent_disc;
  ArConfig ar;
  int timesteps = 4;
  int ddpm_timesteps = 100;

  // training
  int stage1_steps = 2000;
  int stage2_steps = 4000;
  int batch_size = 8;
  double lr_stage1 = 5e-4;
  double lr_stage2 = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double weight_decay = 1e-4;
  double lambda1 = 0.01;
  double lambda2 = 0.05;
  double kmeans_fraction = 0.125;  // k-means trigger at this fraction of stage 1
  int log_every = 50;
  bool full_scale = false;

  // backend and ablations
  std::string backend = "ddgan";  // ddgan | ddpm | ar
  bool no_pcd = false;
  bool no_vq = false;
  bool detach_text_for_prosody = false;

  void apply_scale();  // full_scale -> published step counts and batch
  void validate() const;
  std::string canonical_string() const;
  std::string hash() const { return hex64(fnv1a64(canonical_string())); }
};

/// Frozen stage-1 state: vocabularies, lexicon, speaker table, TTS model,
/// prosody encoder and codebook. Construction either initializes fresh
/// weights from corpus records or restores everything from a checkpoint.
struct Stage1Bundle {
  PhonemeVocabulary pvocab;
  WordVocabulary wvocab;
  std::vector<std::string> speaker_ids;
  std::map<std::string, std::vector<std::string>> lexicon;  // word -> phonemes
  std::unique_ptr<TtsModel> tts;
  std::unique_ptr<ProsodyEncoder> prosody;
  std::unique_ptr<Codebook> codebook;

  static Stage1Bundle from_records(const RunConfig& cfg,
                                   const std::vector<UtteranceRecord>& records);
  static Stage1Bundle from_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt);

  /// Checksum over TTS + prosody-encoder weights plus the codebook.
  std::uint64_t weights_checksum() const;

  struct UtteranceInputs {
    std::vector<int> phoneme_ids, word_ids;
    WordGrouping grouping;
    int speaker_index = 0;
  };
  UtteranceInputs inputs_for(const UtteranceRecord& rec) const;

  /// Eval-mode word-level conditioning (h_txt_word, h_spk) for one utterance.
  std::pair<Mat, Mat> conditioning(const UtteranceInputs& in) const;
  /// Eval-mode continuous prosody latents from the low-band mel.
  Mat prosody_latents(const UtteranceRecord& rec, const UtteranceInputs& in,
                      int n_low_bins, bool detach_text) const;
};

struct StepLosses {
  double l_rec = 0, l_dur = 0, l_vq = 0, l_g = 0, l_d = 0, total = 0;
};

/// Joint TTS + prosody-encoder + VQ training with conditional adversarial
/// discriminators (stage 1).
class Stage1Trainer {
 public:
  Stage1Trainer(const RunConfig& cfg, std::vector<UtteranceRecord> records);

  /// One optimization step (discriminator and generator updates alternate
  /// 1:1). apply_updates=false computes losses and gradients only.
  StepLosses train_step(bool apply_updates = true);

  /// Runs to cfg.stage1_steps, writing a loss log and final checkpoint under
  /// out_dir. Returns the checkpoint path.
  std::string run(const std::string& out_dir);

  Checkpoint make_checkpoint(bool with_optimizer = true) const;
  void restore(const Checkpoint& ckpt);

  long step() const { return step_; }
  Stage1Bundle& bundle() { return bundle_; }
  const Stage1Bundle& bundle() const { return bundle_; }
  PcdSet& pcd() { return *pcd_; }
  const std::vector<UtteranceRecord>& records() const { return records_; }

  /// Eval-mode rounded duration predictions for one record (stage-1 path:
  /// prosody from the encoder).
  std::vector<int> predict_record_durations(std::size_t record_index);

 private:
  void maybe_init_codebook();
  void next_batch(std::vector<int>* batch);

  RunConfig cfg_;
  std::vector<UtteranceRecord> records_;
  Stage1Bundle bundle_;
  std::vector<Stage1Bundle::UtteranceInputs> inputs_;
  std::vector<Mat> low_mels_;
  std::unique_ptr<PcdSet> pcd_;
  nn::AdamW opt_main_, opt_d_;
  Rng rng_data_{0}, rng_dropout_{0}, rng_pcd_{0};
  long step_ = 0;
  std::vector<int> order_;
  std::size_t order_pos_ = 0;
  Mat kmeans_buffer_;
  Index kmeans_rows_ = 0;
};

/// Latent prosody generator training (stage 2) on frozen stage-1 outputs.
class Stage2Trainer {
 public:
  Stage2Trainer(const RunConfig& cfg, std::vector<UtteranceRecord> records,
                const Checkpoint& stage1_ckpt);

  double train_step(bool apply_updates = true);  // returns the headline loss
  std::string run(const std::string& out_dir);
  Checkpoint make_checkpoint(bool with_optimizer = true) const;

  long step() const { return step_; }
  const std::vector<LatentBatchItem>& targets() const { return items_; }
  const std::vector<std::vector<int>>& target_indices() const { return indices_; }
  const Stage1Bundle& stage1() const { return bundle_; }
  LatentGenerator* generator() { return gen_.get(); }
  ArPredictor* ar_predictor() { return ar_.get(); }
  const DiffusionSchedule& schedule() const { return sched_; }
  double last_mae() const { return last_mae_; }
  std::uint64_t stage1_checksum() const { return stage1_checksum_; }

 private:
  RunConfig cfg_;
  std::vector<UtteranceRecord> records_;
  Stage1Bundle bundle_;
  std::uint64_t stage1_checksum_ = 0;
  DiffusionSchedule sched_;
  std::vector<LatentBatchItem> items_;
  std::vector<std::vector<int>> indices_;
  std::unique_ptr<LatentGenerator> gen_;
  std::unique_ptr<LatentDiscriminator> disc_;
  std::unique_ptr<ArPredictor> ar_;
  nn::AdamW opt_g_, opt_d_;
  Rng rng_{0};
  long step_ = 0;
  std::vector<int> order_;
  std::size_t order_pos_ = 0;
  double last_mae_ = 0;
};

/// Mel-to-audio adapter slot; the bundled fallback is phase reconstruction.
using VocoderFn = std::function<Vec(const MelSpectrogram&)>;

struct SynthesisResult {
  MelSpectrogram mel;
  std::vector<int> prosody_indices;  // empty when VQ is bypassed
  std::vector<int> durations;
  int generator_calls = 0;
  // Wall-clock seconds of the five inference steps, in order:
  // text/speaker encoding, latent prosody generation, vector quantization,
  // mel decoding, vocoding.
  double t_encode = 0, t_prosody = 0, t_vq = 0, t_decode = 0, t_vocode = 0;
  Vec audio;  // empty unless vocoding ran
};

/// Inference over a stage-1 + stage-2 checkpoint pair. Refuses pairs whose
/// codebook hashes disagree.
class SynthesisEngine {
 public:
  SynthesisEngine(const RunConfig& cfg, const Checkpoint& stage1,
                  const Checkpoint& stage2);

  SynthesisResult synthesize(const std::string& text,
                             const std::string& speaker_id, std::uint64_t seed,
                             const VocoderFn& vocoder = nullptr);

  const RunConfig& config() const { return cfg_; }
  const Stage1Bundle& stage1() const { return bundle_; }
  std::size_t backend_parameter_count() const;

 private:
  RunConfig cfg_;
  Stage1Bundle bundle_;
  DiffusionSchedule sched_;
  std::unique_ptr<LatentGenerator> gen_;
  std::unique_ptr<ArPredictor> ar_;
  DictionaryG2p g2p_;
};

struct EvalOptions {
  bool self_comparison = false;     // score ground truth against itself
  std::string pitch_mode = "none";  // none | audio (vocode + autocorrelation)
  std::uint64_t seed = 1;
  int n_bins = 100;
};

struct EvalReport {
  nlohmann::ordered_json report;  // deterministic metrics
  nlohmann::ordered_json timing;  // wall-clock measurements (not reproducible)
  std::string summary;            // human-readable table
  std::vector<double> gt_log_energy, gen_log_energy;
  std::vector<double> gt_log_f0, gen_log_f0;
};

/// External scorer adapters: each maps (ground truth, synthesized mel) pairs
/// to a rate. Absent scorers mark their rows "skipped".
struct ExternalScorers {
  std::function<double(const std::vector<UtteranceRecord>&,
                       const std::vector<MelSpectrogram>&)>
      cer, wer, eer;
};

EvalReport evaluate(SynthesisEngine& engine,
                    const std::vector<UtteranceRecord>& test_records,
                    const EvalOptions& options,
                    const ExternalScorers& scorers = {});

/// Ground-truth-only variant of evaluate (no synthesis, no stage-2 models):
/// scores every record against itself through the full metric path.
EvalReport evaluate_self(const std::vector<UtteranceRecord>& test_records,
                         const EvalOptions& options);

/// Writes report.json, timing.json, summary.txt and histogram SVGs.
void write_eval_artifacts(const EvalReport& report, const std::string& out_dir);

/// Trains and evaluates the ablation grid. Axes (comma separated):
///   backends -> ddgan / ar / ddpm rows,
///   pcd      -> a no_pcd row,
///   vq       -> a no_vq row,
///   melbins  -> prosody-encoder input widths {10,20,30,40,60,80}.
/// Writes per-configuration artifacts plus backend_table.txt (the
/// generation-method comparison) and melbins_table.txt under out_dir.
void run_ablation_grid(const RunConfig& base,
                       const std::vector<UtteranceRecord>& records,
                       const std::string& out_dir,
                       const std::string& axes = "backends,pcd,vq,melbins");

/// Overlaid-histogram SVG (used for the log-f0 / log-energy figures).
std::string histogram_svg(const std::vector<double>& gt,
                          const std::vector<double>& generated,
                          const std::string& title, int n_bins = 40);

}  // namespace ps
