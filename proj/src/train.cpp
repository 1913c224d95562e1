#include "prosynth/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace ps {

using ad::Var;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::apply_scale() {
  if (full_scale) {
    stage1_steps = 160000;
    stage2_steps = 320000;
    batch_size = 48;
  }
}

void RunConfig::validate() const {
  audio.validate();
  pcd.windows.validate();
  if (backend != "ddgan" && backend != "ddpm" && backend != "ar")
    throw ArgumentError("config: backend must be ddgan, ddpm or ar");
  if (no_vq && backend == "ar")
    throw ArgumentError(
        "config: the ar backend predicts codebook indices and cannot run "
        "with no_vq");
  if (batch_size < 1) throw ArgumentError("config: batch_size must be >= 1");
  if (stage1_steps < 0 || stage2_steps < 0)
    throw ArgumentError("config: step counts must be >= 0");
  if (kmeans_fraction <= 0.0 || kmeans_fraction > 1.0)
    throw ArgumentError("config: kmeans_fraction must lie in (0, 1]");
  if (prosody.n_low_bins < 1 || prosody.n_low_bins > audio.n_mels)
    throw ArgumentError("config: prosody mel bins out of range");
  if (timesteps < 1 || ddpm_timesteps < 2)
    throw ArgumentError("config: bad timestep counts");
  if (lambda1 < 0 || lambda2 < 0)
    throw ArgumentError("config: adversarial weights must be >= 0");
}

std::string RunConfig::canonical_string() const {
  std::ostringstream os;
  auto put = [&](const char* key, const std::string& value) {
    os << key << '=' << value << '\n';
  };
  auto putd = [&](const char* key, double v) { put(key, format_double(v)); };
  auto puti = [&](const char* key, long long v) { put(key, std::to_string(v)); };
  puti("seed", static_cast<long long>(seed));
  puti("n_speakers", n_speakers);
  puti("n_utterances", n_utterances);
  putd("audio.sample_rate", audio.sample_rate);
  puti("audio.n_fft", audio.n_fft);
  puti("audio.hop", audio.hop);
  puti("audio.n_mels", audio.n_mels);
  putd("audio.mel_fmin", audio.mel_fmin);
  putd("audio.mel_fmax", audio.mel_fmax);
  puti("synth.lowband_bins", synth.lowband_bins);
  putd("synth.speaker_lowband_offset", synth.speaker_lowband_offset);
  putd("synth.word_perturb_amp", synth.word_perturb_amp);
  putd("synth.pitch_perturb_octaves", synth.pitch_perturb_octaves);
  putd("synth.base_pitch_hz", synth.base_pitch_hz);
  puti("synth.min_words", synth.min_words);
  puti("synth.max_words", synth.max_words);
  puti("synth.min_dur", synth.min_dur);
  puti("synth.max_dur", synth.max_dur);
  puti("tts.n_layers", tts.n_layers);
  puti("tts.hidden", tts.hidden);
  puti("tts.filter", tts.filter);
  puti("tts.kernel", tts.kernel);
  puti("tts.heads", tts.heads);
  putd("tts.dropout", tts.dropout);
  puti("tts.n_mels", tts.n_mels);
  puti("tts.use_word_encoder", tts.use_word_encoder ? 1 : 0);
  puti("prosody.n_low_bins", prosody.n_low_bins);
  puti("prosody.hidden", prosody.hidden);
  puti("prosody.d_z", prosody.d_z);
  puti("prosody.kernel", prosody.kernel);
  puti("codebook_size", codebook_size);
  putd("codebook_decay", codebook_decay);
  putd("vq_beta", vq_beta);
  {
    std::string w;
    for (int l : pcd.windows.lengths) w += std::to_string(l) + ",";
    put("pcd.windows", w);
  }
  puti("latent_gen.blocks", latent_gen.blocks);
  puti("latent_gen.hidden", latent_gen.hidden);
  puti("latent_gen.d_noise", latent_gen.d_noise);
  puti("latent_gen.kernel", latent_gen.kernel);
  puti("latent_disc.conv_layers", latent_disc.conv_layers);
  puti("latent_disc.hidden", latent_disc.hidden);
  puti("ar.layers", ar.layers);
  puti("ar.hidden", ar.hidden);
  puti("ar.filter", ar.filter);
  puti("timesteps", timesteps);
  puti("ddpm_timesteps", ddpm_timesteps);
  puti("stage1_steps", stage1_steps);
  puti("stage2_steps", stage2_steps);
  puti("batch_size", batch_size);
  putd("lr_stage1", lr_stage1);
  putd("lr_stage2", lr_stage2);
  putd("adam_beta1", adam_beta1);
  putd("adam_beta2", adam_beta2);
  putd("weight_decay", weight_decay);
  putd("lambda1", lambda1);
  putd("lambda2", lambda2);
  putd("kmeans_fraction", kmeans_fraction);
  puti("log_every", log_every);
  puti("full_scale", full_scale ? 1 : 0);
  put("backend", backend);
  puti("no_pcd", no_pcd ? 1 : 0);
  puti("no_vq", no_vq ? 1 : 0);
  puti("detach_text_for_prosody", detach_text_for_prosody ? 1 : 0);
  return os.str();
}

// ---------------------------------------------------------------------------
// Stage1Bundle

namespace {

std::vector<std::string> sorted_speaker_ids(
    const std::vector<UtteranceRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records)
    if (std::find(ids.begin(), ids.end(), r.speaker_id) == ids.end())
      ids.push_back(r.speaker_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

constexpr std::uint64_t kTtsSeedOffset = 0x10001;
constexpr std::uint64_t kProsodySeedOffset = 0x20002;
constexpr std::uint64_t kPcdSeedOffset = 0x30003;
constexpr std::uint64_t kGenSeedOffset = 0x40004;
constexpr std::uint64_t kDiscSeedOffset = 0x50005;
constexpr std::uint64_t kArSeedOffset = 0x60006;

}  // namespace

Stage1Bundle Stage1Bundle::from_records(
    const RunConfig& cfg, const std::vector<UtteranceRecord>& records) {
  if (records.empty()) throw ArgumentError("stage 1: empty corpus");
  Stage1Bundle b;
  b.pvocab = build_phoneme_vocabulary(records);
  b.wvocab = build_word_vocabulary(records);
  b.speaker_ids = sorted_speaker_ids(records);
  for (const auto& r : records)
    for (int w = 0; w < r.grouping.words(); ++w) {
      const auto [s, e] = r.grouping.word_spans[w];
      if (!b.lexicon.count(r.words[w]))
        b.lexicon[r.words[w]] = std::vector<std::string>(
            r.phonemes.begin() + s, r.phonemes.begin() + e);
    }
  TtsConfig tts_cfg = cfg.tts;
  tts_cfg.n_mels = cfg.audio.n_mels;
  b.tts = std::make_unique<TtsModel>(tts_cfg, b.pvocab.size(), b.wvocab.size(),
                                     b.speaker_ids, cfg.seed + kTtsSeedOffset);
  b.prosody = std::make_unique<ProsodyEncoder>(cfg.prosody,
                                               cfg.seed + kProsodySeedOffset);
  b.codebook = std::make_unique<Codebook>(cfg.codebook_size, cfg.prosody.d_z,
                                          cfg.codebook_decay);
  return b;
}

Stage1Bundle Stage1Bundle::from_checkpoint(const RunConfig& cfg,
                                           const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  if (!meta.contains("stage") || meta["stage"].get<int>() != 1)
    throw StateError("stage-1 checkpoint expected");
  Stage1Bundle b;
  for (const auto& s : meta["phoneme_symbols"]) {
    const std::string sym = s.get<std::string>();
    if (sym != "<pad>") b.pvocab.add(sym);
  }
  for (const auto& s : meta["word_tokens"]) {
    const std::string tok = s.get<std::string>();
    if (tok != "<unk>") b.wvocab.add(tok);
  }
  for (const auto& s : meta["speaker_ids"]) b.speaker_ids.push_back(s);
  for (auto it = meta["lexicon"].begin(); it != meta["lexicon"].end(); ++it) {
    std::vector<std::string> phones;
    for (const auto& p : it.value()) phones.push_back(p.get<std::string>());
    b.lexicon[it.key()] = std::move(phones);
  }
  TtsConfig tts_cfg = cfg.tts;
  tts_cfg.n_mels = cfg.audio.n_mels;
  b.tts = std::make_unique<TtsModel>(tts_cfg, b.pvocab.size(), b.wvocab.size(),
                                     b.speaker_ids, cfg.seed + kTtsSeedOffset);
  b.prosody = std::make_unique<ProsodyEncoder>(cfg.prosody,
                                               cfg.seed + kProsodySeedOffset);
  b.codebook = std::make_unique<Codebook>(cfg.codebook_size, cfg.prosody.d_z,
                                          cfg.codebook_decay);
  ckpt.load_registry("tts", b.tts->params());
  ckpt.load_registry("prosody", b.prosody->params());
  b.codebook->restore(ckpt.get("codebook.codes"),
                      Vec(ckpt.get("codebook.ema_counts").col(0)),
                      ckpt.get("codebook.ema_sums"),
                      meta["codebook_initialized"].get<bool>());
  return b;
}

std::uint64_t Stage1Bundle::weights_checksum() const {
  std::uint64_t h = tts->params().checksum();
  h ^= prosody->params().checksum() * 1099511628211ull;
  h ^= codebook->hash();
  return h;
}

Stage1Bundle::UtteranceInputs Stage1Bundle::inputs_for(
    const UtteranceRecord& rec) const {
  UtteranceInputs in;
  for (const auto& p : rec.phonemes) in.phoneme_ids.push_back(pvocab.id(p));
  for (const auto& w : rec.words) in.word_ids.push_back(wvocab.id(w));
  in.grouping = rec.grouping;
  in.speaker_index = tts->speakers().index_of(rec.speaker_id);
  return in;
}

std::pair<Mat, Mat> Stage1Bundle::conditioning(const UtteranceInputs& in) const {
  ad::Graph g;
  nn::Binder bind(g);
  auto enc = tts->encode_text(bind, in.phoneme_ids, in.word_ids, in.grouping,
                              false, nullptr);
  Var cond = tts->word_conditioning(bind, enc, in.grouping);
  Var spk = tts->speakers().embed(bind, in.speaker_index);
  return {cond.value(), spk.value()};
}

Mat Stage1Bundle::prosody_latents(const UtteranceRecord& rec,
                                  const UtteranceInputs& in, int n_low_bins,
                                  bool detach_text) const {
  ad::Graph g;
  nn::Binder bind(g);
  auto enc = tts->encode_text(bind, in.phoneme_ids, in.word_ids, in.grouping,
                              false, nullptr);
  Var h_txt = detach_text ? ad::stop_gradient(enc.h_txt) : enc.h_txt;
  Var spk = tts->speakers().embed(bind, in.speaker_index);
  Var h = prosody->forward(bind, rec.mel.data.leftCols(n_low_bins), h_txt, spk,
                           in.grouping, rec.durations, false, nullptr);
  return h.value();
}

// ---------------------------------------------------------------------------
// Stage1Trainer

namespace {
constexpr Index kKmeansBufferCap = 4096;
}

Stage1Trainer::Stage1Trainer(const RunConfig& cfg,
                             std::vector<UtteranceRecord> records)
    : cfg_(cfg), records_(std::move(records)) {
  cfg_.validate();
  for (const auto& r : records_) r.validate();
  bundle_ = Stage1Bundle::from_records(cfg_, records_);
  for (const auto& r : records_) {
    inputs_.push_back(bundle_.inputs_for(r));
    low_mels_.push_back(r.mel.data.leftCols(cfg_.prosody.n_low_bins));
  }
  PcdConfig pcd_cfg = cfg_.pcd;
  pcd_cfg.n_mels = cfg_.audio.n_mels;
  pcd_cfg.d_z = cfg_.prosody.d_z;
  pcd_ = std::make_unique<PcdSet>(pcd_cfg, cfg_.seed + kPcdSeedOffset);
  opt_main_ = nn::AdamW{cfg_.lr_stage1, cfg_.adam_beta1, cfg_.adam_beta2, 1e-9,
                        cfg_.weight_decay, 0};
  opt_d_ = opt_main_;
  rng_data_ = Rng(cfg_.seed + 11);
  rng_dropout_ = Rng(cfg_.seed + 22);
  rng_pcd_ = Rng(cfg_.seed + 33);
  kmeans_buffer_ = Mat::Zero(kKmeansBufferCap, cfg_.prosody.d_z);
}

void Stage1Trainer::next_batch(std::vector<int>* batch) {
  batch->clear();
  for (int b = 0; b < cfg_.batch_size; ++b) {
    if (order_pos_ >= order_.size()) {
      order_.resize(records_.size());
      for (std::size_t i = 0; i < order_.size(); ++i)
        order_[i] = static_cast<int>(i);
      // Fisher-Yates with the data stream.
      for (std::size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[rng_data_.uniform_int(i)]);
      order_pos_ = 0;
    }
    batch->push_back(order_[order_pos_++]);
  }
}

void Stage1Trainer::maybe_init_codebook() {
  if (cfg_.no_vq || bundle_.codebook->initialized()) return;
  const long trigger = std::max(
      1L, static_cast<long>(cfg_.kmeans_fraction * cfg_.stage1_steps));
  if (step_ < trigger) return;
  if (kmeans_rows_ < bundle_.codebook->size()) return;  // wait for the buffer
  Rng km(cfg_.seed + 44);
  bundle_.codebook->kmeans_init(kmeans_buffer_.topRows(kmeans_rows_), km);
}

StepLosses Stage1Trainer::train_step(bool apply_updates) {
  std::vector<int> batch;
  next_batch(&batch);
  maybe_init_codebook();

  const bool vq_active = !cfg_.no_vq && bundle_.codebook->initialized();
  const bool pcd_active = !cfg_.no_pcd;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const std::size_t n_sizes = cfg_.pcd.windows.lengths.size();

  bundle_.tts->params().zero_grad();
  bundle_.prosody->params().zero_grad();
  if (pcd_active) pcd_->params().zero_grad();

  // Batch dynamic range of the targets drives the SSIM constants.
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (int idx : batch) {
    ymin = std::min(ymin, records_[idx].mel.data.minCoeff());
    ymax = std::max(ymax, records_[idx].mel.data.maxCoeff());
  }
  const SsimParams ssim = SsimParams::from_target_range(ymax - ymin);

  StepLosses losses;
  struct WindowSet {
    std::vector<Mat> real_mel, fake_mel, z_window;
  };
  std::vector<WindowSet> window_sets(n_sizes);
  std::vector<Mat> batch_h_pros;
  std::vector<std::vector<int>> batch_indices;

  for (int idx : batch) {
    const auto& rec = records_[idx];
    const auto& in = inputs_[idx];
    ad::Graph g;
    nn::Binder bind(g);

    auto enc = bundle_.tts->encode_text(bind, in.phoneme_ids, in.word_ids,
                                        in.grouping, true, &rng_dropout_);
    Var h_spk = bundle_.tts->speakers().embed(bind, in.speaker_index);
    Var h_txt_for_pros =
        cfg_.detach_text_for_prosody ? ad::stop_gradient(enc.h_txt) : enc.h_txt;
    Var h_pros =
        bundle_.prosody->forward(bind, low_mels_[idx], h_txt_for_pros, h_spk,
                                 in.grouping, rec.durations, true, &rng_dropout_);
    batch_h_pros.push_back(h_pros.value());

    Var z_word{};
    Var l_vq{};
    if (vq_active) {
      VqForward vq = vq_quantize_graph(g, h_pros, *bundle_.codebook, cfg_.vq_beta);
      z_word = vq.z_st;
      l_vq = vq.loss;
      batch_indices.push_back(std::move(vq.indices));
    } else {
      z_word = h_pros;
      l_vq = ad::constant(g, Mat::Zero(1, 1));
      batch_indices.emplace_back();
    }

    Var h_total = bundle_.tts->fuse_conditions(bind, enc.h_txt, h_spk, z_word,
                                               in.grouping);
    Var dur_pred =
        bundle_.tts->predict_durations(bind, h_total, true, &rng_dropout_);
    Var l_dur = duration_loss_graph(g, dur_pred, rec.durations);
    Var frame_level = bundle_.tts->length_regulate(h_total, rec.durations);
    Var mel_pred =
        bundle_.tts->decode_mel(bind, frame_level, true, &rng_dropout_);
    Var l_rec = reconstruction_loss_graph(g, mel_pred, rec.mel.data, ssim);

    Var l_g = ad::constant(g, Mat::Zero(1, 1));
    if (pcd_active) {
      // Expand z to frame level along the ground-truth durations.
      std::vector<int> frame_word(rec.mel.frames());
      {
        Index f = 0;
        for (int p = 0; p < in.grouping.phonemes(); ++p)
          for (int k = 0; k < rec.durations[p]; ++k, ++f)
            frame_word[f] = in.grouping.word_of(p);
      }
      Var z_frames = ad::gather_rows(z_word, frame_word);
      const auto windows = clip_windows(rec.mel.data, z_frames.value(),
                                        cfg_.pcd.windows, rng_pcd_);
      for (const auto& w : windows) {
        const int len = cfg_.pcd.windows.lengths[w.spec_index];
        Var mel_win = ad::slice_rows(mel_pred, w.start, len);
        Var z_win = ad::slice_rows(z_frames, w.start, len);
        Var score = pcd_->discriminate(bind, w.spec_index, {mel_win}, {z_win},
                                       /*train=*/true);
        l_g = ad::add(l_g, ad::square(ad::add_scalar(score, -1.0)));
        auto& set = window_sets[w.spec_index];
        set.real_mel.push_back(w.mel_window);
        set.fake_mel.push_back(mel_pred.value().middleRows(w.start, len));
        set.z_window.push_back(w.pros_window);
      }
    }

    Var total = ad::scale(
        total_tts_loss(l_rec, l_dur, l_vq, l_g, cfg_.lambda1), inv_b);
    g.backward(total.node);
    bind.harvest();

    losses.l_rec += l_rec.scalar() * inv_b;
    losses.l_dur += l_dur.scalar() * inv_b;
    losses.l_vq += l_vq.scalar() * inv_b;
    losses.l_g += l_g.scalar() * inv_b;
    losses.total += total.scalar();
  }

  // Discriminator objective on the same batch (fake mels detached). The
  // generator pass above intentionally leaked gradients into the
  // discriminator registry; they are discarded here.
  if (pcd_active) {
    pcd_->params().zero_grad();
    ad::Graph g;
    nn::Binder bind(g);
    Var d_loss = ad::constant(g, Mat::Zero(1, 1));
    bool any = false;
    for (std::size_t i = 0; i < n_sizes; ++i) {
      auto& set = window_sets[i];
      if (set.real_mel.empty()) continue;
      any = true;
      Var real = pcd_->discriminate(bind, i, set.real_mel, set.z_window, true);
      Var fake = pcd_->discriminate(bind, i, set.fake_mel, set.z_window, true);
      d_loss = ad::add(
          d_loss, ad::add(ad::mean(ad::square(fake)),
                          ad::mean(ad::square(ad::add_scalar(real, -1.0)))));
    }
    if (any) {
      losses.l_d = d_loss.scalar();
      if (apply_updates) {
        g.backward(d_loss.node);
        bind.harvest();
        opt_d_.step(pcd_->params().trainable());
      }
    }
  }

  if (!std::isfinite(losses.total) || !std::isfinite(losses.l_d))
    throw NumericalError("stage 1: non-finite loss at step " +
                         std::to_string(step_));

  if (apply_updates) {
    std::vector<nn::Parameter*> params = bundle_.tts->params().trainable();
    for (auto* p : bundle_.prosody->params().trainable()) params.push_back(p);
    opt_main_.step(params);

    if (vq_active) {
      Index total_rows = 0;
      for (const auto& h : batch_h_pros) total_rows += h.rows();
      Mat all(total_rows, cfg_.prosody.d_z);
      std::vector<int> all_idx;
      Index r = 0;
      for (std::size_t i = 0; i < batch_h_pros.size(); ++i) {
        all.middleRows(r, batch_h_pros[i].rows()) = batch_h_pros[i];
        r += batch_h_pros[i].rows();
        for (int k : batch_indices[i]) all_idx.push_back(k);
      }
      bundle_.codebook->ema_update(all, all_idx);
    } else if (!cfg_.no_vq) {
      // Pre-initialization: collect prosody vectors for k-means.
      for (const auto& h : batch_h_pros)
        for (Index i = 0; i < h.rows(); ++i) {
          kmeans_buffer_.row(kmeans_rows_ % kKmeansBufferCap) = h.row(i);
          if (kmeans_rows_ < kKmeansBufferCap) ++kmeans_rows_;
        }
    }
    ++step_;
  }
  return losses;
}

std::vector<int> Stage1Trainer::predict_record_durations(std::size_t record_index) {
  const auto& rec = records_.at(record_index);
  const auto& in = inputs_.at(record_index);
  ad::Graph g;
  nn::Binder bind(g);
  auto enc = bundle_.tts->encode_text(bind, in.phoneme_ids, in.word_ids,
                                      in.grouping, false, nullptr);
  Var h_spk = bundle_.tts->speakers().embed(bind, in.speaker_index);
  Var h_pros = bundle_.prosody->forward(bind, low_mels_[record_index], enc.h_txt,
                                        h_spk, in.grouping, rec.durations, false,
                                        nullptr);
  Var z{};
  if (!cfg_.no_vq && bundle_.codebook->initialized())
    z = vq_quantize_graph(g, h_pros, *bundle_.codebook, cfg_.vq_beta).z_st;
  else
    z = h_pros;
  Var h_total =
      bundle_.tts->fuse_conditions(bind, enc.h_txt, h_spk, z, in.grouping);
  Var pred = bundle_.tts->predict_durations(bind, h_total, false, nullptr);
  return durations_from_log(pred.value().col(0));
}

Checkpoint Stage1Trainer::make_checkpoint(bool with_optimizer) const {
  Checkpoint ckpt;
  ordered_json& meta = ckpt.metadata;
  meta["stage"] = 1;
  meta["version"] = kVersionString;
  meta["config_hash"] = cfg_.hash();
  meta["step"] = step_;
  meta["codebook_initialized"] = bundle_.codebook->initialized();
  meta["codebook_hash"] = hex64(bundle_.codebook->hash());
  {
    ordered_json arr = ordered_json::array();
    for (int i = 0; i < bundle_.pvocab.size(); ++i)
      arr.push_back(bundle_.pvocab.symbol(i));
    meta["phoneme_symbols"] = arr;
  }
  {
    ordered_json arr = ordered_json::array();
    for (int i = 0; i < bundle_.wvocab.size(); ++i)
      arr.push_back(bundle_.wvocab.token(i));
    meta["word_tokens"] = arr;
  }
  meta["speaker_ids"] = bundle_.speaker_ids;
  {
    ordered_json lex = ordered_json::object();
    for (const auto& [word, phones] : bundle_.lexicon) lex[word] = phones;
    meta["lexicon"] = lex;
  }
  meta["rng_data"] = rng_data_.state();
  meta["rng_dropout"] = rng_dropout_.state();
  meta["rng_pcd"] = rng_pcd_.state();
  meta["opt_main_steps"] = opt_main_.step_count;
  meta["opt_d_steps"] = opt_d_.step_count;
  meta["order"] = order_;
  meta["order_pos"] = order_pos_;
  meta["kmeans_rows"] = kmeans_rows_;

  ckpt.put_registry("tts", bundle_.tts->params(), with_optimizer);
  ckpt.put_registry("prosody", bundle_.prosody->params(), with_optimizer);
  ckpt.put_registry("pcd", pcd_->params(), with_optimizer);
  ckpt.put("codebook.codes", bundle_.codebook->codes());
  ckpt.put("codebook.ema_counts", bundle_.codebook->ema_counts());
  ckpt.put("codebook.ema_sums", bundle_.codebook->ema_sums());
  ckpt.put("kmeans_buffer", kmeans_buffer_);
  return ckpt;
}

void Stage1Trainer::restore(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  if (!meta.contains("stage") || meta["stage"].get<int>() != 1)
    throw StateError("restore: stage-1 checkpoint expected");
  if (meta["config_hash"].get<std::string>() != cfg_.hash())
    throw StateError("restore: config hash mismatch (" +
                     meta["config_hash"].get<std::string>() + " vs " +
                     cfg_.hash() + ")");
  ckpt.load_registry("tts", bundle_.tts->params());
  ckpt.load_registry("prosody", bundle_.prosody->params());
  ckpt.load_registry("pcd", pcd_->params());
  bundle_.codebook->restore(ckpt.get("codebook.codes"),
                            Vec(ckpt.get("codebook.ema_counts").col(0)),
                            ckpt.get("codebook.ema_sums"),
                            meta["codebook_initialized"].get<bool>());
  rng_data_.set_state(meta["rng_data"].get<std::string>());
  rng_dropout_.set_state(meta["rng_dropout"].get<std::string>());
  rng_pcd_.set_state(meta["rng_pcd"].get<std::string>());
  opt_main_.step_count = meta["opt_main_steps"].get<long>();
  opt_d_.step_count = meta["opt_d_steps"].get<long>();
  step_ = meta["step"].get<long>();
  order_ = meta["order"].get<std::vector<int>>();
  order_pos_ = meta["order_pos"].get<std::size_t>();
  kmeans_rows_ = meta["kmeans_rows"].get<Index>();
  kmeans_buffer_ = ckpt.get("kmeans_buffer");
}

std::string Stage1Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "stage1_loss.log").string();
  std::ofstream log(log_path);
  if (!log) throw ArgumentError("stage 1: cannot write " + log_path);
  log << "# config_hash=" << cfg_.hash() << " version=" << kVersionString << "\n";
  if (cfg_.no_pcd)
    log << "# step l_rec l_dur l_vq total\n";
  else
    log << "# step l_rec l_dur l_vq l_g l_d total\n";

  try {
    while (step_ < cfg_.stage1_steps) {
      const StepLosses l = train_step();
      if (step_ % cfg_.log_every == 0 || step_ == cfg_.stage1_steps) {
        log << step_ << ' ' << format_double(l.l_rec) << ' '
            << format_double(l.l_dur) << ' ' << format_double(l.l_vq);
        if (!cfg_.no_pcd)
          log << ' ' << format_double(l.l_g) << ' ' << format_double(l.l_d);
        log << ' ' << format_double(l.total) << '\n';
        log.flush();
      }
    }
  } catch (const NumericalError&) {
    make_checkpoint().save((fs::path(out_dir) / "stage1_diagnostic.psck").string());
    throw;
  }
  const std::string ckpt_path = (fs::path(out_dir) / "stage1.psck").string();
  make_checkpoint().save(ckpt_path);
  return ckpt_path;
}

// ---------------------------------------------------------------------------
// Stage2Trainer

Stage2Trainer::Stage2Trainer(const RunConfig& cfg,
                             std::vector<UtteranceRecord> records,
                             const Checkpoint& stage1_ckpt)
    : cfg_(cfg), records_(std::move(records)) {
  cfg_.validate();
  bundle_ = Stage1Bundle::from_checkpoint(cfg_, stage1_ckpt);
  if (!cfg_.no_vq && !bundle_.codebook->initialized())
    throw StateError("stage 2: stage-1 codebook is not initialized");
  stage1_checksum_ = bundle_.weights_checksum();
  const int steps = cfg_.backend == "ddpm" ? cfg_.ddpm_timesteps : cfg_.timesteps;
  sched_ = DiffusionSchedule::variance_preserving(steps);

  for (const auto& rec : records_) {
    const auto in = bundle_.inputs_for(rec);
    auto [cond, spk] = bundle_.conditioning(in);
    LatentBatchItem item;
    item.x0 = bundle_.prosody_latents(rec, in, cfg_.prosody.n_low_bins,
                                      cfg_.detach_text_for_prosody);
    item.h_txt_word = std::move(cond);
    item.h_spk = std::move(spk);
    if (!cfg_.no_vq)
      indices_.push_back(bundle_.codebook->quantize(item.x0).indices);
    else
      indices_.emplace_back();
    items_.push_back(std::move(item));
  }

  LatentGenConfig gen_cfg = cfg_.latent_gen;
  gen_cfg.d_latent = cfg_.prosody.d_z;
  gen_cfg.d_cond = cfg_.tts.hidden;
  LatentDiscConfig disc_cfg = cfg_.latent_disc;
  disc_cfg.d_latent = cfg_.prosody.d_z;
  disc_cfg.d_cond = cfg_.tts.hidden;
  if (cfg_.backend == "ddgan") {
    gen_ = std::make_unique<LatentGenerator>(gen_cfg, sched_.steps,
                                             cfg_.seed + kGenSeedOffset);
    disc_ = std::make_unique<LatentDiscriminator>(disc_cfg, sched_.steps,
                                                  cfg_.seed + kDiscSeedOffset);
  } else if (cfg_.backend == "ddpm") {
    gen_ = std::make_unique<LatentGenerator>(gen_cfg, sched_.steps,
                                             cfg_.seed + kGenSeedOffset);
  } else {
    ar_ = std::make_unique<ArPredictor>(cfg_.ar, cfg_.codebook_size,
                                        cfg_.prosody.d_z, cfg_.tts.hidden,
                                        cfg_.seed + kArSeedOffset);
  }
  opt_g_ = nn::AdamW{cfg_.lr_stage2, cfg_.adam_beta1, cfg_.adam_beta2, 1e-9,
                     cfg_.weight_decay, 0};
  opt_d_ = opt_g_;
  rng_ = Rng(cfg_.seed + 55);
}

double Stage2Trainer::train_step(bool apply_updates) {
  std::vector<int> batch_idx;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    if (order_pos_ >= order_.size()) {
      order_.resize(records_.size());
      for (std::size_t i = 0; i < order_.size(); ++i)
        order_[i] = static_cast<int>(i);
      for (std::size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[rng_.uniform_int(i)]);
      order_pos_ = 0;
    }
    batch_idx.push_back(order_[order_pos_++]);
  }
  std::vector<LatentBatchItem> batch;
  std::vector<std::vector<int>> batch_targets;
  for (int i : batch_idx) {
    batch.push_back(items_[i]);
    batch_targets.push_back(indices_[i]);
  }

  double loss = 0;
  if (cfg_.backend == "ddgan") {
    const auto v = ddgan_training_step(*gen_, *disc_, batch, sched_, cfg_.lambda2,
                                       rng_, opt_g_, opt_d_, apply_updates);
    last_mae_ = v.g_mae;
    loss = v.g_total;
  } else if (cfg_.backend == "ddpm") {
    loss = ddpm_training_step(*gen_, batch, sched_, rng_, opt_g_, apply_updates);
    last_mae_ = loss;
  } else {
    loss = ar_->train_step(batch, batch_targets, *bundle_.codebook, opt_g_, rng_,
                           apply_updates);
    last_mae_ = loss;
  }
  if (!std::isfinite(loss))
    throw NumericalError("stage 2: non-finite loss at step " +
                         std::to_string(step_));
  if (apply_updates) ++step_;
  return loss;
}

std::string Stage2Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "stage2_loss.log").string();
  std::ofstream log(log_path);
  if (!log) throw ArgumentError("stage 2: cannot write " + log_path);
  log << "# config_hash=" << cfg_.hash() << " version=" << kVersionString
      << " backend=" << cfg_.backend << " lambda2=" << format_double(cfg_.lambda2)
      << "\n";
  log << "# step loss mae\n";
  try {
    while (step_ < cfg_.stage2_steps) {
      const double loss = train_step();
      if (step_ % cfg_.log_every == 0 || step_ == cfg_.stage2_steps) {
        log << step_ << ' ' << format_double(loss) << ' '
            << format_double(last_mae_) << '\n';
        log.flush();
      }
    }
  } catch (const NumericalError&) {
    make_checkpoint().save((fs::path(out_dir) / "stage2_diagnostic.psck").string());
    throw;
  }
  if (bundle_.weights_checksum() != stage1_checksum_)
    throw IntegrityError("stage 2 mutated stage-1 weights");
  const std::string ckpt_path = (fs::path(out_dir) / "stage2.psck").string();
  make_checkpoint().save(ckpt_path);
  return ckpt_path;
}

Checkpoint Stage2Trainer::make_checkpoint(bool with_optimizer) const {
  Checkpoint ckpt;
  ordered_json& meta = ckpt.metadata;
  meta["stage"] = 2;
  meta["version"] = kVersionString;
  meta["config_hash"] = cfg_.hash();
  meta["backend"] = cfg_.backend;
  meta["codebook_hash"] = hex64(bundle_.codebook->hash());
  meta["step"] = step_;
  meta["rng"] = rng_.state();
  if (gen_) ckpt.put_registry("generator", gen_->params(), with_optimizer);
  if (disc_) ckpt.put_registry("discriminator", disc_->params(), with_optimizer);
  if (ar_) ckpt.put_registry("ar", ar_->params(), with_optimizer);
  return ckpt;
}

// ---------------------------------------------------------------------------
// SynthesisEngine

SynthesisEngine::SynthesisEngine(const RunConfig& cfg, const Checkpoint& stage1,
                                 const Checkpoint& stage2)
    : cfg_(cfg) {
  cfg_.validate();
  bundle_ = Stage1Bundle::from_checkpoint(cfg_, stage1);
  const auto& meta = stage2.metadata;
  if (!meta.contains("stage") || meta["stage"].get<int>() != 2)
    throw StateError("synthesize: stage-2 checkpoint expected");
  const std::string backend = meta["backend"].get<std::string>();
  if (backend != cfg_.backend)
    throw StateError("synthesize: checkpoint backend '" + backend +
                     "' does not match configured backend '" + cfg_.backend + "'");
  if (meta["codebook_hash"].get<std::string>() != hex64(bundle_.codebook->hash()))
    throw StateError("synthesize: codebook hash mismatch between stages");

  const int steps = cfg_.backend == "ddpm" ? cfg_.ddpm_timesteps : cfg_.timesteps;
  sched_ = DiffusionSchedule::variance_preserving(steps);
  LatentGenConfig gen_cfg = cfg_.latent_gen;
  gen_cfg.d_latent = cfg_.prosody.d_z;
  gen_cfg.d_cond = cfg_.tts.hidden;
  if (cfg_.backend == "ar") {
    ar_ = std::make_unique<ArPredictor>(cfg_.ar, cfg_.codebook_size,
                                        cfg_.prosody.d_z, cfg_.tts.hidden,
                                        cfg_.seed + kArSeedOffset);
    stage2.load_registry("ar", ar_->params());
  } else {
    gen_ = std::make_unique<LatentGenerator>(gen_cfg, sched_.steps,
                                             cfg_.seed + kGenSeedOffset);
    stage2.load_registry("generator", gen_->params());
  }
  g2p_ = DictionaryG2p(bundle_.lexicon);
}

std::size_t SynthesisEngine::backend_parameter_count() const {
  return gen_ ? gen_->params().parameter_count() : ar_->params().parameter_count();
}

namespace {
double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}
}  // namespace

SynthesisResult SynthesisEngine::synthesize(const std::string& text,
                                            const std::string& speaker_id,
                                            std::uint64_t seed,
                                            const VocoderFn& vocoder) {
  if (text.empty()) throw ArgumentError("synthesize: empty text");
  SynthesisResult result;
  using clock = std::chrono::steady_clock;

  // 1. Text and speaker encoding.
  auto t0 = clock::now();
  const G2pResult g2p = g2p_.convert(text);
  std::vector<int> phoneme_ids;
  for (const auto& p : g2p.phonemes) phoneme_ids.push_back(bundle_.pvocab.id(p));
  std::vector<int> word_ids;
  for (const auto& w : g2p.words) word_ids.push_back(bundle_.wvocab.id(w));
  const int speaker_index = bundle_.tts->speakers().index_of(speaker_id);
  Mat h_txt, h_txt_word, h_spk;
  {
    ad::Graph g;
    nn::Binder bind(g);
    auto enc = bundle_.tts->encode_text(bind, phoneme_ids, word_ids,
                                        g2p.grouping, false, nullptr);
    h_txt = enc.h_txt.value();
    h_txt_word = bundle_.tts->word_conditioning(bind, enc, g2p.grouping).value();
    h_spk = bundle_.tts->speakers().embed(bind, speaker_index).value();
  }
  result.t_encode = seconds_since(t0);

  // 2. Latent prosody generation.
  t0 = clock::now();
  Rng rng(seed);
  SampleStats stats;
  Mat h_pros;
  if (cfg_.backend == "ar") {
    const auto idx = ar_->predict(*bundle_.codebook, h_txt_word, h_spk, &stats);
    h_pros.resize(static_cast<Index>(idx.size()), cfg_.prosody.d_z);
    for (std::size_t i = 0; i < idx.size(); ++i)
      h_pros.row(static_cast<Index>(i)) = bundle_.codebook->codes().row(idx[i]);
  } else if (cfg_.backend == "ddpm") {
    h_pros = ddpm_sample(*gen_, h_txt_word, h_spk, sched_, rng, &stats);
  } else {
    h_pros = sample_prosody(*gen_, h_txt_word, h_spk, sched_, rng, &stats);
  }
  result.generator_calls = stats.generator_calls;
  result.t_prosody = seconds_since(t0);

  // 3. Vector quantization.
  t0 = clock::now();
  Mat z_pros;
  if (cfg_.no_vq) {
    z_pros = h_pros;
  } else {
    auto q = bundle_.codebook->quantize(h_pros);
    z_pros = std::move(q.latents);
    result.prosody_indices = std::move(q.indices);
  }
  result.t_vq = seconds_since(t0);

  // 4. Duration prediction, length regulation, mel decoding.
  t0 = clock::now();
  {
    ad::Graph g;
    nn::Binder bind(g);
    Var h_total = bundle_.tts->fuse_conditions(
        bind, ad::constant(g, h_txt), ad::constant(g, h_spk),
        ad::constant(g, z_pros), g2p.grouping);
    Var dur_log = bundle_.tts->predict_durations(bind, h_total, false, nullptr);
    result.durations = durations_from_log(dur_log.value().col(0));
    long total = 0;
    for (int d : result.durations) total += d;
    if (total == 0)
      std::fill(result.durations.begin(), result.durations.end(), 1);
    Var frames = bundle_.tts->length_regulate(h_total, result.durations);
    Var mel = bundle_.tts->decode_mel(bind, frames, false, nullptr);
    result.mel.data = mel.value();
    result.mel.config = cfg_.audio;
  }
  result.t_decode = seconds_since(t0);

  // 5. Vocoder adapter (optional).
  t0 = clock::now();
  if (vocoder) result.audio = vocoder(result.mel);
  result.t_vocode = seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void accumulate_track_features(const PitchTrack& track,
                               std::vector<double>* log_f0) {
  for (Index i = 0; i < track.frames(); ++i)
    if (track.voiced[i] && track.f0(i) > 0.0)
      log_f0->push_back(std::log(track.f0(i)));
}

ordered_json metric_or(const std::optional<double>& value,
                       const char* undefined_tag) {
  if (value) return *value;
  return undefined_tag;
}

std::string summary_row(const std::string& name, const ordered_json& v) {
  char buf[96];
  const std::string sv = v.is_number() ? format_double(v.get<double>())
                                       : v.get<std::string>();
  std::snprintf(buf, sizeof(buf), "  %-22s %s\n", name.c_str(), sv.c_str());
  return buf;
}

}  // namespace

EvalReport evaluate(SynthesisEngine& engine,
                    const std::vector<UtteranceRecord>& test_records,
                    const EvalOptions& options, const ExternalScorers& scorers) {
  if (test_records.empty()) throw ArgumentError("evaluate: empty test set");
  const RunConfig& cfg = engine.config();
  const double frame_seconds = cfg.audio.hop / cfg.audio.sample_rate;

  std::vector<MelSpectrogram> generated;
  std::vector<SynthesisResult> results;
  std::vector<double> gt_seconds, gen_seconds;
  EvalReport out;

  const bool vocode = options.pitch_mode == "audio";
  // Wall-clock timing of the synthesis calls (RTF); results are captured on
  // the side so the timed callable stays minimal.
  const RtfReport rtf = measure_rtf(
      [&](int i) {
        const auto& rec = test_records[static_cast<std::size_t>(i)];
        SynthesisResult res =
            engine.synthesize(rec.text, rec.speaker_id,
                              options.seed ^ fnv1a64(rec.utt_id),
                              vocode ? VocoderFn([](const MelSpectrogram& m) {
                                return griffin_lim(m, 16);
                              })
                                     : VocoderFn());
        const double audio_s = static_cast<double>(res.mel.frames()) * frame_seconds;
        results.push_back(std::move(res));
        return audio_s;
      },
      static_cast<int>(test_records.size()));

  std::vector<double> rmse_f0_values, rmse_period_values, f1_values;
  long undefined_f0 = 0;
  double mel_l1 = 0;
  long mel_l1_count = 0;
  std::vector<int> call_counts;

  for (std::size_t i = 0; i < test_records.size(); ++i) {
    const auto& rec = test_records[i];
    const auto& res = results[i];
    generated.push_back(res.mel);
    call_counts.push_back(res.generator_calls);
    gt_seconds.push_back(static_cast<double>(rec.mel.frames()) * frame_seconds);
    gen_seconds.push_back(static_cast<double>(res.mel.frames()) * frame_seconds);

    // Mel L1 over the overlapping frame range (diagnostic).
    const Index frames = std::min(rec.mel.frames(), res.mel.frames());
    mel_l1 += (rec.mel.data.topRows(frames) - res.mel.data.topRows(frames))
                  .cwiseAbs()
                  .mean();
    ++mel_l1_count;

    const Vec gt_energy = frame_log_energy(rec.mel);
    for (Index f = 0; f < gt_energy.size(); ++f)
      out.gt_log_energy.push_back(gt_energy(f));
    const Vec gen_energy = frame_log_energy(res.mel);
    for (Index f = 0; f < gen_energy.size(); ++f)
      out.gen_log_energy.push_back(gen_energy(f));

    if (rec.pitch) accumulate_track_features(*rec.pitch, &out.gt_log_f0);
    if (vocode && rec.pitch && res.audio.size() > 0) {
      AutocorrPitchSource source;
      const PitchTrack gen_track = source.extract(res.audio, cfg.audio);
      accumulate_track_features(gen_track, &out.gen_log_f0);
      const auto f0 = rmse_f0_cents(*rec.pitch, gen_track);
      if (f0)
        rmse_f0_values.push_back(*f0);
      else
        ++undefined_f0;
      if (const auto p = rmse_periodicity(*rec.pitch, gen_track))
        rmse_period_values.push_back(*p);
      // Align voiced flags along the DTW path before scoring.
      const auto path = dtw_align(rec.pitch->f0, gen_track.f0);
      std::vector<std::uint8_t> gt_flags, gen_flags;
      for (const auto& [a, b] : path.pairs) {
        gt_flags.push_back(rec.pitch->voiced[a]);
        gen_flags.push_back(gen_track.voiced[b]);
      }
      f1_values.push_back(f1_vuv(gt_flags, gen_flags).f1);
    }
  }

  auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double acc = 0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };

  ordered_json& report = out.report;
  report["version"] = kVersionString;
  report["config_hash"] = cfg.hash();
  report["backend"] = cfg.backend;
  report["no_pcd"] = cfg.no_pcd;
  report["no_vq"] = cfg.no_vq;
  report["prosody_mel_bins"] = cfg.prosody.n_low_bins;
  report["n_utterances"] = test_records.size();
  ordered_json metrics = ordered_json::object();
  metrics["ddur_seconds"] = ddur(gt_seconds, gen_seconds);
  const bool pitch_ran = vocode;
  metrics["rmse_f0_cents"] =
      pitch_ran ? metric_or(mean_of(rmse_f0_values), "undefined") : "skipped";
  metrics["rmse_periodicity"] =
      pitch_ran ? metric_or(mean_of(rmse_period_values), "undefined") : "skipped";
  metrics["f1_vuv"] =
      pitch_ran ? metric_or(mean_of(f1_values), "undefined") : "skipped";
  metrics["kld_log_f0"] =
      (!out.gt_log_f0.empty() && !out.gen_log_f0.empty())
          ? ordered_json(kld_feature(out.gt_log_f0, out.gen_log_f0, options.n_bins))
          : ordered_json("skipped");
  metrics["kld_log_energy"] =
      kld_feature(out.gt_log_energy, out.gen_log_energy, options.n_bins);
  metrics["mel_l1"] = mel_l1 / static_cast<double>(mel_l1_count);
  metrics["cer"] = scorers.cer ? ordered_json(scorers.cer(test_records, generated))
                               : ordered_json("skipped");
  metrics["wer"] = scorers.wer ? ordered_json(scorers.wer(test_records, generated))
                               : ordered_json("skipped");
  metrics["eer"] = scorers.eer ? ordered_json(scorers.eer(test_records, generated))
                               : ordered_json("skipped");
  report["metrics"] = metrics;
  report["undefined_rmse_f0_utterances"] = undefined_f0;
  report["generator_calls"] = call_counts;
  report["backend_parameters"] = engine.backend_parameter_count();

  out.timing["rtf_mean"] = rtf.rtf_mean;
  out.timing["rtf_variance"] = rtf.rtf_variance;
  out.timing["rtf_per_utterance"] = rtf.per_utterance;
  {
    double enc = 0, pros = 0, vq = 0, dec = 0, voc = 0;
    for (const auto& r : results) {
      enc += r.t_encode;
      pros += r.t_prosody;
      vq += r.t_vq;
      dec += r.t_decode;
      voc += r.t_vocode;
    }
    const double n = static_cast<double>(results.size());
    out.timing["stage_seconds_mean"] = {{"encode", enc / n},
                                        {"prosody", pros / n},
                                        {"vq", vq / n},
                                        {"decode", dec / n},
                                        {"vocode", voc / n}};
  }

  std::string summary = "evaluation (" + cfg.backend + ", N=" +
                        std::to_string(cfg.prosody.n_low_bins) +
                        (cfg.no_pcd ? ", no_pcd" : "") +
                        (cfg.no_vq ? ", no_vq" : "") + ")\n";
  for (auto it = metrics.begin(); it != metrics.end(); ++it)
    summary += summary_row(it.key(), it.value());
  summary += summary_row("generator_calls_first", ordered_json(call_counts[0]));
  summary += summary_row("backend_parameters",
                         ordered_json(engine.backend_parameter_count()));
  out.summary = summary;
  return out;
}

EvalReport evaluate_self(const std::vector<UtteranceRecord>& test_records,
                         const EvalOptions& options) {
  if (test_records.empty()) throw ArgumentError("evaluate: empty test set");
  EvalReport out;
  std::vector<double> gt_seconds;
  std::vector<double> rmse_f0_values, rmse_period_values, f1_values;
  bool any_pitch = false;
  for (const auto& rec : test_records) {
    gt_seconds.push_back(static_cast<double>(rec.mel.frames()));
    const Vec e = frame_log_energy(rec.mel);
    for (Index f = 0; f < e.size(); ++f) {
      out.gt_log_energy.push_back(e(f));
      out.gen_log_energy.push_back(e(f));
    }
    if (rec.pitch) {
      any_pitch = true;
      accumulate_track_features(*rec.pitch, &out.gt_log_f0);
      accumulate_track_features(*rec.pitch, &out.gen_log_f0);
      if (const auto f0 = rmse_f0_cents(*rec.pitch, *rec.pitch))
        rmse_f0_values.push_back(*f0);
      if (const auto p = rmse_periodicity(*rec.pitch, *rec.pitch))
        rmse_period_values.push_back(*p);
      f1_values.push_back(f1_vuv(rec.pitch->voiced, rec.pitch->voiced).f1);
    }
  }
  auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double acc = 0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  ordered_json& report = out.report;
  report["version"] = kVersionString;
  report["self_comparison"] = true;
  report["n_utterances"] = test_records.size();
  ordered_json metrics = ordered_json::object();
  metrics["ddur_seconds"] = ddur(gt_seconds, gt_seconds);
  metrics["rmse_f0_cents"] = any_pitch ? metric_or(mean_of(rmse_f0_values), "undefined")
                                       : ordered_json("skipped");
  metrics["rmse_periodicity"] =
      any_pitch ? metric_or(mean_of(rmse_period_values), "undefined")
                : ordered_json("skipped");
  metrics["f1_vuv"] =
      any_pitch ? metric_or(mean_of(f1_values), "undefined") : ordered_json("skipped");
  metrics["kld_log_f0"] =
      out.gt_log_f0.empty()
          ? ordered_json("skipped")
          : ordered_json(kld_feature(out.gt_log_f0, out.gen_log_f0, options.n_bins));
  metrics["kld_log_energy"] =
      kld_feature(out.gt_log_energy, out.gen_log_energy, options.n_bins);
  report["metrics"] = metrics;
  std::string summary = "evaluation (ground truth vs itself)\n";
  for (auto it = metrics.begin(); it != metrics.end(); ++it)
    summary += summary_row(it.key(), it.value());
  out.summary = summary;
  out.timing = ordered_json::object();
  return out;
}

void write_eval_artifacts(const EvalReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "report.json");
    os << report.report.dump(2) << '\n';
  }
  {
    std::ofstream os(fs::path(out_dir) / "timing.json");
    os << report.timing.dump(2) << '\n';
  }
  {
    std::ofstream os(fs::path(out_dir) / "summary.txt");
    os << report.summary;
  }
  if (!report.gt_log_energy.empty()) {
    std::ofstream os(fs::path(out_dir) / "hist_log_energy.svg");
    os << histogram_svg(report.gt_log_energy, report.gen_log_energy,
                        "log energy");
  }
  if (!report.gt_log_f0.empty() && !report.gen_log_f0.empty()) {
    std::ofstream os(fs::path(out_dir) / "hist_log_f0.svg");
    os << histogram_svg(report.gt_log_f0, report.gen_log_f0, "log f0");
  }
}

namespace {

std::string table_cell(const ordered_json& v) {
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.5g", v.get<double>());
    return buf;
  }
  return v.get<std::string>();
}

std::string table_line(const std::string& name, const ordered_json& report) {
  const auto& m = report["metrics"];
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-12s %-10s %-11s %-11s %-8s %-10s %-11s %-9s %-8s %-8s %-8s %-10s\n",
                name.c_str(), table_cell(m["ddur_seconds"]).c_str(),
                table_cell(m["rmse_f0_cents"]).c_str(),
                table_cell(m["rmse_periodicity"]).c_str(),
                table_cell(m["f1_vuv"]).c_str(),
                table_cell(m["kld_log_f0"]).c_str(),
                table_cell(m["kld_log_energy"]).c_str(),
                table_cell(m["mel_l1"]).c_str(), table_cell(m["cer"]).c_str(),
                table_cell(m["wer"]).c_str(), table_cell(m["eer"]).c_str(),
                (table_cell(report["generator_calls"][0]) + "/" +
                 table_cell(report["backend_parameters"]))
                    .c_str());
  return buf;
}

const char* kTableHeader =
    "method       ddur_s     rmse_f0     rmse_per    f1_vuv   kld_f0     "
    "kld_energy  mel_l1    cer      wer      eer      calls/params\n";

}  // namespace

void run_ablation_grid(const RunConfig& base,
                       const std::vector<UtteranceRecord>& records,
                       const std::string& out_dir, const std::string& axes) {
  fs::create_directories(out_dir);
  const bool ax_backends = axes.find("backends") != std::string::npos;
  const bool ax_pcd = axes.find("pcd") != std::string::npos;
  const bool ax_vq = axes.find("vq") != std::string::npos;
  const bool ax_melbins = axes.find("melbins") != std::string::npos;

  EvalOptions eval_opts;
  eval_opts.seed = base.seed;

  auto train_and_eval = [&](RunConfig cfg, const std::string& name,
                            const std::string& stage1_path_reuse)
      -> std::pair<ordered_json, std::string> {
    cfg.validate();
    const std::string dir = (fs::path(out_dir) / name).string();
    fs::create_directories(dir);
    std::string stage1_path = stage1_path_reuse;
    if (stage1_path.empty()) {
      Stage1Trainer trainer(cfg, records);
      stage1_path = trainer.run(dir);
    }
    const Checkpoint stage1 = Checkpoint::load(stage1_path);
    Stage2Trainer stage2(cfg, records, stage1);
    const std::string stage2_path = stage2.run(dir);
    SynthesisEngine engine(cfg, stage1, Checkpoint::load(stage2_path));
    EvalReport report = evaluate(engine, records, eval_opts);
    write_eval_artifacts(report, dir);
    return {report.report, stage1_path};
  };

  std::string backend_table = kTableHeader;
  std::string base_stage1;
  if (ax_backends || ax_pcd || ax_vq) {
    RunConfig cfg = base;
    cfg.backend = "ddgan";
    auto [report, stage1_path] = train_and_eval(cfg, "ddgan", "");
    base_stage1 = stage1_path;
    backend_table += table_line("ddgan", report);
  }
  if (ax_backends) {
    for (const char* backend : {"ar", "ddpm"}) {
      RunConfig cfg = base;
      cfg.backend = backend;
      auto [report, ignored] = train_and_eval(cfg, backend, base_stage1);
      (void)ignored;
      backend_table += table_line(backend, report);
    }
  }
  if (ax_pcd) {
    RunConfig cfg = base;
    cfg.backend = "ddgan";
    cfg.no_pcd = true;
    auto [report, ignored] = train_and_eval(cfg, "no_pcd", "");
    (void)ignored;
    backend_table += table_line("no_pcd", report);
  }
  if (ax_vq) {
    RunConfig cfg = base;
    cfg.backend = "ddgan";
    cfg.no_vq = true;
    auto [report, ignored] = train_and_eval(cfg, "no_vq", "");
    (void)ignored;
    backend_table += table_line("no_vq", report);
  }
  if (ax_backends || ax_pcd || ax_vq) {
    std::ofstream os(fs::path(out_dir) / "backend_table.txt");
    os << backend_table;
  }

  if (ax_melbins) {
    std::string table = kTableHeader;
    for (int n : {10, 20, 30, 40, 60, 80}) {
      RunConfig cfg = base;
      cfg.backend = "ddgan";
      cfg.prosody.n_low_bins = n;
      const std::string name = "melbins" + std::to_string(n);
      // N = 20 with default flags is the base configuration; reuse it.
      const bool is_base = n == base.prosody.n_low_bins && !base_stage1.empty();
      if (is_base) {
        const std::string dir = (fs::path(out_dir) / "ddgan").string();
        std::ifstream is(fs::path(dir) / "report.json");
        ordered_json report = ordered_json::parse(is);
        table += table_line(name, report);
        continue;
      }
      auto [report, ignored] = train_and_eval(cfg, name, "");
      (void)ignored;
      table += table_line(name, report);
    }
    std::ofstream os(fs::path(out_dir) / "melbins_table.txt");
    os << table;
  }
}

std::string histogram_svg(const std::vector<double>& gt,
                          const std::vector<double>& generated,
                          const std::string& title, int n_bins) {
  double lo = gt[0], hi = gt[0];
  for (double v : gt) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : generated) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  std::vector<double> gt_bins(n_bins, 0.0), gen_bins(n_bins, 0.0);
  auto fill = [&](const std::vector<double>& vals, std::vector<double>* bins) {
    for (double v : vals) {
      int b = static_cast<int>((v - lo) / (hi - lo) * n_bins);
      b = std::clamp(b, 0, n_bins - 1);
      (*bins)[b] += 1.0;
    }
    for (double& x : *bins) x /= static_cast<double>(vals.size());
  };
  fill(gt, &gt_bins);
  if (!generated.empty()) fill(generated, &gen_bins);
  double peak = 1e-12;
  for (int b = 0; b < n_bins; ++b)
    peak = std::max({peak, gt_bins[b], gen_bins[b]});

  const int width = 480, height = 320, margin = 30;
  const double bar_w = static_cast<double>(width - 2 * margin) / n_bins;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << margin << "\" y=\"18\" font-size=\"13\">" << title
     << " (blue: ground truth, orange: generated)</text>\n";
  auto bars = [&](const std::vector<double>& bins, const char* color) {
    for (int b = 0; b < n_bins; ++b) {
      const double h = bins[b] / peak * (height - 2 * margin);
      os << "<rect x=\"" << format_double(margin + b * bar_w) << "\" y=\""
         << format_double(height - margin - h) << "\" width=\""
         << format_double(bar_w) << "\" height=\"" << format_double(h)
         << "\" fill=\"" << color << "\" fill-opacity=\"0.5\"/>\n";
    }
  };
  bars(gt_bins, "#3366cc");
  if (!generated.empty()) bars(gen_bins, "#ff8800");
  os << "</svg>\n";
  return os.str();
}

}  // namespace ps
