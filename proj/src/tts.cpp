#include "prosynth/tts.hpp"

namespace ps {

using ad::Var;

SpeakerTable::SpeakerTable(nn::ParamRegistry& reg, const std::string& name,
                           const std::vector<std::string>& speaker_ids, int dim,
                           int import_dim, Rng& rng)
    : ids_(speaker_ids) {
  if (ids_.empty()) throw ArgumentError("SpeakerTable: needs >= 1 speaker");
  table_ = &reg.create(name + ".table",
                       rng.normal_matrix(static_cast<Index>(ids_.size()), dim, 0.02));
  projection_ = &reg.create_buffer(name + ".projection",
                                   nn::xavier_uniform(import_dim, dim, rng));
}

int SpeakerTable::index_of(const std::string& speaker_id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (ids_[i] == speaker_id) return static_cast<int>(i);
  throw ArgumentError("SpeakerTable: unknown speaker '" + speaker_id + "'");
}

Var SpeakerTable::embed(nn::Binder& bind, int speaker_index) const {
  if (speaker_index < 0 || speaker_index >= count())
    throw ArgumentError("SpeakerTable: index out of range");
  return ad::slice_rows(bind(*table_), speaker_index, 1);
}

void SpeakerTable::import_embedding(const std::string& speaker_id,
                                    const Vec& external) {
  if (external.size() != projection_->value.rows())
    throw ArgumentError("SpeakerTable: external embedding has wrong width");
  const int idx = index_of(speaker_id);
  table_->value.row(idx) = external.transpose() * projection_->value;
}

std::vector<int> round_durations(const Vec& duration_domain) {
  std::vector<int> out(duration_domain.size());
  for (Index i = 0; i < duration_domain.size(); ++i)
    out[i] = static_cast<int>(std::max(0L, std::lround(duration_domain(i))));
  return out;
}

std::vector<int> durations_from_log(const Vec& log_domain) {
  Vec d(log_domain.size());
  for (Index i = 0; i < log_domain.size(); ++i) d(i) = std::expm1(log_domain(i));
  return round_durations(d);
}

std::vector<int> length_regulate_indices(const std::vector<int>& durations) {
  std::vector<int> idx;
  for (std::size_t p = 0; p < durations.size(); ++p) {
    if (durations[p] < 0)
      throw ArgumentError("length_regulate: negative duration");
    for (int k = 0; k < durations[p]; ++k) idx.push_back(static_cast<int>(p));
  }
  if (idx.empty()) throw ArgumentError("length_regulate: total duration is zero");
  return idx;
}

double duration_loss_value(const Vec& dur, const Vec& dur_pred) {
  if (dur.size() != dur_pred.size())
    throw ArgumentError("duration_loss: length mismatch");
  double acc = 0.0;
  for (Index i = 0; i < dur.size(); ++i) {
    const double d = std::log1p(dur(i)) - std::log1p(dur_pred(i));
    acc += d * d;
  }
  return acc / static_cast<double>(dur.size());
}

SsimParams SsimParams::from_target_range(double range, int window) {
  SsimParams p;
  p.window = window;
  const double r = range > 0.0 ? range : 1.0;
  p.c1 = (0.01 * r) * (0.01 * r);
  p.c2 = (0.03 * r) * (0.03 * r);
  return p;
}

double target_dynamic_range(const Mat& y) {
  return y.maxCoeff() - y.minCoeff();
}

Var ssim_graph(ad::Graph& g, Var y_pred, const Mat& y, const SsimParams& p) {
  if (y_pred.rows() != y.rows() || y_pred.cols() != y.cols())
    throw ArgumentError("ssim: shape mismatch");
  const int k = std::min<Index>({p.window, y.rows(), y.cols()});
  Var x = y_pred;
  Var yv = ad::constant(g, y);
  Var mu_x = ad::box_filter_valid(x, k);
  Var mu_y = ad::box_filter_valid(yv, k);
  Var x2 = ad::box_filter_valid(ad::mul(x, x), k);
  Var y2 = ad::box_filter_valid(ad::mul(yv, yv), k);
  Var xy = ad::box_filter_valid(ad::mul(x, yv), k);
  Var var_x = ad::sub(x2, ad::mul(mu_x, mu_x));
  Var var_y = ad::sub(y2, ad::mul(mu_y, mu_y));
  Var cov = ad::sub(xy, ad::mul(mu_x, mu_y));
  Var num = ad::mul(ad::add_scalar(ad::scale(ad::mul(mu_x, mu_y), 2.0), p.c1),
                    ad::add_scalar(ad::scale(cov, 2.0), p.c2));
  Var den = ad::mul(
      ad::add_scalar(ad::add(ad::mul(mu_x, mu_x), ad::mul(mu_y, mu_y)), p.c1),
      ad::add_scalar(ad::add(var_x, var_y), p.c2));
  return ad::mean(ad::div(num, den));
}

Var reconstruction_loss_graph(ad::Graph& g, Var y_pred, const Mat& y,
                              const SsimParams& p) {
  if (y_pred.rows() != y.rows() || y_pred.cols() != y.cols())
    throw ArgumentError("reconstruction_loss: shape mismatch");
  Var mse = ad::mean(ad::square(ad::sub(y_pred, ad::constant(g, y))));
  Var ssim = ssim_graph(g, y_pred, y, p);
  return ad::add(mse, ad::add_scalar(ad::neg(ssim), 1.0));
}

double reconstruction_loss_value(const Mat& y, const Mat& y_pred) {
  ad::Graph g;
  Var pred = ad::leaf(g, y_pred, false);
  const SsimParams p = SsimParams::from_target_range(target_dynamic_range(y));
  return reconstruction_loss_graph(g, pred, y, p).scalar();
}

Var duration_loss_graph(ad::Graph& g, Var log_pred,
                        const std::vector<int>& target_frames) {
  if (static_cast<std::size_t>(log_pred.rows()) != target_frames.size() ||
      log_pred.cols() != 1)
    throw ArgumentError("duration_loss: shape mismatch");
  Mat target(target_frames.size(), 1);
  for (std::size_t i = 0; i < target_frames.size(); ++i)
    target(static_cast<Index>(i), 0) = std::log1p(static_cast<double>(target_frames[i]));
  return ad::mean(ad::square(ad::sub(log_pred, ad::constant(g, target))));
}

TtsModel::TtsModel(const TtsConfig& cfg, int phoneme_vocab, int word_vocab,
                   const std::vector<std::string>& speaker_ids,
                   std::uint64_t init_seed)
    : cfg_(cfg) {
  Rng rng(init_seed);
  phoneme_emb_ = nn::Embedding(reg_, "phoneme_emb", phoneme_vocab, cfg.hidden, rng);
  word_emb_ = nn::Embedding(reg_, "word_emb", word_vocab, cfg.hidden, rng);
  for (int i = 0; i < cfg.n_layers; ++i) {
    phoneme_encoder_.emplace_back(reg_, "phoneme_enc." + std::to_string(i),
                                  cfg.hidden, cfg.filter, cfg.kernel, cfg.heads, rng);
    word_encoder_.emplace_back(reg_, "word_enc." + std::to_string(i), cfg.hidden,
                               cfg.filter, cfg.kernel, cfg.heads, rng);
    decoder_.emplace_back(reg_, "decoder." + std::to_string(i), cfg.hidden,
                          cfg.filter, cfg.kernel, cfg.heads, rng);
  }
  mel_proj_ = nn::Linear(reg_, "mel_proj", cfg.hidden, cfg.n_mels, rng);
  dp_conv1_ = nn::Conv1d(reg_, "dp.conv1", cfg.hidden, cfg.hidden, 3, rng);
  dp_conv2_ = nn::Conv1d(reg_, "dp.conv2", cfg.hidden, cfg.hidden, 3, rng);
  dp_norm1_ = nn::LayerNorm(reg_, "dp.norm1", cfg.hidden);
  dp_norm2_ = nn::LayerNorm(reg_, "dp.norm2", cfg.hidden);
  dp_out_ = nn::Linear(reg_, "dp.out", cfg.hidden, 1, rng);
  speakers_ = SpeakerTable(reg_, "speakers", speaker_ids, cfg.hidden,
                           cfg.speaker_import_dim, rng);
}

TtsModel::TextEncoding TtsModel::encode_text(nn::Binder& bind,
                                             const std::vector<int>& phoneme_ids,
                                             const std::vector<int>& word_ids,
                                             const WordGrouping& grouping,
                                             bool train, Rng* drop_rng) const {
  grouping.validate();
  if (static_cast<int>(phoneme_ids.size()) != grouping.phonemes())
    throw ArgumentError("encode_text: phoneme count != grouping coverage");
  if (static_cast<int>(word_ids.size()) != grouping.words())
    throw ArgumentError("encode_text: word count != grouping words");
  ad::Graph& g = bind.graph();

  Var h = phoneme_emb_.forward(bind, phoneme_ids);
  h = ad::add(h, ad::constant(g, nn::sinusoidal_positions(h.rows(), cfg_.hidden)));
  for (const auto& block : phoneme_encoder_)
    h = block.forward(bind, h, train, drop_rng);

  TextEncoding enc;
  enc.phoneme_feats = h;
  if (cfg_.use_word_encoder) {
    Var w = word_emb_.forward(bind, word_ids);
    for (const auto& block : word_encoder_)
      w = block.forward(bind, w, train, drop_rng);
    enc.word_feats = w;
    std::vector<int> word_of_phoneme(grouping.phonemes());
    for (int p = 0; p < grouping.phonemes(); ++p)
      word_of_phoneme[p] = grouping.word_of(p);
    enc.h_txt = ad::add(h, ad::gather_rows(w, word_of_phoneme));
  } else {
    enc.word_feats = ad::constant(g, Mat::Zero(grouping.words(), cfg_.hidden));
    enc.h_txt = h;
  }
  return enc;
}

Var TtsModel::fuse_conditions(nn::Binder& bind, Var h_txt, Var h_spk,
                              Var z_pros_word, const WordGrouping& grouping) const {
  (void)bind;
  if (h_spk.rows() != 1 || h_spk.cols() != cfg_.hidden)
    throw ArgumentError("fuse_conditions: h_spk must be 1 x hidden");
  if (z_pros_word.rows() != grouping.words() || z_pros_word.cols() != cfg_.hidden)
    throw ArgumentError("fuse_conditions: z_pros must be L x hidden");
  if (h_txt.rows() != grouping.phonemes())
    throw ArgumentError("fuse_conditions: h_txt rows != phoneme count");
  std::vector<int> word_of_phoneme(grouping.phonemes());
  for (int p = 0; p < grouping.phonemes(); ++p)
    word_of_phoneme[p] = grouping.word_of(p);
  Var expanded = ad::gather_rows(z_pros_word, word_of_phoneme);
  return ad::add(ad::add(h_txt, ad::repeat_row(h_spk, h_txt.rows())), expanded);
}

Var TtsModel::predict_durations(nn::Binder& bind, Var h_total, bool train,
                                Rng* drop_rng) const {
  ad::Graph& g = bind.graph();
  auto maybe_drop = [&](Var v) {
    if (!train || !drop_rng || cfg_.dropout <= 0.0) return v;
    return ad::mul(v, ad::constant(g, nn::dropout_mask(v.rows(), v.cols(),
                                                       cfg_.dropout, *drop_rng)));
  };
  Var h = dp_norm1_.forward(bind, ad::relu(dp_conv1_.forward(bind, h_total)));
  h = maybe_drop(h);
  h = dp_norm2_.forward(bind, ad::relu(dp_conv2_.forward(bind, h)));
  h = maybe_drop(h);
  return dp_out_.forward(bind, h);
}

Var TtsModel::length_regulate(Var h_total, const std::vector<int>& durations) const {
  if (static_cast<Index>(durations.size()) != h_total.rows())
    throw ArgumentError("length_regulate: durations/rows mismatch");
  return ad::gather_rows(h_total, length_regulate_indices(durations));
}

Var TtsModel::decode_mel(nn::Binder& bind, Var frame_level, bool train,
                         Rng* drop_rng) const {
  ad::Graph& g = bind.graph();
  Var h = ad::add(frame_level, ad::constant(g, nn::sinusoidal_positions(
                                                   frame_level.rows(), cfg_.hidden)));
  for (const auto& block : decoder_) h = block.forward(bind, h, train, drop_rng);
  return mel_proj_.forward(bind, h);
}

Var TtsModel::word_conditioning(nn::Binder& bind, const TextEncoding& enc,
                                const WordGrouping& grouping) const {
  ad::Graph& g = bind.graph();
  Var pooled =
      ad::matmul(ad::constant(g, pooling_matrix(grouping)), enc.phoneme_feats);
  return ad::add(enc.word_feats, pooled);
}

}  // namespace ps
