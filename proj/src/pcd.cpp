#include "prosynth/pcd.hpp"

namespace ps {

using ad::Var;

std::vector<PcdBatch> clip_windows(const Mat& mel, const Mat& pros_frame_level,
                                   const WindowSpec& spec, Rng& rng) {
  spec.validate();
  if (mel.rows() != pros_frame_level.rows())
    throw ArgumentError("clip_windows: mel and prosody frame counts differ");
  const Index frames = mel.rows();
  std::vector<PcdBatch> out;
  for (std::size_t i = 0; i < spec.lengths.size(); ++i) {
    const int w = spec.lengths[i];
    if (w > frames) continue;  // too short for this window: skip
    const Index start = static_cast<Index>(rng.uniform_int(frames - w + 1));
    PcdBatch batch;
    batch.mel_window = mel.middleRows(start, w);
    batch.pros_window = pros_frame_level.middleRows(start, w);
    batch.start = start;
    batch.spec_index = i;
    out.push_back(std::move(batch));
  }
  return out;
}

Var image_to_pixel_column(Var img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  Eigen::MatrixXi map(h * w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      map(y * w + x, 0) = y + x * h;  // column-major flat index of (y, x)
  return ad::gather_flat(img, std::move(map));
}

namespace {

int conv_out(int n, int kernel, int stride, int pad) {
  return (n + 2 * pad - kernel) / stride + 1;
}

}  // namespace

PcdBranch::PcdBranch(nn::ParamRegistry& reg, const std::string& name,
                     const PcdConfig& cfg, int window_len, int width, Rng& rng)
    : window_len_(window_len), width_(width), slope_(cfg.leaky_slope) {
  const auto& ch = cfg.channels;
  if (ch.size() != 3) throw ArgumentError("PcdConfig: expects 3 conv channels");
  conv1_ = nn::Conv2d(reg, name + ".conv1", 1, ch[0], 3, 2, 1, rng);
  conv2_ = nn::Conv2d(reg, name + ".conv2", ch[0], ch[1], 3, 2, 1, rng);
  conv3_ = nn::Conv2d(reg, name + ".conv3", ch[1], ch[2], 3, 2, 1, rng);
  bn1_ = nn::BatchNorm(reg, name + ".bn1", ch[0]);
  bn2_ = nn::BatchNorm(reg, name + ".bn2", ch[1]);
  bn3_ = nn::BatchNorm(reg, name + ".bn3", ch[2]);
  int h = window_len, w = width;
  for (int i = 0; i < 3; ++i) {
    h = conv_out(h, 3, 2, 1);
    w = conv_out(w, 3, 2, 1);
  }
  const int flat = h * w * ch[2];
  fc1_ = nn::Linear(reg, name + ".fc1", flat, cfg.fc1, rng);
  fc2_ = nn::Linear(reg, name + ".fc2", cfg.fc1, cfg.fc2, rng);
  fc3_ = nn::Linear(reg, name + ".fc3", cfg.fc2, 1, rng);
}

Var PcdBranch::forward(nn::Binder& bind, const std::vector<Var>& windows,
                       bool train) {
  const int batch = static_cast<int>(windows.size());
  if (batch == 0) throw ArgumentError("PcdBranch: empty batch");
  Var x{};
  for (int b = 0; b < batch; ++b) {
    if (windows[b].rows() != window_len_ || windows[b].cols() != width_)
      throw ArgumentError("PcdBranch: window shape mismatch");
    Var col = image_to_pixel_column(windows[b]);
    x = (b == 0) ? col : ad::vstack(x, col);
  }
  int h = window_len_, w = width_;
  x = conv1_.forward(bind, x, batch, h, w, &h, &w);
  x = ad::leaky_relu(bn1_.forward(bind, x, train), slope_);
  x = conv2_.forward(bind, x, batch, h, w, &h, &w);
  x = ad::leaky_relu(bn2_.forward(bind, x, train), slope_);
  x = conv3_.forward(bind, x, batch, h, w, &h, &w);
  x = ad::leaky_relu(bn3_.forward(bind, x, train), slope_);
  x = ad::gather_flat(x, nn::flatten_index_map(batch, h * w, conv3_.out_ch));
  x = ad::leaky_relu(fc1_.forward(bind, x), slope_);
  x = ad::leaky_relu(fc2_.forward(bind, x), slope_);
  return fc3_.forward(bind, x);
}

PcdDiscriminator::PcdDiscriminator(nn::ParamRegistry& reg, const std::string& name,
                                   const PcdConfig& cfg, int window_len, Rng& rng)
    : window_len_(window_len), n_mels_(cfg.n_mels), d_z_(cfg.d_z) {
  uncond_ = PcdBranch(reg, name + ".uncond", cfg, window_len, cfg.n_mels, rng);
  cond_ = PcdBranch(reg, name + ".cond", cfg, window_len, cfg.n_mels + cfg.d_z, rng);
}

Var PcdDiscriminator::score(nn::Binder& bind, const std::vector<Var>& mel_windows,
                            const std::vector<Var>& pros_windows, bool train) {
  if (mel_windows.size() != pros_windows.size() || mel_windows.empty())
    throw ArgumentError("PcdDiscriminator: batch size mismatch");
  std::vector<Var> joint(mel_windows.size());
  for (std::size_t i = 0; i < mel_windows.size(); ++i) {
    if (mel_windows[i].rows() != window_len_ || mel_windows[i].cols() != n_mels_ ||
        pros_windows[i].rows() != window_len_ || pros_windows[i].cols() != d_z_)
      throw ArgumentError("PcdDiscriminator: window shape mismatch");
    joint[i] = ad::hstack(mel_windows[i], pros_windows[i]);
  }
  Var u = uncond_.forward(bind, mel_windows, train);
  Var c = cond_.forward(bind, joint, train);
  return ad::add(u, c);
}

PcdSet::PcdSet(const PcdConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.windows.validate();
  Rng rng(init_seed);
  for (std::size_t i = 0; i < cfg_.windows.lengths.size(); ++i)
    discriminators_.emplace_back(reg_, "pcd" + std::to_string(i), cfg_,
                                 cfg_.windows.lengths[i], rng);
}

Var PcdSet::discriminate(nn::Binder& bind, std::size_t spec_index,
                         const std::vector<Var>& mel_windows,
                         const std::vector<Var>& pros_windows, bool train) {
  if (spec_index >= discriminators_.size())
    throw ArgumentError("PcdSet: spec index out of range");
  return discriminators_[spec_index].score(bind, mel_windows, pros_windows, train);
}

Var PcdSet::discriminate(nn::Binder& bind, std::size_t spec_index,
                         const std::vector<Mat>& mel_windows,
                         const std::vector<Mat>& pros_windows, bool train) {
  ad::Graph& g = bind.graph();
  std::vector<Var> mels, pros;
  for (const Mat& m : mel_windows) mels.push_back(ad::constant(g, m));
  for (const Mat& p : pros_windows) pros.push_back(ad::constant(g, p));
  return discriminate(bind, spec_index, mels, pros, train);
}

LsganLosses lsgan_losses(ad::Graph& g, const std::vector<Var>& real_scores,
                         const std::vector<Var>& fake_scores) {
  if (real_scores.empty() || fake_scores.empty() ||
      real_scores.size() != fake_scores.size())
    throw ArgumentError("lsgan_losses: need matching non-empty score lists");
  Var d_loss = ad::constant(g, Mat::Zero(1, 1));
  Var g_loss = ad::constant(g, Mat::Zero(1, 1));
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    Var real = real_scores[i];
    Var fake = fake_scores[i];
    d_loss = ad::add(d_loss, ad::add(ad::mean(ad::square(fake)),
                                     ad::mean(ad::square(ad::add_scalar(real, -1.0)))));
    g_loss = ad::add(g_loss, ad::mean(ad::square(ad::add_scalar(fake, -1.0))));
  }
  return {d_loss, g_loss};
}

Var total_tts_loss(Var l_rec, Var l_dur, Var l_vq, Var l_g, double lambda1) {
  return ad::add(ad::add(l_rec, l_dur), ad::add(l_vq, ad::scale(l_g, lambda1)));
}

double total_tts_loss_value(double l_rec, double l_dur, double l_vq, double l_g,
                            double lambda1) {
  return l_rec + l_dur + l_vq + lambda1 * l_g;
}

}  // namespace ps
