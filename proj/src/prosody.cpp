#include "prosynth/prosody.hpp"

namespace ps {

using ad::Var;

Codebook::Codebook(int k, int d_z, double decay, double eps)
    : codes_(Mat::Zero(k, d_z)),
      ema_counts_(Vec::Zero(k)),
      ema_sums_(Mat::Zero(k, d_z)),
      decay_(decay),
      eps_(eps) {
  if (k < 1 || d_z < 1) throw ArgumentError("Codebook: K and d_z must be >= 1");
}

ProsodyLatentSequence Codebook::quantize(const Mat& h_pros) const {
  if (!initialized_)
    throw StateError("Codebook: quantize called before initialization");
  if (h_pros.cols() != codes_.cols())
    throw ArgumentError("Codebook: dimension mismatch");
  ProsodyLatentSequence out;
  out.latents.resize(h_pros.rows(), codes_.cols());
  out.indices.resize(h_pros.rows());
  out.quantized = true;
  for (Index i = 0; i < h_pros.rows(); ++i) {
    int best = 0;
    double best_d = (h_pros.row(i) - codes_.row(0)).squaredNorm();
    for (int k = 1; k < size(); ++k) {
      const double d = (h_pros.row(i) - codes_.row(k)).squaredNorm();
      if (d < best_d) {  // strict: ties keep the lowest index
        best_d = d;
        best = k;
      }
    }
    out.indices[i] = best;
    out.latents.row(i) = codes_.row(best);
  }
  return out;
}

void Codebook::ema_update(const Mat& h_pros, const std::vector<int>& indices) {
  if (!initialized_)
    throw StateError("Codebook: ema_update called before initialization");
  if (static_cast<Index>(indices.size()) != h_pros.rows())
    throw ArgumentError("Codebook: indices/rows mismatch");
  Vec batch_counts = Vec::Zero(size());
  Mat batch_sums = Mat::Zero(size(), dim());
  for (Index i = 0; i < h_pros.rows(); ++i) {
    const int k = indices[i];
    if (k < 0 || k >= size()) throw ArgumentError("Codebook: index out of range");
    batch_counts(k) += 1.0;
    batch_sums.row(k) += h_pros.row(i);
  }
  ema_counts_ = decay_ * ema_counts_ + (1.0 - decay_) * batch_counts;
  ema_sums_ = decay_ * ema_sums_ + (1.0 - decay_) * batch_sums;
  for (int k = 0; k < size(); ++k)
    codes_.row(k) = ema_sums_.row(k) / (ema_counts_(k) + eps_);
}

void Codebook::kmeans_init(const Mat& buffer, Rng& rng, int max_iters) {
  const int k = size();
  const Index n = buffer.rows();
  if (n < k)
    throw StateError("Codebook: k-means needs a buffer of at least K vectors");
  if (buffer.cols() != dim()) throw ArgumentError("Codebook: buffer dim mismatch");

  // k-means++ seeding.
  Mat centers(k, dim());
  std::vector<Index> chosen;
  chosen.push_back(static_cast<Index>(rng.uniform_int(n)));
  centers.row(0) = buffer.row(chosen[0]);
  Vec dist2(n);
  for (Index i = 0; i < n; ++i)
    dist2(i) = (buffer.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Index>(rng.uniform_int(n));
    } else {
      double target = rng.uniform() * total;
      for (Index i = 0; i < n; ++i) {
        target -= dist2(i);
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = buffer.row(pick);
    for (Index i = 0; i < n; ++i)
      dist2(i) = std::min(dist2(i), (buffer.row(i) - centers.row(c)).squaredNorm());
  }

  // Lloyd iterations.
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (buffer.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (buffer.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Mat sums = Mat::Zero(k, dim());
    Vec counts = Vec::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += buffer.row(i);
      counts(assign[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centers.row(c) = sums.row(c) / counts(c);
      } else {
        // Re-seed an empty cluster at the point farthest from its center.
        Index far = 0;
        double far_d = -1.0;
        for (Index i = 0; i < n; ++i) {
          const double d = (buffer.row(i) - centers.row(assign[i])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers.row(c) = buffer.row(far);
      }
    }
  }

  codes_ = centers;  // exact centroids
  // Seed the EMA statistics so codes = sums/(counts+eps) already holds.
  Vec counts = Vec::Zero(k);
  for (Index i = 0; i < n; ++i) counts(assign[i]) += 1.0;
  ema_counts_ = counts;
  for (int c = 0; c < k; ++c)
    ema_sums_.row(c) = centers.row(c) * (counts(c) + eps_);
  initialized_ = true;
}

void Codebook::restore(Mat codes, Vec counts, Mat sums, bool initialized) {
  if (codes.rows() != codes_.rows() || codes.cols() != codes_.cols())
    throw StateError("Codebook: restore shape mismatch");
  codes_ = std::move(codes);
  ema_counts_ = std::move(counts);
  ema_sums_ = std::move(sums);
  initialized_ = initialized;
}

VqForward vq_quantize_graph(ad::Graph& g, Var h_pros, const Codebook& codebook,
                            double beta) {
  ProsodyLatentSequence q = codebook.quantize(h_pros.value());
  VqForward out;
  out.indices = std::move(q.indices);
  Var z = ad::constant(g, q.latents);
  // Straight-through: value is bit-exact z, gradient passes to h as identity.
  out.z_st = ad::straight_through(h_pros, q.latents);
  // ||sg[h]-z||^2 contributes value only (codes are EMA-maintained, not
  // gradient-trained); the commitment term trains the encoder.
  Var codebook_term = ad::sum(ad::square(
      ad::sub(ad::constant(g, h_pros.value()), z)));
  Var commitment = ad::sum(ad::square(ad::sub(h_pros, z)));
  out.loss = ad::add(codebook_term, ad::scale(commitment, beta));
  return out;
}

double vq_loss_value(const Mat& h, const Mat& z, double beta) {
  if (h.rows() != z.rows() || h.cols() != z.cols())
    throw ArgumentError("vq_loss: shape mismatch");
  const double d = (h - z).squaredNorm();
  return d + beta * d;
}

ProsodyEncoder::ProsodyEncoder(const ProsodyEncoderConfig& cfg,
                               std::uint64_t init_seed)
    : cfg_(cfg) {
  Rng rng(init_seed);
  frame_conv1_ = nn::Conv1d(reg_, "frame.conv1", cfg.n_low_bins, cfg.hidden,
                            cfg.kernel, rng);
  frame_conv2_ =
      nn::Conv1d(reg_, "frame.conv2", cfg.hidden, cfg.hidden, cfg.kernel, rng);
  frame_norm1_ = nn::LayerNorm(reg_, "frame.norm1", cfg.hidden);
  frame_norm2_ = nn::LayerNorm(reg_, "frame.norm2", cfg.hidden);
  word_conv1_ =
      nn::Conv1d(reg_, "word.conv1", cfg.hidden, cfg.hidden, cfg.kernel, rng);
  word_conv2_ =
      nn::Conv1d(reg_, "word.conv2", cfg.hidden, cfg.hidden, cfg.kernel, rng);
  word_norm1_ = nn::LayerNorm(reg_, "word.norm1", cfg.hidden);
  word_norm2_ = nn::LayerNorm(reg_, "word.norm2", cfg.hidden);
  out_ = nn::Linear(reg_, "out", cfg.hidden, cfg.d_z, rng);
}

Mat frame_to_word_pooling(const WordGrouping& grouping,
                          const std::vector<int>& durations) {
  grouping.validate();
  if (static_cast<int>(durations.size()) != grouping.phonemes())
    throw ArgumentError("frame_to_word_pooling: durations/phonemes mismatch");
  Index total = 0;
  for (int d : durations) total += d;
  Mat pool = Mat::Zero(grouping.words(), total);
  Index f = 0;
  for (int w = 0; w < grouping.words(); ++w) {
    const auto [s, e] = grouping.word_spans[w];
    Index count = 0;
    const Index start = f;
    for (int p = s; p < e; ++p) count += durations[p];
    for (Index i = 0; i < count; ++i) pool(w, start + i) = 1.0;
    if (count > 0) pool.row(w) /= static_cast<double>(count);
    f += count;
  }
  return pool;
}

Var ProsodyEncoder::forward(nn::Binder& bind, const Mat& low_mel, Var h_txt,
                            Var h_spk, const WordGrouping& grouping,
                            const std::vector<int>& durations, bool train,
                            Rng* drop_rng) const {
  if (low_mel.cols() != cfg_.n_low_bins)
    throw ArgumentError("ProsodyEncoder: expected " +
                        std::to_string(cfg_.n_low_bins) + " mel bins, got " +
                        std::to_string(low_mel.cols()));
  (void)train;
  (void)drop_rng;
  ad::Graph& g = bind.graph();

  Var h = ad::constant(g, low_mel);
  h = frame_norm1_.forward(bind, ad::relu(frame_conv1_.forward(bind, h)));
  h = frame_norm2_.forward(bind, ad::relu(frame_conv2_.forward(bind, h)));

  Var pooled = ad::matmul(
      ad::constant(g, frame_to_word_pooling(grouping, durations)), h);
  Var txt_word =
      ad::matmul(ad::constant(g, pooling_matrix(grouping)), h_txt);
  Var w = ad::add(ad::add(pooled, txt_word),
                  ad::repeat_row(h_spk, grouping.words()));
  w = word_norm1_.forward(bind, ad::relu(word_conv1_.forward(bind, w)));
  w = word_norm2_.forward(bind, ad::relu(word_conv2_.forward(bind, w)));
  return out_.forward(bind, w);
}

}  // namespace ps
