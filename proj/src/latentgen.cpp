#include "prosynth/latentgen.hpp"

namespace ps {

using ad::Var;

LatentGenerator::LatentGenerator(const LatentGenConfig& cfg, int max_timesteps,
                                 std::uint64_t init_seed)
    : cfg_(cfg), max_t_(max_timesteps) {
  Rng rng(init_seed);
  in_proj_ = nn::Linear(reg_, "in_proj", cfg.d_latent + 2 * cfg.d_cond,
                        cfg.hidden, rng);
  cond1_ = nn::Linear(reg_, "cond1", cfg.t_emb_dim + cfg.d_noise,
                      cfg.cond_hidden, rng);
  cond2_ = nn::Linear(reg_, "cond2", cfg.cond_hidden, cfg.cond_hidden, rng);
  for (int i = 0; i < cfg.blocks; ++i) {
    film_.emplace_back(reg_, "block" + std::to_string(i) + ".film",
                       cfg.cond_hidden, 2 * cfg.hidden, rng);
    block_conv_.emplace_back(reg_, "block" + std::to_string(i) + ".conv",
                             cfg.hidden, cfg.hidden, cfg.kernel, rng);
  }
  out_norm_ = nn::LayerNorm(reg_, "out_norm", cfg.hidden);
  out_proj_ = nn::Linear(reg_, "out_proj", cfg.hidden, cfg.d_latent, rng);
}

Var LatentGenerator::forward(nn::Binder& bind, Var x_t, int t, const Mat& z_noise,
                             Var h_spk, Var h_txt_word) const {
  if (t < 0 || t > max_t_)
    throw ArgumentError("LatentGenerator: t out of range");
  if (x_t.cols() != cfg_.d_latent)
    throw ArgumentError("LatentGenerator: latent width mismatch");
  const bool per_row = z_noise.rows() == x_t.rows() && x_t.rows() > 1;
  if ((z_noise.rows() != 1 && !per_row) || z_noise.cols() != cfg_.d_noise)
    throw ArgumentError("LatentGenerator: noise latent must be 1 or rows(x_t) wide");
  if (h_txt_word.rows() != x_t.rows())
    throw ArgumentError("LatentGenerator: conditioning length mismatch");
  ad::Graph& g = bind.graph();
  const Index n = x_t.rows();

  Var input = ad::hstack(ad::hstack(x_t, h_txt_word), ad::repeat_row(h_spk, n));
  Var h = in_proj_.forward(bind, input);

  Mat t_emb = nn::sinusoidal_positions(max_t_ + 1, cfg_.t_emb_dim).row(t);
  Mat cond_in(per_row ? n : 1, cfg_.t_emb_dim + cfg_.d_noise);
  for (Index r = 0; r < cond_in.rows(); ++r)
    cond_in.row(r) << t_emb, z_noise.row(per_row ? r : 0);
  Var c = ad::leaky_relu(cond1_.forward(bind, ad::constant(g, cond_in)), 0.2);
  c = ad::leaky_relu(cond2_.forward(bind, c), 0.2);

  for (int i = 0; i < cfg_.blocks; ++i) {
    Var film = film_[i].forward(bind, c);  // (1 or n) x 2*hidden
    Var gamma = ad::slice_cols(film, 0, cfg_.hidden);
    Var beta = ad::slice_cols(film, cfg_.hidden, cfg_.hidden);
    Var normed = ad::layer_norm_rows(h);
    if (per_row) {
      normed = ad::add(ad::mul(normed, ad::add_scalar(gamma, 1.0)), beta);
    } else {
      normed = ad::add_rowvec(ad::mul_rowvec(normed, ad::add_scalar(gamma, 1.0)),
                              beta);
    }
    h = ad::add(h, block_conv_[i].forward(bind, ad::leaky_relu(normed, 0.2)));
  }
  return out_proj_.forward(bind, out_norm_.forward(bind, h));
}

Mat LatentGenerator::evaluate(const Mat& x_t, int t, const Mat& z_noise,
                              const Mat& h_spk, const Mat& h_txt_word) const {
  ad::Graph g;
  nn::Binder bind(g);
  Var out = forward(bind, ad::constant(g, x_t), t, z_noise,
                    ad::constant(g, h_spk), ad::constant(g, h_txt_word));
  return out.value();
}

LatentDiscriminator::LatentDiscriminator(const LatentDiscConfig& cfg,
                                         int max_timesteps, std::uint64_t init_seed)
    : cfg_(cfg), max_t_(max_timesteps) {
  Rng rng(init_seed);
  in_proj_ = nn::Linear(reg_, "in_proj", 2 * cfg.d_latent + 2 * cfg.d_cond,
                        cfg.hidden, rng);
  t_proj_ = nn::Linear(reg_, "t_proj", cfg.t_emb_dim, cfg.hidden, rng);
  for (int i = 0; i < cfg.conv_layers; ++i)
    convs_.emplace_back(reg_, "conv" + std::to_string(i), cfg.hidden, cfg.hidden,
                        cfg.kernel, rng);
  out_ = nn::Linear(reg_, "out", cfg.hidden, 1, rng);
}

Var LatentDiscriminator::forward(nn::Binder& bind, Var x_prev, Var x_t, int t,
                                 Var h_txt_word, Var h_spk) const {
  if (t < 1 || t > max_t_)
    throw ArgumentError("LatentDiscriminator: t out of range");
  ad::Graph& g = bind.graph();
  const Index n = x_t.rows();
  Var input = ad::hstack(ad::hstack(x_prev, x_t),
                         ad::hstack(h_txt_word, ad::repeat_row(h_spk, n)));
  Var h = in_proj_.forward(bind, input);
  Mat t_emb = nn::sinusoidal_positions(max_t_ + 1, cfg_.t_emb_dim).row(t);
  Var te = t_proj_.forward(bind, ad::constant(g, Mat(t_emb)));
  h = ad::add_rowvec(h, te);
  for (const auto& conv : convs_)
    h = ad::leaky_relu(conv.forward(bind, h), cfg_.leaky_slope);
  Mat pool = Mat::Constant(1, n, 1.0 / static_cast<double>(n));
  Var pooled = ad::matmul(ad::constant(g, pool), h);
  return out_.forward(bind, pooled);
}

DdganLossValues ddgan_training_step(LatentGenerator& gen, LatentDiscriminator& disc,
                                    const std::vector<LatentBatchItem>& batch,
                                    const DiffusionSchedule& sched, double lambda2,
                                    Rng& rng, nn::AdamW& opt_g, nn::AdamW& opt_d,
                                    bool apply_updates) {
  if (batch.empty()) throw ArgumentError("ddgan_training_step: empty batch");
  DdganLossValues values;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  // Per-item draws, fixed before the two passes so D and G see the same
  // trajectory slice.
  struct Draw {
    int t;
    Mat x_prev, x_t, z, posterior_noise;
  };
  std::vector<Draw> draws;
  draws.reserve(batch.size());
  for (const auto& item : batch) {
    Draw d;
    d.t = 1 + static_cast<int>(rng.uniform_int(sched.steps));
    d.x_prev = forward_diffuse(item.x0, d.t - 1, sched, rng);
    d.x_t = forward_step(d.x_prev, d.t, sched, rng);
    d.z = rng.normal_matrix(1, gen.config().d_noise);
    d.posterior_noise = rng.normal_matrix(item.x0.rows(), item.x0.cols());
    draws.push_back(std::move(d));
  }

  // Discriminator pass: fake latents detached.
  {
    ad::Graph g;
    nn::Binder bind(g);
    Var d_loss = ad::constant(g, Mat::Zero(1, 1));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& item = batch[i];
      const auto& d = draws[i];
      Var cond_txt = ad::constant(g, item.h_txt_word);
      Var cond_spk = ad::constant(g, item.h_spk);
      Var x_t = ad::constant(g, d.x_t);
      Mat x0_fake = gen.evaluate(d.x_t, d.t, d.z, item.h_spk, item.h_txt_word);
      Var fake_prev = posterior_sample_graph(g, x_t, ad::constant(g, x0_fake),
                                             d.t, sched, d.posterior_noise);
      Var real_score = disc.forward(bind, ad::constant(g, d.x_prev), x_t, d.t,
                                    cond_txt, cond_spk);
      Var fake_score = disc.forward(bind, fake_prev, x_t, d.t, cond_txt, cond_spk);
      Var item_loss = ad::add(ad::square(fake_score),
                              ad::square(ad::add_scalar(real_score, -1.0)));
      d_loss = ad::add(d_loss, ad::scale(item_loss, inv_b));
    }
    values.d_loss = d_loss.scalar();
    if (apply_updates) {
      disc.params().zero_grad();
      g.backward(d_loss.node);
      bind.harvest();
      opt_d.step(disc.params().trainable());
    }
  }

  // Generator pass: gradients flow through x0' and the posterior sample.
  {
    ad::Graph g;
    nn::Binder bind(g);
    Var mae = ad::constant(g, Mat::Zero(1, 1));
    Var adv = ad::constant(g, Mat::Zero(1, 1));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& item = batch[i];
      const auto& d = draws[i];
      Var cond_txt = ad::constant(g, item.h_txt_word);
      Var cond_spk = ad::constant(g, item.h_spk);
      Var x_t = ad::constant(g, d.x_t);
      Var x0_pred = gen.forward(bind, x_t, d.t, d.z, cond_spk, cond_txt);
      Var fake_prev =
          posterior_sample_graph(g, x_t, x0_pred, d.t, sched, d.posterior_noise);
      Var fake_score = disc.forward(bind, fake_prev, x_t, d.t, cond_txt, cond_spk);
      mae = ad::add(mae, ad::scale(ad::mean(ad::abs_(ad::sub(
                             x0_pred, ad::constant(g, item.x0)))),
                         inv_b));
      adv = ad::add(adv, ad::scale(ad::square(ad::add_scalar(fake_score, -1.0)),
                                   inv_b));
    }
    Var g_loss = ad::add(mae, ad::scale(adv, lambda2));
    values.g_mae = mae.scalar();
    values.g_adv = adv.scalar();
    values.g_total = g_loss.scalar();
    if (apply_updates) {
      gen.params().zero_grad();
      g.backward(g_loss.node);
      bind.harvest();
      opt_g.step(gen.params().trainable());
    }
  }
  return values;
}

Mat sample_prosody(const LatentGenerator& gen, const Mat& h_txt_word,
                   const Mat& h_spk, const DiffusionSchedule& sched, Rng& rng,
                   SampleStats* stats) {
  Mat x = rng.normal_matrix(h_txt_word.rows(), gen.config().d_latent);
  Mat x0 = x;
  for (int t = sched.steps; t >= 1; --t) {
    const Mat z = rng.normal_matrix(1, gen.config().d_noise);
    x0 = gen.evaluate(x, t, z, h_spk, h_txt_word);
    if (stats) ++stats->generator_calls;
    x = posterior_sample(x, x0, t, sched, rng);
  }
  return x0;
}

double ddpm_training_step(LatentGenerator& eps_net,
                          const std::vector<LatentBatchItem>& batch,
                          const DiffusionSchedule& sched, Rng& rng,
                          nn::AdamW& opt, bool apply_updates) {
  if (sched.steps < 2)
    throw ArgumentError("ddpm: schedule needs at least 2 steps");
  if (batch.empty()) throw ArgumentError("ddpm_training_step: empty batch");
  const Mat no_noise = Mat::Zero(1, eps_net.config().d_noise);
  ad::Graph g;
  nn::Binder bind(g);
  Var loss = ad::constant(g, Mat::Zero(1, 1));
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    const int t = 1 + static_cast<int>(rng.uniform_int(sched.steps));
    const Mat eps = rng.normal_matrix(item.x0.rows(), item.x0.cols());
    const Mat x_t = std::sqrt(sched.alpha_bar(t)) * item.x0 +
                    std::sqrt(1.0 - sched.alpha_bar(t)) * eps;
    Var pred = eps_net.forward(bind, ad::constant(g, x_t), t, no_noise,
                               ad::constant(g, item.h_spk),
                               ad::constant(g, item.h_txt_word));
    loss = ad::add(loss, ad::scale(ad::mean(ad::square(ad::sub(
                             pred, ad::constant(g, eps)))),
                         inv_b));
  }
  const double value = loss.scalar();
  if (apply_updates) {
    eps_net.params().zero_grad();
    g.backward(loss.node);
    bind.harvest();
    opt.step(eps_net.params().trainable());
  }
  return value;
}

Mat ddpm_sample(const LatentGenerator& eps_net, const Mat& h_txt_word,
                const Mat& h_spk, const DiffusionSchedule& sched, Rng& rng,
                SampleStats* stats) {
  if (sched.steps < 2)
    throw ArgumentError("ddpm: schedule needs at least 2 steps");
  const Mat no_noise = Mat::Zero(1, eps_net.config().d_noise);
  Mat x = rng.normal_matrix(h_txt_word.rows(), eps_net.config().d_latent);
  for (int t = sched.steps; t >= 1; --t) {
    const Mat eps = eps_net.evaluate(x, t, no_noise, h_spk, h_txt_word);
    if (stats) ++stats->generator_calls;
    const Mat x0_hat = (x - std::sqrt(1.0 - sched.alpha_bar(t)) * eps) /
                       std::sqrt(sched.alpha_bar(t));
    x = posterior_sample(x, x0_hat, t, sched, rng);
  }
  return x;
}

ArPredictor::ArPredictor(const ArConfig& cfg, int codebook_size, int d_z,
                         int d_cond, std::uint64_t init_seed)
    : cfg_(cfg), k_(codebook_size), d_z_(d_z) {
  Rng rng(init_seed);
  code_proj_ = nn::Linear(reg_, "code_proj", d_z, cfg.hidden, rng);
  cond_proj_ = nn::Linear(reg_, "cond_proj", 2 * d_cond, cfg.hidden, rng);
  start_token_ = &reg_.create("start_token", rng.normal_matrix(1, cfg.hidden, 0.02));
  for (int i = 0; i < cfg.layers; ++i)
    blocks_.emplace_back(reg_, "block" + std::to_string(i), cfg.hidden, cfg.filter,
                         cfg.kernel, cfg.heads, rng);
  logits_ = nn::Linear(reg_, "logits", cfg.hidden, codebook_size, rng);
}

Var ArPredictor::embed_prefix(nn::Binder& bind, const std::vector<int>& prev,
                              Index length, const Mat& codes, Var h_txt_word,
                              Var h_spk, bool train, Rng* drop_rng) const {
  ad::Graph& g = bind.graph();
  // Row i holds the code chosen at position i-1; row 0 is the start token.
  Var start = bind(*start_token_);
  Var h = start;
  if (length > 1) {
    Mat prev_codes(length - 1, d_z_);
    for (Index i = 0; i + 1 < length; ++i) {
      const int idx = prev[i];
      if (idx < 0 || idx >= k_)
        throw ArgumentError("ArPredictor: code index out of range");
      prev_codes.row(i) = codes.row(idx);
    }
    Var projected = code_proj_.forward(bind, ad::constant(g, prev_codes));
    h = ad::vstack(start, projected);
  }
  Var cond_in = ad::hstack(ad::slice_rows(h_txt_word, 0, length),
                           ad::repeat_row(h_spk, length));
  h = ad::add(h, cond_proj_.forward(bind, cond_in));
  h = ad::add(h, ad::constant(g, nn::sinusoidal_positions(length, cfg_.hidden)));
  for (const auto& block : blocks_)
    h = block.forward(bind, h, train, drop_rng, /*causal=*/true);
  return logits_.forward(bind, h);
}

Var ArPredictor::forward_logits(nn::Binder& bind,
                                const std::vector<int>& target_indices,
                                const Mat& codes, Var h_txt_word, Var h_spk,
                                bool train, Rng* drop_rng) const {
  const Index length = static_cast<Index>(target_indices.size());
  if (length < 1) throw ArgumentError("ArPredictor: empty sequence");
  if (h_txt_word.rows() != length)
    throw ArgumentError("ArPredictor: conditioning length mismatch");
  return embed_prefix(bind, target_indices, length, codes, h_txt_word, h_spk,
                      train, drop_rng);
}

Var cross_entropy_rows(ad::Graph& g, Var logits, const std::vector<int>& targets) {
  const Index rows = logits.rows();
  if (static_cast<Index>(targets.size()) != rows)
    throw ArgumentError("cross_entropy_rows: target length mismatch");
  // Stable log-sum-exp with a constant per-row shift.
  Mat shift(rows, 1);
  for (Index r = 0; r < rows; ++r) shift(r, 0) = logits.value().row(r).maxCoeff();
  Var shifted = ad::add_colvec(logits, ad::constant(g, Mat(-shift)));
  Var lse = ad::log_(ad::matmul(ad::exp_(shifted),
                                ad::constant(g, Mat::Ones(logits.cols(), 1))));
  lse = ad::add(lse, ad::constant(g, shift));
  Eigen::MatrixXi pick(rows, 1);
  for (Index r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= logits.cols())
      throw ArgumentError("cross_entropy_rows: target out of range");
    pick(r, 0) = static_cast<int>(r + targets[r] * rows);
  }
  Var picked = ad::gather_flat(logits, std::move(pick));
  return ad::mean(ad::sub(lse, picked));
}

double ArPredictor::train_step(const std::vector<LatentBatchItem>& batch,
                               const std::vector<std::vector<int>>& target_indices,
                               const Codebook& codebook, nn::AdamW& opt, Rng& rng,
                               bool apply_updates) {
  if (batch.size() != target_indices.size() || batch.empty())
    throw ArgumentError("ArPredictor: batch/target mismatch");
  ad::Graph g;
  nn::Binder bind(g);
  Var loss = ad::constant(g, Mat::Zero(1, 1));
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var logits = forward_logits(bind, target_indices[i], codebook.codes(),
                                ad::constant(g, batch[i].h_txt_word),
                                ad::constant(g, batch[i].h_spk), true, &rng);
    loss = ad::add(loss, ad::scale(cross_entropy_rows(g, logits, target_indices[i]),
                                   inv_b));
  }
  const double value = loss.scalar();
  if (apply_updates) {
    reg_.zero_grad();
    g.backward(loss.node);
    bind.harvest();
    opt.step(reg_.trainable());
  }
  return value;
}

std::vector<int> ArPredictor::predict(const Codebook& codebook,
                                      const Mat& h_txt_word, const Mat& h_spk,
                                      SampleStats* stats) const {
  const Index length = h_txt_word.rows();
  std::vector<int> chosen;
  for (Index i = 0; i < length; ++i) {
    ad::Graph g;
    nn::Binder bind(g);
    std::vector<int> prefix = chosen;
    prefix.push_back(0);  // placeholder for the position being predicted
    Var logits = embed_prefix(bind, prefix, i + 1, codebook.codes(),
                              ad::constant(g, h_txt_word.topRows(i + 1)),
                              ad::constant(g, h_spk), false, nullptr);
    if (stats) ++stats->generator_calls;
    Index best = 0;
    logits.value().row(i).maxCoeff(&best);
    chosen.push_back(static_cast<int>(best));
  }
  return chosen;
}

}  // namespace ps
