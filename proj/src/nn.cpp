#include "prosynth/nn.hpp"

namespace ps::nn {

using ad::Var;

Parameter& ParamRegistry::create(const std::string& name, Mat init) {
  if (find(name)) throw ArgumentError("ParamRegistry: duplicate name " + name);
  storage_.emplace_back();
  Parameter& p = storage_.back();
  p.name = name;
  p.value = std::move(init);
  p.grad = Mat::Zero(p.value.rows(), p.value.cols());
  p.adam_m = Mat::Zero(p.value.rows(), p.value.cols());
  p.adam_v = Mat::Zero(p.value.rows(), p.value.cols());
  order_.push_back(&p);
  return p;
}

Parameter& ParamRegistry::create_buffer(const std::string& name, Mat init) {
  Parameter& p = create(name, std::move(init));
  p.trainable = false;
  return p;
}

Parameter* ParamRegistry::find(const std::string& name) {
  for (Parameter* p : order_)
    if (p->name == name) return p;
  return nullptr;
}

std::vector<Parameter*> ParamRegistry::trainable() const {
  std::vector<Parameter*> out;
  for (Parameter* p : order_)
    if (p->trainable) out.push_back(p);
  return out;
}

void ParamRegistry::zero_grad() {
  for (Parameter* p : order_) p->zero_grad();
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : order_)
    if (p->trainable) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::uint64_t ParamRegistry::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const Parameter* p : order_) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = fnv1a64(p->value.data(), sizeof(double) * p->value.size(), h);
  }
  return h;
}

Mat xavier_uniform(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return rng.uniform_matrix(rows, cols, -limit, limit);
}

Mat sinusoidal_positions(Index n, Index dim) {
  Mat pos(n, dim);
  for (Index i = 0; i < n; ++i)
    for (Index d = 0; d < dim; ++d) {
      const double angle =
          i / std::pow(10000.0, 2.0 * (d / 2) / static_cast<double>(dim));
      pos(i, d) = (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pos;
}

Mat dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 - p;
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      m(r, c) = rng.uniform() < p ? 0.0 : 1.0 / keep;
  return m;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out,
               Rng& rng) {
  w = &reg.create(name + ".w", xavier_uniform(in, out, rng));
  b = &reg.create(name + ".b", Mat::Zero(1, out));
}

Var Linear::forward(Binder& bind, Var x) const {
  return ad::add_rowvec(ad::matmul(x, bind(*w)), bind(*b));
}

Embedding::Embedding(ParamRegistry& reg, const std::string& name, int vocab,
                     int dim, Rng& rng) {
  table = &reg.create(name + ".table", rng.normal_matrix(vocab, dim, 0.02));
}

Var Embedding::forward(Binder& bind, const std::vector<int>& ids) const {
  return ad::gather_rows(bind(*table), ids);
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name, int dim) {
  gamma = &reg.create(name + ".gamma", Mat::Ones(1, dim));
  beta = &reg.create(name + ".beta", Mat::Zero(1, dim));
}

Var LayerNorm::forward(Binder& bind, Var x) const {
  return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(x), bind(*gamma)),
                        bind(*beta));
}

Conv1d::Conv1d(ParamRegistry& reg, const std::string& name, int in_, int out_,
               int kernel_, Rng& rng)
    : kernel(kernel_), in(in_), out(out_) {
  // Fan-in counts every tap.
  const double limit = std::sqrt(6.0 / static_cast<double>(kernel * in + out));
  w = &reg.create(name + ".w",
                  rng.uniform_matrix(kernel * in, out, -limit, limit));
  b = &reg.create(name + ".b", Mat::Zero(1, out));
}

Var Conv1d::forward(Binder& bind, Var x) const {
  if (x.cols() != in) throw ArgumentError("Conv1d: channel mismatch");
  const int n = static_cast<int>(x.rows());
  Var wv = bind(*w);
  Var acc{};
  for (int j = 0; j < kernel; ++j) {
    const int shift = j - kernel / 2;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) {
      const int s = i + shift;
      idx[i] = (s >= 0 && s < n) ? s : -1;
    }
    Var tap = ad::matmul(ad::gather_rows(x, std::move(idx)),
                         ad::slice_rows(wv, static_cast<Index>(j) * in, in));
    acc = (j == 0) ? tap : ad::add(acc, tap);
  }
  return ad::add_rowvec(acc, bind(*b));
}

Eigen::MatrixXi conv2d_index_map(int batch, int h, int w, int channels,
                                 int kernel, int stride, int pad, int* h_out,
                                 int* w_out) {
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  if (ho < 1 || wo < 1) throw ArgumentError("conv2d: output would be empty");
  if (h_out) *h_out = ho;
  if (w_out) *w_out = wo;
  const int in_rows = batch * h * w;
  Eigen::MatrixXi map(batch * ho * wo, kernel * kernel * channels);
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        const int out_row = b * ho * wo + y * wo + x;
        for (int c = 0; c < channels; ++c)
          for (int u = 0; u < kernel; ++u)
            for (int v = 0; v < kernel; ++v) {
              const int ys = y * stride - pad + u;
              const int xs = x * stride - pad + v;
              const int col = c * kernel * kernel + u * kernel + v;
              if (ys < 0 || ys >= h || xs < 0 || xs >= w) {
                map(out_row, col) = -1;
              } else {
                const int src_row = b * h * w + ys * w + xs;
                map(out_row, col) = src_row + c * in_rows;
              }
            }
      }
  return map;
}

Eigen::MatrixXi flatten_index_map(int batch, int hw, int channels) {
  Eigen::MatrixXi map(batch, hw * channels);
  const int in_rows = batch * hw;
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < hw; ++s)
      for (int c = 0; c < channels; ++c)
        map(b, s * channels + c) = (b * hw + s) + c * in_rows;
  return map;
}

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int in, int out,
               int kernel_, int stride_, int pad_, Rng& rng)
    : in_ch(in), out_ch(out), kernel(kernel_), stride(stride_), pad(pad_) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(kernel * kernel * in + out));
  w = &reg.create(name + ".w",
                  rng.uniform_matrix(kernel * kernel * in, out, -limit, limit));
  b = &reg.create(name + ".b", Mat::Zero(1, out));
}

Var Conv2d::forward(Binder& bind, Var x, int batch, int h, int w_img,
                    int* h_out, int* w_out) const {
  if (x.cols() != in_ch) throw ArgumentError("Conv2d: channel mismatch");
  if (x.rows() != static_cast<Index>(batch) * h * w_img)
    throw ArgumentError("Conv2d: row count does not match batch*H*W");
  Eigen::MatrixXi map =
      conv2d_index_map(batch, h, w_img, in_ch, kernel, stride, pad, h_out, w_out);
  Var cols = ad::gather_flat(x, std::move(map));
  return ad::add_rowvec(ad::matmul(cols, bind(*w)), bind(*b));
}

BatchNorm::BatchNorm(ParamRegistry& reg, const std::string& name, int channels) {
  gamma = &reg.create(name + ".gamma", Mat::Ones(1, channels));
  beta = &reg.create(name + ".beta", Mat::Zero(1, channels));
  running_mean = &reg.create_buffer(name + ".running_mean", Mat::Zero(1, channels));
  running_var = &reg.create_buffer(name + ".running_var", Mat::Ones(1, channels));
}

Var BatchNorm::forward(Binder& bind, Var x, bool train) {
  Var normalized{};
  if (train) {
    RowVec mu, var;
    normalized = ad::batch_norm_cols(x, eps, &mu, &var);
    running_mean->value = (1.0 - momentum) * running_mean->value + momentum * mu.matrix();
    running_var->value = (1.0 - momentum) * running_var->value + momentum * var.matrix();
  } else {
    ad::Graph& g = bind.graph();
    Mat inv_std =
        (running_var->value.array() + eps).rsqrt().matrix();
    Var centered = ad::add_rowvec(x, ad::constant(g, Mat(-running_mean->value)));
    normalized = ad::mul_rowvec(centered, ad::constant(g, inv_std));
  }
  return ad::add_rowvec(ad::mul_rowvec(normalized, bind(*gamma)), bind(*beta));
}

SelfAttention::SelfAttention(ParamRegistry& reg, const std::string& name,
                             int dim_, int heads_, Rng& rng)
    : heads(heads_), dim(dim_) {
  if (dim % heads != 0)
    throw ArgumentError("SelfAttention: dim must be divisible by heads");
  wq = Linear(reg, name + ".wq", dim, dim, rng);
  wk = Linear(reg, name + ".wk", dim, dim, rng);
  wv = Linear(reg, name + ".wv", dim, dim, rng);
  wo = Linear(reg, name + ".wo", dim, dim, rng);
}

Var SelfAttention::forward(Binder& bind, Var x, bool causal) const {
  const Index n = x.rows();
  const int dh = dim / heads;
  Var q = wq.forward(bind, x);
  Var k = wk.forward(bind, x);
  Var v = wv.forward(bind, x);
  ad::Graph& g = bind.graph();
  Var mask{};
  if (causal) {
    Mat m = Mat::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) m(i, j) = -1e9;
    mask = ad::constant(g, std::move(m));
  }
  Var concat{};
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, static_cast<Index>(h) * dh, dh);
    Var kh = ad::slice_cols(k, static_cast<Index>(h) * dh, dh);
    Var vh = ad::slice_cols(v, static_cast<Index>(h) * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)),
                           1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = ad::add(scores, mask);
    Var attn = ad::softmax_rows(scores);
    Var head = ad::matmul(attn, vh);
    concat = (h == 0) ? head : ad::hstack(concat, head);
  }
  return wo.forward(bind, concat);
}

FftBlock::FftBlock(ParamRegistry& reg, const std::string& name, int dim,
                   int filter, int kernel, int heads, Rng& rng) {
  attn = SelfAttention(reg, name + ".attn", dim, heads, rng);
  norm1 = LayerNorm(reg, name + ".norm1", dim);
  norm2 = LayerNorm(reg, name + ".norm2", dim);
  conv1 = Conv1d(reg, name + ".conv1", dim, filter, kernel, rng);
  conv2 = Conv1d(reg, name + ".conv2", filter, dim, kernel, rng);
}

Var FftBlock::forward(Binder& bind, Var x, bool train, Rng* drop_rng,
                      bool causal) const {
  ad::Graph& g = bind.graph();
  auto maybe_drop = [&](Var v) {
    if (!train || dropout <= 0.0 || !drop_rng) return v;
    return ad::mul(v, ad::constant(g, dropout_mask(v.rows(), v.cols(), dropout,
                                                   *drop_rng)));
  };
  Var a = maybe_drop(attn.forward(bind, x, causal));
  x = norm1.forward(bind, ad::add(x, a));
  Var f = conv2.forward(bind, ad::relu(conv1.forward(bind, x)));
  x = norm2.forward(bind, ad::add(x, maybe_drop(f)));
  return x;
}

void AdamW::step(const std::vector<Parameter*>& params) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
    p->adam_v =
        (beta2 * p->adam_v.array() + (1.0 - beta2) * p->grad.array().square())
            .matrix();
    Mat m_hat = p->adam_m / bc1;
    Mat v_hat = p->adam_v / bc2;
    p->value.array() -=
        lr * (m_hat.array() / (v_hat.array().sqrt() + eps) +
              weight_decay * p->value.array());
  }
}

}  // namespace ps::nn
