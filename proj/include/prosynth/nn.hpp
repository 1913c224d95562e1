#pragma once

#include <deque>
#include <string>
#include <vector>

#include "prosynth/autodiff.hpp"
#include "prosynth/common.hpp"

namespace ps::nn {

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m, adam_v;
  bool trainable = true;

  void zero_grad() { grad.setZero(); }
};

/// Owns a model's parameters and non-trainable buffers; iteration order is
/// registration order (stable, used for checksums and checkpoints).
class ParamRegistry {
 public:
  Parameter& create(const std::string& name, Mat init);
  Parameter& create_buffer(const std::string& name, Mat init);
  Parameter* find(const std::string& name);
  const std::vector<Parameter*>& all() const { return order_; }
  std::vector<Parameter*> trainable() const;

  void zero_grad();
  std::size_t parameter_count() const;  // total trainable scalars
  /// FNV-1a over raw value bytes of every entry in registration order.
  std::uint64_t checksum() const;

 private:
  std::deque<Parameter> storage_;
  std::vector<Parameter*> order_;
};

/// Binds parameters into a graph as leaf nodes and harvests their gradients
/// after backward(). Binding the same parameter twice is allowed; gradients
/// sum.
class Binder {
 public:
  explicit Binder(ad::Graph& g) : graph_(g) {}

  ad::Var operator()(Parameter& p) {
    ad::Var v = ad::leaf(graph_, p.value, p.trainable);
    bound_.emplace_back(&p, v.node);
    return v;
  }

  ad::Graph& graph() { return graph_; }

  void harvest() {
    for (auto& [p, node] : bound_) {
      if (!node->has_grad()) continue;
      if (p->grad.size() == 0) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
      p->grad += node->grad;
    }
  }

 private:
  ad::Graph& graph_;
  std::vector<std::pair<Parameter*, ad::Node*>> bound_;
};

Mat xavier_uniform(Index rows, Index cols, Rng& rng);
Mat sinusoidal_positions(Index n, Index dim);
/// Inverted dropout mask: entries are 0 or 1/(1-p).
Mat dropout_mask(Index rows, Index cols, double p, Rng& rng);

struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng);
  ad::Var forward(Binder& bind, ad::Var x) const;
};

struct Embedding {
  Parameter* table = nullptr;
  Embedding() = default;
  Embedding(ParamRegistry& reg, const std::string& name, int vocab, int dim, Rng& rng);
  ad::Var forward(Binder& bind, const std::vector<int>& ids) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, int dim);
  ad::Var forward(Binder& bind, ad::Var x) const;
};

/// 1-D convolution over rows (time) with same zero padding, implemented as a
/// sum of shifted matmuls.
struct Conv1d {
  Parameter* w = nullptr;  // (kernel*in) x out, tap-major
  Parameter* b = nullptr;
  int kernel = 1, in = 0, out = 0;
  Conv1d() = default;
  Conv1d(ParamRegistry& reg, const std::string& name, int in, int out, int kernel,
         Rng& rng);
  ad::Var forward(Binder& bind, ad::Var x) const;
};

/// 2-D convolution over batches of C-channel images laid out as
/// (batch*H*W) x C matrices with pixel index s = y*W + x. Implemented as an
/// index-map gather (im2col) followed by a matmul.
struct Conv2d {
  Parameter* w = nullptr;  // (kernel*kernel*in) x out
  Parameter* b = nullptr;
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& name, int in, int out, int kernel,
         int stride, int pad, Rng& rng);
  ad::Var forward(Binder& bind, ad::Var x, int batch, int h, int w_img,
                  int* h_out, int* w_out) const;
};

Eigen::MatrixXi conv2d_index_map(int batch, int h, int w, int channels, int kernel,
                                 int stride, int pad, int* h_out, int* w_out);
/// (batch*HW) x C -> batch x (HW*C), feature order j = s*C + c.
Eigen::MatrixXi flatten_index_map(int batch, int hw, int channels);

/// Column-wise batch normalization with running statistics for eval mode.
struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;  // buffers
  Parameter* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
  BatchNorm() = default;
  BatchNorm(ParamRegistry& reg, const std::string& name, int channels);
  ad::Var forward(Binder& bind, ad::Var x, bool train);
};

struct SelfAttention {
  int heads = 2;
  int dim = 0;
  Linear wq, wk, wv, wo;
  SelfAttention() = default;
  SelfAttention(ParamRegistry& reg, const std::string& name, int dim, int heads,
                Rng& rng);
  /// causal=true masks attention to positions <= query index.
  ad::Var forward(Binder& bind, ad::Var x, bool causal = false) const;
};

/// Feed-forward transformer block: post-norm self-attention plus a 1-D
/// convolutional feed-forward (kernel/filter per config), dropout on both
/// sublayer outputs during training.
struct FftBlock {
  SelfAttention attn;
  LayerNorm norm1, norm2;
  Conv1d conv1, conv2;
  double dropout = 0.1;
  FftBlock() = default;
  FftBlock(ParamRegistry& reg, const std::string& name, int dim, int filter,
           int kernel, int heads, Rng& rng);
  ad::Var forward(Binder& bind, ad::Var x, bool train, Rng* drop_rng,
                  bool causal = false) const;
};

/// Decoupled-weight-decay Adam.
struct AdamW {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 1e-4;
  long step_count = 0;

  void step(const std::vector<Parameter*>& params);
};

}  // namespace ps::nn
