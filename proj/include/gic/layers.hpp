#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gic/tensor.hpp"

namespace gic {

// Owns all trainable Parameters, keyed by unique name. Initialization draws
// from a per-name generator seeded by (seed, name), so two models built with
// the same seed assign identical values to identically named parameters
// regardless of creation order.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  // Glorot-uniform matrix with limit sqrt(6 / (rows + cols)).
  Parameter& glorot(const std::string& name, int rows, int cols);
  // Uniform with limit 1/sqrt(rows), rows being the fan-in.
  Parameter& uniform_fan_in(const std::string& name, int rows, int cols);
  Parameter& normal(const std::string& name, Shape shape, double stddev);
  Parameter& zeros(const std::string& name, Shape shape);
  Parameter& ones(const std::string& name, Shape shape);
  Parameter& constant(const std::string& name, Shape shape, double value);

  Parameter& find(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::vector<Parameter*> all() const;  // name order
  void zero_grad_all();
  uint64_t seed() const { return seed_; }

 private:
  Parameter& create(const std::string& name, Shape shape);
  uint64_t seed_;
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Per-forward options. valid < rows marks trailing rows as padding; they are
// excluded from attention keys and zeroed at every layer boundary.
struct FwdOpts {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  int valid = -1;  // -1 means every row is valid
};

// Deterministic sinusoidal absolute positional encoding added to x.
Tensor add_positional_encoding(Tape& tape, const Tensor& x);

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
  LayerNormParams() = default;
  LayerNormParams(ParamStore& ps, const std::string& prefix, int d);
  Tensor forward(Tape& tape, const Tensor& x) const;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  // projections wq/wk/wv/wo, each d_m x d_m, no bias
  MultiHeadAttention(ParamStore& ps, const std::string& prefix, int d_model, int heads);
  // x is the (already normalized) layer input. attn_out, when given, receives
  // one T x T attention matrix per head.
  Tensor forward(Tape& tape, const Tensor& x, const FwdOpts& opts,
                 std::vector<Matrix>* attn_out = nullptr) const;
  int heads() const { return heads_; }

 private:
  Parameter *wq_ = nullptr, *wk_ = nullptr, *wv_ = nullptr, *wo_ = nullptr;
  int d_model_ = 0, heads_ = 0;
};

enum class Activation { kRelu, kSwish };

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& ps, const std::string& prefix, int d_model, int d_ff, Activation act);
  Tensor forward(Tape& tape, const Tensor& x) const;

 private:
  Parameter *w1_ = nullptr, *w2_ = nullptr;
  Activation act_ = Activation::kRelu;
};

// h' = h_in + SAN(LN(h_in)); h_out = h' + FFN(LN(h'))
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, const std::string& prefix, int d_model, int heads, int d_ff);
  Tensor forward(Tape& tape, const Tensor& h_in, const FwdOpts& opts) const;

 private:
  LayerNormParams ln1_, ln2_;
  MultiHeadAttention att_;
  FeedForward ffn_;
};

// h' = h_in + 1/2 FFN(h_in); s = h' + SAN(LN(h')); o = s + Conv(s);
// h_out = LN(o + 1/2 FFN(o)). The convolution module is pointwise (d -> 2d),
// GLU, depthwise (odd kernel), layer norm in place of batch norm, swish,
// pointwise (d -> d).
class ConformerLayer {
 public:
  ConformerLayer() = default;
  ConformerLayer(ParamStore& ps, const std::string& prefix, int d_model, int heads, int d_ff,
                 int conv_kernel);
  Tensor forward(Tape& tape, const Tensor& h_in, const FwdOpts& opts) const;

 private:
  FeedForward ffn1_, ffn2_;
  LayerNormParams ln_att_, ln_conv_, ln_out_;
  MultiHeadAttention att_;
  Parameter *pw1_ = nullptr, *pw1_b_ = nullptr;  // d -> 2d
  Parameter *dw_ = nullptr;                      // kernel x d
  Parameter *pw2_ = nullptr, *pw2_b_ = nullptr;  // d -> d
};

// Two stride-2 convolutions with relu, then an affine projection to d_model.
// Output length is ceil(T/4) via conv1d_out_len applied twice; callers use
// subsampled_len for CTC feasibility checks.
class Subsampler {
 public:
  Subsampler() = default;
  Subsampler(ParamStore& ps, const std::string& prefix, int d_feat, int d_model);
  // Returns the projected features; *out_valid receives the subsampled valid
  // length when a valid length was given.
  Tensor forward(Tape& tape, const Tensor& x, const FwdOpts& opts, int* out_valid = nullptr) const;
  static int subsampled_len(int T);

 private:
  Parameter *conv1_ = nullptr, *conv1_b_ = nullptr;
  Parameter *conv2_ = nullptr, *conv2_b_ = nullptr;
  Parameter *proj_ = nullptr, *proj_b_ = nullptr;
  int d_feat_ = 0, d_model_ = 0;
};

}  // namespace gic
