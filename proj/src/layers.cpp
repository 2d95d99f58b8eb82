#include "gic/layers.hpp"

#include <cmath>

namespace gic {

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::create(const std::string& name, Shape shape) {
  if (params_.count(name)) throw ConfigError("ParamStore: duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>(name, std::move(shape));
  Parameter& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter& ParamStore::glorot(const std::string& name, int rows, int cols) {
  Parameter& p = create(name, {rows, cols});
  std::mt19937_64 rng(mix_seed(seed_, name));
  double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : p.value) v = dist(rng);
  return p;
}

Parameter& ParamStore::uniform_fan_in(const std::string& name, int rows, int cols) {
  Parameter& p = create(name, {rows, cols});
  std::mt19937_64 rng(mix_seed(seed_, name));
  double limit = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : p.value) v = dist(rng);
  return p;
}

Parameter& ParamStore::normal(const std::string& name, Shape shape, double stddev) {
  Parameter& p = create(name, std::move(shape));
  std::mt19937_64 rng(mix_seed(seed_, name));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.value) v = dist(rng);
  return p;
}

Parameter& ParamStore::zeros(const std::string& name, Shape shape) {
  return create(name, std::move(shape));
}

Parameter& ParamStore::constant(const std::string& name, Shape shape, double value) {
  Parameter& p = create(name, std::move(shape));
  std::fill(p.value.begin(), p.value.end(), value);
  return p;
}

Parameter& ParamStore::ones(const std::string& name, Shape shape) {
  Parameter& p = create(name, std::move(shape));
  std::fill(p.value.begin(), p.value.end(), 1.0);
  return p;
}

Parameter& ParamStore::find(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
  return *it->second;
}

std::vector<Parameter*> ParamStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad_all() {
  for (const auto& [name, p] : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Positional encoding

Tensor add_positional_encoding(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("add_positional_encoding: rank-2 input required");
  int T = x.rows(), d = x.cols();
  std::vector<double> pe(static_cast<size_t>(T) * d, 0.0);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i * 2 < d; ++i) {
      double angle = t * std::exp(-std::log(10000.0) * (2.0 * i) / d);
      pe[static_cast<size_t>(t) * d + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d) pe[static_cast<size_t>(t) * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return add(x, tape.constant({T, d}, std::move(pe)));
}

// ---------------------------------------------------------------------------
// LayerNormParams

LayerNormParams::LayerNormParams(ParamStore& ps, const std::string& prefix, int d) {
  gain = &ps.ones(prefix + ".gain", {d});
  bias = &ps.zeros(prefix + ".bias", {d});
}

Tensor LayerNormParams::forward(Tape& tape, const Tensor& x) const {
  return layer_norm(x, tape.param(*gain), tape.param(*bias));
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& prefix, int d_model,
                                       int heads)
    : d_model_(d_model), heads_(heads) {
  if (heads <= 0 || d_model % heads != 0)
    throw ConfigError("attention: d_model must be divisible by heads");
  wq_ = &ps.glorot(prefix + ".wq", d_model, d_model);
  wk_ = &ps.glorot(prefix + ".wk", d_model, d_model);
  wv_ = &ps.glorot(prefix + ".wv", d_model, d_model);
  wo_ = &ps.glorot(prefix + ".wo", d_model, d_model);
}

Tensor MultiHeadAttention::forward(Tape& tape, const Tensor& x, const FwdOpts& opts,
                                   std::vector<Matrix>* attn_out) const {
  if (x.cols() != d_model_) throw ShapeError("attention: input width mismatch");
  int T = x.rows();
  int dh = d_model_ / heads_;
  Tensor q = matmul(x, tape.param(*wq_));
  Tensor k = matmul(x, tape.param(*wk_));
  Tensor v = matmul(x, tape.param(*wv_));

  // Padded key positions get a -1e30 additive bias; after the softmax shift
  // they underflow to exactly zero weight.
  bool masked = opts.valid >= 0 && opts.valid < T;
  Tensor bias;
  if (masked) {
    std::vector<double> b(static_cast<size_t>(T) * T, 0.0);
    for (int r = 0; r < T; ++r)
      for (int c = opts.valid; c < T; ++c) b[static_cast<size_t>(r) * T + c] = -1e30;
    bias = tape.constant({T, T}, std::move(b));
  }

  Tensor ctx;
  for (int h = 0; h < heads_; ++h) {
    Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (masked) scores = add(scores, bias);
    Tensor attn = softmax(scores, 1);
    if (attn_out) {
      Matrix m(T, T);
      m.data = attn.values();
      attn_out->push_back(std::move(m));
    }
    Tensor ctx_h = matmul(attn, vh);
    ctx = h == 0 ? ctx_h : concat(ctx, ctx_h, 1);
  }
  return matmul(ctx, tape.param(*wo_));
}

// ---------------------------------------------------------------------------
// FeedForward

FeedForward::FeedForward(ParamStore& ps, const std::string& prefix, int d_model, int d_ff,
                         Activation act)
    : act_(act) {
  w1_ = &ps.glorot(prefix + ".w1", d_model, d_ff);
  w2_ = &ps.glorot(prefix + ".w2", d_ff, d_model);
}

Tensor FeedForward::forward(Tape& tape, const Tensor& x) const {
  Tensor h = matmul(x, tape.param(*w1_));
  h = act_ == Activation::kRelu ? relu(h) : swish(h);
  return matmul(h, tape.param(*w2_));
}

// ---------------------------------------------------------------------------
// TransformerLayer

TransformerLayer::TransformerLayer(ParamStore& ps, const std::string& prefix, int d_model,
                                   int heads, int d_ff)
    : ln1_(ps, prefix + ".ln1", d_model),
      ln2_(ps, prefix + ".ln2", d_model),
      att_(ps, prefix + ".att", d_model, heads),
      ffn_(ps, prefix + ".ffn", d_model, d_ff, Activation::kRelu) {}

static Tensor maybe_dropout(const Tensor& x, const FwdOpts& opts) {
  if (!opts.train || opts.dropout <= 0.0) return x;
  if (!opts.rng) throw ConfigError("dropout requires an rng in training mode");
  return dropout(x, opts.dropout, true, *opts.rng);
}

static Tensor maybe_mask(const Tensor& x, const FwdOpts& opts) {
  if (opts.valid >= 0 && opts.valid < x.rows()) return mask_rows(x, opts.valid);
  return x;
}

Tensor TransformerLayer::forward(Tape& tape, const Tensor& h_in, const FwdOpts& opts) const {
  Tensor h = add(h_in, maybe_dropout(att_.forward(tape, ln1_.forward(tape, h_in), opts), opts));
  Tensor out = add(h, maybe_dropout(ffn_.forward(tape, ln2_.forward(tape, h)), opts));
  return maybe_mask(out, opts);
}

// ---------------------------------------------------------------------------
// ConformerLayer

ConformerLayer::ConformerLayer(ParamStore& ps, const std::string& prefix, int d_model, int heads,
                               int d_ff, int conv_kernel)
    : ffn1_(ps, prefix + ".ffn1", d_model, d_ff, Activation::kSwish),
      ffn2_(ps, prefix + ".ffn2", d_model, d_ff, Activation::kSwish),
      ln_att_(ps, prefix + ".ln_att", d_model),
      ln_conv_(ps, prefix + ".ln_conv", d_model),
      ln_out_(ps, prefix + ".ln_out", d_model),
      att_(ps, prefix + ".att", d_model, heads) {
  if (conv_kernel % 2 == 0) throw ConfigError("conformer: conv kernel must be odd");
  pw1_ = &ps.glorot(prefix + ".conv.pw1", d_model, 2 * d_model);
  pw1_b_ = &ps.zeros(prefix + ".conv.pw1_b", {2 * d_model});
  dw_ = &ps.glorot(prefix + ".conv.dw", conv_kernel, d_model);
  pw2_ = &ps.glorot(prefix + ".conv.pw2", d_model, d_model);
  pw2_b_ = &ps.zeros(prefix + ".conv.pw2_b", {d_model});
}

Tensor ConformerLayer::forward(Tape& tape, const Tensor& h_in, const FwdOpts& opts) const {
  Tensor h = add(h_in, scale(maybe_dropout(ffn1_.forward(tape, h_in), opts), 0.5));
  Tensor s = add(h, maybe_dropout(att_.forward(tape, ln_att_.forward(tape, h), opts), opts));

  // Convolution module. The pointwise bias makes padded rows nonzero, so the
  // mask goes right before the depthwise conv: its window then sees the same
  // zero frames a sequence boundary would provide.
  Tensor c = linear(s, tape.param(*pw1_), tape.param(*pw1_b_));
  c = glu(c);
  c = maybe_mask(c, opts);
  c = depthwise_conv1d(c, tape.param(*dw_));
  c = ln_conv_.forward(tape, c);
  c = swish(c);
  c = linear(c, tape.param(*pw2_), tape.param(*pw2_b_));
  Tensor o = add(s, maybe_dropout(c, opts));

  Tensor out = ln_out_.forward(tape, add(o, scale(maybe_dropout(ffn2_.forward(tape, o), opts), 0.5)));
  return maybe_mask(out, opts);
}

// ---------------------------------------------------------------------------
// Subsampler

Subsampler::Subsampler(ParamStore& ps, const std::string& prefix, int d_feat, int d_model)
    : d_feat_(d_feat), d_model_(d_model) {
  conv1_ = &ps.glorot(prefix + ".conv1", 3 * d_feat, d_model);
  conv1_b_ = &ps.zeros(prefix + ".conv1_b", {d_model});
  conv2_ = &ps.glorot(prefix + ".conv2", 3 * d_model, d_model);
  conv2_b_ = &ps.zeros(prefix + ".conv2_b", {d_model});
  proj_ = &ps.glorot(prefix + ".proj", d_model, d_model);
  proj_b_ = &ps.zeros(prefix + ".proj_b", {d_model});
}

int Subsampler::subsampled_len(int T) {
  return conv1d_out_len(conv1d_out_len(T, 3, 2), 3, 2);
}

Tensor Subsampler::forward(Tape& tape, const Tensor& x, const FwdOpts& opts,
                           int* out_valid) const {
  if (x.cols() != d_feat_) throw ShapeError("subsample: feature width mismatch");
  if (x.rows() < 4) throw ShapeError("subsample: input shorter than receptive field");
  int valid = opts.valid >= 0 ? opts.valid : x.rows();
  Tensor in = valid < x.rows() ? mask_rows(x, valid) : x;

  Tensor h = relu(conv1d(in, tape.param(*conv1_), tape.param(*conv1_b_), 3, 2));
  int v1 = conv1d_out_len(valid, 3, 2);
  if (v1 < h.rows()) h = mask_rows(h, v1);

  h = relu(conv1d(h, tape.param(*conv2_), tape.param(*conv2_b_), 3, 2));
  int v2 = conv1d_out_len(v1, 3, 2);
  if (v2 < h.rows()) h = mask_rows(h, v2);

  h = linear(h, tape.param(*proj_), tape.param(*proj_b_));
  if (v2 < h.rows()) h = mask_rows(h, v2);
  if (out_valid) *out_valid = v2;
  return h;
}

}  // namespace gic
