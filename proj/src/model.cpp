#include "gic/model.hpp"

#include <algorithm>
#include <cmath>

namespace gic {

Backbone backbone_from_string(const std::string& s) {
  if (s == "transformer") return Backbone::kTransformer;
  if (s == "conformer") return Backbone::kConformer;
  throw ConfigError("unknown backbone: " + s);
}

std::string backbone_to_string(Backbone b) {
  return b == Backbone::kTransformer ? "transformer" : "conformer";
}

void GicConfig::validate() const {
  if (layers < 1) throw ConfigError("config: layers must be positive");
  if (taps < 0 || taps > layers - 1) throw ConfigError("config: need 0 <= taps <= layers-1");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("config: lambda must lie in [0,1]");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("config: d_model must be a positive multiple of heads");
  if (d_ff < 1) throw ConfigError("config: d_ff must be positive");
  if (backbone == Backbone::kConformer && (conv_kernel < 1 || conv_kernel % 2 == 0))
    throw ConfigError("config: conv_kernel must be odd and positive");
  if (vocab_size < 2) throw ConfigError("config: vocab_size must be at least 2");
  if (d_feat < 1) throw ConfigError("config: d_feat must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must lie in [0,1)");
  if (taps > 0) tap_layer_indices(layers, taps);
}

std::vector<int> tap_layer_indices(int L, int K) {
  if (L < 1) throw ConfigError("tap indices: layers must be positive");
  if (K < 0 || K > L - 1) throw ConfigError("tap indices: need 0 <= K <= L-1");
  std::vector<int> out;
  for (int i = 1; i <= K; ++i) {
    int idx = static_cast<int>(std::lround(static_cast<double>(i) * L / (K + 1)));
    if (!out.empty() && idx <= out.back())
      throw ConfigError("tap indices: duplicate layer after rounding");
    out.push_back(idx);
  }
  return out;
}

double total_loss(double final_loss, const std::vector<double>& intermediates, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("total_loss: lambda must lie in [0,1]");
  if (intermediates.empty()) return final_loss;
  double acc = intermediates[0];
  for (size_t i = 1; i < intermediates.size(); ++i) acc += intermediates[i];
  return (1.0 - lambda) * final_loss +
         (lambda / static_cast<double>(intermediates.size())) * acc;
}

VocabHead::VocabHead(ParamStore& ps, const std::string& prefix, int d_model, int vocab)
    : ln(ps, prefix + ".ln", d_model) {
  w = &ps.uniform_fan_in(prefix + ".proj", d_model, vocab);
  b = &ps.zeros(prefix + ".proj_b", {vocab});
}

Tensor VocabHead::logits(Tape& tape, const Tensor& h) const {
  return linear(ln.forward(tape, h), tape.param(*w), tape.param(*b));
}

GateParams::GateParams(ParamStore& ps, const std::string& prefix, int d_model) {
  w1 = &ps.uniform_fan_in(prefix + ".w1", d_model, d_model);
  w2 = &ps.uniform_fan_in(prefix + ".w2", d_model, d_model);
  // +1 bias passes mostly acoustic features early in training
  b = &ps.constant(prefix + ".b", {d_model}, 1.0);
}

Tensor textual_embedding(const Tensor& q, const Tensor& emb) {
  if (q.rank() != 2 || emb.rank() != 2 || q.cols() != emb.rows())
    throw ShapeError("textual_embedding: posterior columns must match embedding rows");
  return matmul(q, emb);
}

Tensor gate_fuse(Tape& tape, const Tensor& h, const Tensor& e, const GateParams& gate) {
  if (h.shape() != e.shape()) throw ShapeError("gate_fuse: state shapes differ");
  Tensor g = sigmoid(add(linear(h, tape.param(*gate.w1), tape.param(*gate.b)),
                         matmul(e, tape.param(*gate.w2))));
  Tensor ones = tape.constant(g.shape(), std::vector<double>(g.size(), 1.0));
  return add(mul(g, h), mul(sub(ones, g), e));
}

// ---------------------------------------------------------------------------

GicModel::GicModel(const GicConfig& cfg, uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  if (cfg_.has_taps()) tap_layers_ = tap_layer_indices(cfg_.layers, cfg_.taps);

  sub_ = Subsampler(store_, "sub", cfg_.d_feat, cfg_.d_model);
  for (int l = 1; l <= cfg_.layers; ++l) {
    std::string prefix = "enc.l" + std::to_string(l);
    if (cfg_.backbone == Backbone::kTransformer)
      tlayers_.emplace_back(store_, prefix, cfg_.d_model, cfg_.heads, cfg_.d_ff);
    else
      clayers_.emplace_back(store_, prefix, cfg_.d_model, cfg_.heads, cfg_.d_ff,
                            cfg_.conv_kernel);
  }
  final_head_ = VocabHead(store_, "final", cfg_.d_model, cfg_.vocab_size);

  if (!tap_layers_.empty()) {
    if (cfg_.enable_gic)
      emb_ = &store_.normal("emb", {cfg_.vocab_size, cfg_.d_model},
                            1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
    for (int l : tap_layers_) {
      std::string prefix = "tap" + std::to_string(l);
      if (!cfg_.share_tap_projection)
        tap_heads_.emplace_back(store_, prefix, cfg_.d_model, cfg_.vocab_size);
      if (cfg_.enable_gic && cfg_.enable_gate)
        gates_.emplace_back(store_, prefix + ".gate", cfg_.d_model);
    }
  }
}

const VocabHead& GicModel::head_for_tap(size_t tap_pos) const {
  return cfg_.share_tap_projection ? final_head_ : tap_heads_[tap_pos];
}

static Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), t.cols());
  m.data = t.values();
  return m;
}

ModelOutput GicModel::forward(Tape& tape, const Matrix& features, int valid_frames,
                              const std::vector<int>* labels, const FwdOpts& opts) const {
  if (features.cols != cfg_.d_feat) throw ShapeError("model: feature width mismatch");
  FwdOpts o = opts;
  o.valid = valid_frames >= 0 ? valid_frames : features.rows;
  if (o.valid < 1 || o.valid > features.rows)
    throw ShapeError("model: valid frame count out of range");

  Tensor x = tape.constant({features.rows, features.cols}, features.data);
  int tprime = -1;
  Tensor h = sub_.forward(tape, x, o, &tprime);
  h = add_positional_encoding(tape, h);
  if (tprime < h.rows()) h = mask_rows(h, tprime);
  FwdOpts eo = o;
  eo.valid = tprime;

  ModelOutput out;
  out.valid = tprime;
  std::vector<Tensor> inter_nodes;
  size_t tap_pos = 0;
  for (int l = 1; l <= cfg_.layers; ++l) {
    h = cfg_.backbone == Backbone::kTransformer ? tlayers_[l - 1].forward(tape, h, eo)
                                                : clayers_[l - 1].forward(tape, h, eo);
    if (tap_pos >= tap_layers_.size() || tap_layers_[tap_pos] != l) continue;

    const VocabHead& head = head_for_tap(tap_pos);
    Tensor logits = head.logits(tape, h);
    Tensor valid_logits = tprime < logits.rows() ? slice_rows(logits, 0, tprime) : logits;
    TapOutput tp;
    tp.layer = l;
    tp.posterior = to_matrix(softmax(valid_logits, 1));
    if (labels && cfg_.enable_intermediate_loss) {
      Tensor ln = ctc_loss_node(valid_logits, *labels);
      tp.loss = ln.value();
      // +inf is the defined infeasible-length signal; NaN stays "feasible"
      // so numeric failures surface to the caller instead of being skipped.
      tp.feasible = !(tp.loss == kPosInf);
      inter_nodes.push_back(ln);
    }
    if (cfg_.enable_gic) {
      Tensor q = softmax(logits, 1);
      if (cfg_.stop_gradient_soft_labels) q = tape.constant(q.shape(), q.values());
      Tensor e = textual_embedding(q, tape.param(*emb_));
      Tensor fused =
          cfg_.enable_gate ? gate_fuse(tape, h, e, gates_[tap_pos]) : add(h, e);
      if (tprime < fused.rows()) fused = mask_rows(fused, tprime);
      tp.fused = to_matrix(tprime < fused.rows() ? slice_rows(fused, 0, tprime) : fused);
      h = fused;
    }
    out.taps.push_back(std::move(tp));
    ++tap_pos;
  }

  Tensor flogits = final_head_.logits(tape, h);
  Tensor fvalid = tprime < flogits.rows() ? slice_rows(flogits, 0, tprime) : flogits;
  out.final_posterior = to_matrix(softmax(fvalid, 1));

  if (labels) {
    Tensor fl = ctc_loss_node(fvalid, *labels);
    out.final_loss = fl.value();
    out.feasible = !(out.final_loss == kPosInf);
    std::vector<double> ivals;
    for (const Tensor& n : inter_nodes) {
      ivals.push_back(n.value());
      out.feasible = out.feasible && !(n.value() == kPosInf);
    }
    out.loss = total_loss(out.final_loss, ivals, cfg_.lambda);
    if (out.feasible) {
      if (inter_nodes.empty()) {
        out.loss_node = fl;
      } else {
        Tensor acc = inter_nodes[0];
        for (size_t i = 1; i < inter_nodes.size(); ++i) acc = add(acc, inter_nodes[i]);
        out.loss_node =
            add(scale(fl, 1.0 - cfg_.lambda),
                scale(acc, cfg_.lambda / static_cast<double>(inter_nodes.size())));
      }
      out.loss = out.loss_node.value();
    }
  }
  return out;
}

std::vector<int> GicModel::greedy(const Matrix& features) const {
  Tape tape;
  ModelOutput out = forward(tape, features, features.rows, nullptr, FwdOpts{});
  return greedy_decode(out.final_posterior);
}

}  // namespace gic
