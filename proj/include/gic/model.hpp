#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gic/ctc.hpp"
#include "gic/layers.hpp"

namespace gic {

enum class Backbone { kTransformer, kConformer };

Backbone backbone_from_string(const std::string& s);
std::string backbone_to_string(Backbone b);

struct GicConfig {
  Backbone backbone = Backbone::kTransformer;
  int layers = 6;   // L
  int taps = 2;     // K
  double lambda = 0.5;
  int d_model = 32;
  int heads = 2;
  int d_ff = 128;
  int conv_kernel = 15;
  int vocab_size = 8;  // including blank
  int d_feat = 16;
  double dropout = 0.1;
  bool enable_gic = true;
  bool enable_intermediate_loss = true;
  bool enable_gate = true;  // false replaces the gate with h + e
  bool share_tap_projection = false;
  bool stop_gradient_soft_labels = false;

  void validate() const;  // throws ConfigError
  bool has_taps() const { return taps > 0 && (enable_gic || enable_intermediate_loss); }
};

// Tap layers round(iL/(K+1)) for i in 1..K; strictly increasing, never the
// final layer. Duplicates after rounding are a configuration error.
std::vector<int> tap_layer_indices(int L, int K);

// (1-lambda) * final + (lambda/K) * sum(intermediates); an empty list means
// the final loss alone.
double total_loss(double final_loss, const std::vector<double>& intermediates, double lambda);

// Soft-label head at a tap: Softmax(Linear(LN(h))), rows are distributions
// over the vocabulary.
struct VocabHead {
  LayerNormParams ln;
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  VocabHead() = default;
  VocabHead(ParamStore& ps, const std::string& prefix, int d_model, int vocab);
  Tensor logits(Tape& tape, const Tensor& h) const;
};

struct GateParams {
  Parameter* w1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b = nullptr;
  GateParams() = default;
  GateParams(ParamStore& ps, const std::string& prefix, int d_model);
};

// e = q x emb: each frame's textual embedding is the probability-weighted sum
// of token embedding rows.
Tensor textual_embedding(const Tensor& q, const Tensor& emb);

// g = Sigmoid(W1 h + W2 e + b); returns g*h + (1-g)*e elementwise.
Tensor gate_fuse(Tape& tape, const Tensor& h, const Tensor& e, const GateParams& gate);

struct TapOutput {
  int layer = 0;        // 1-based encoder layer index
  Matrix posterior;     // T' x |V|, valid rows only
  double loss = kPosInf;
  bool feasible = false;
  Matrix fused;         // h_{l+1}^in at valid rows; empty when gic disabled
};

struct ModelOutput {
  int valid = 0;               // subsampled frame count T'
  Matrix final_posterior;      // T' x |V|, valid rows only
  std::vector<TapOutput> taps;
  double final_loss = kPosInf;
  double loss = kPosInf;       // weighted total over final and tap losses
  bool feasible = false;
  Tensor loss_node;            // defined only when labels given and feasible
};

class GicModel {
 public:
  GicModel(const GicConfig& cfg, uint64_t seed);

  const GicConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::vector<int>& tap_layers() const { return tap_layers_; }

  // Runs subsample -> positional encoding -> L encoder layers with tap heads.
  // labels == nullptr skips every loss (decode mode). valid_frames < rows
  // marks trailing feature rows as padding.
  ModelOutput forward(Tape& tape, const Matrix& features, int valid_frames,
                      const std::vector<int>* labels, const FwdOpts& opts) const;

  // Greedy hypothesis from the final posterior (eval mode, no dropout).
  std::vector<int> greedy(const Matrix& features) const;

 private:
  GicConfig cfg_;
  ParamStore store_;
  std::vector<int> tap_layers_;
  Subsampler sub_;
  std::vector<TransformerLayer> tlayers_;
  std::vector<ConformerLayer> clayers_;
  VocabHead final_head_;
  std::vector<VocabHead> tap_heads_;  // empty when shared or tapless
  std::vector<GateParams> gates_;
  Parameter* emb_ = nullptr;
  const VocabHead& head_for_tap(size_t tap_pos) const;
};

}  // namespace gic
