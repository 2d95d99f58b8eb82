#pragma once

#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gic/common.hpp"

namespace gic {

class Tape;
class Tensor;

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

// Trainable weight with persistent value and gradient storage. Gradients
// accumulate across backward calls until zero_grad().
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0), grad(numel(shape), 0.0) {}

  int size() const { return static_cast<int>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

namespace detail {

using BackwardFn = std::function<void(Tape&, int)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // unused when bound to a Parameter
  std::vector<int> parents;
  BackwardFn backward;  // empty for leaves and for grad-free results
  Parameter* bound = nullptr;
  bool requires_grad = false;
};

}  // namespace detail

// Handle to a node on a Tape. Cheap to copy; immutable after creation except
// for gradient accumulation during backward.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[i]; }
  int rows() const { return shape()[0]; }
  int cols() const { return shape()[1]; }
  int size() const { return numel(shape()); }

  const std::vector<double>& values() const;
  const std::vector<double>& grad() const;
  bool requires_grad() const;

  // scalar convenience accessor
  double value() const;
  double operator()(int i) const { return values()[i]; }
  double operator()(int r, int c) const { return values()[static_cast<size_t>(r) * cols() + c]; }

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Define-by-run recorder. Nodes are appended in execution order, so the
// recorded order is a topological order: every node's parents precede it.
// Single-threaded; run independent tapes for concurrent work.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf constructors -------------------------------------------------------
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v) { return constant({1}, {v}); }
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad);
  // Binds a Parameter: the leaf copies its current value and accumulates
  // gradients into its grad. Repeated calls for the same Parameter return
  // the same node.
  Tensor param(Parameter& p);

  // Recording (used by the op implementations) ------------------------------
  Tensor make(Shape shape, std::vector<double> values, std::vector<int> parents,
              detail::BackwardFn backward);

  const Shape& shape(int id) const { return nodes_[id].shape; }
  const std::vector<double>& values(int id) const { return nodes_[id].value; }
  // Accumulation target for a node's gradient; nullptr when no grad wanted.
  double* grad_accum(int id);
  const std::vector<double>& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Reverse sweep from a scalar loss. Each call re-propagates and adds 1x of
  // the gradient into every reachable requires-grad leaf.
  void backward(const Tensor& loss);

 private:
  friend class Tensor;
  std::vector<detail::Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

inline const Shape& Tensor::shape() const { return tape_->shape(id_); }
inline const std::vector<double>& Tensor::values() const { return tape_->values(id_); }
inline const std::vector<double>& Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }
inline double Tensor::value() const {
  if (size() != 1) throw ShapeError("Tensor::value: tensor is not scalar");
  return values()[0];
}

// Elementwise and matrix operations. All inputs must live on the same tape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor swish(const Tensor& a);
// Gated linear unit over the last axis: splits columns in half, a * sigmoid(b).
Tensor glu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
// Normalizes over the last axis; epsilon fixed at 1e-12.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// x[T x in] * w[in x out] + b[out] broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Per-channel 1-D convolution, odd kernel, zero same-padding. x: T x d, kernel: k x d.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);
// Full 1-D convolution over time with stride. x: T x c_in, w: (k*c_in) x c_out,
// b: c_out, zero padding (k-1)/2 on both sides.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int ksize, int stride);
int conv1d_out_len(int in_len, int ksize, int stride);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);
inline Tensor slice_rows(const Tensor& a, int begin, int end) { return slice(a, 0, begin, end); }
// Gathers rows of emb by id; grad scatter-adds into emb rows.
Tensor embedding_lookup(const Tensor& emb, const std::vector<int>& ids);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Inverted-dropout; identity when !train or p == 0.
Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng);
// Zeroes rows [valid, rows); identity when valid >= rows.
Tensor mask_rows(const Tensor& a, int valid);

double sigmoid_value(double x);

}  // namespace gic
