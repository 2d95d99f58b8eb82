#include "gic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace gic {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Tape& same_tape(const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined(), "op: undefined tensor");
  check(a.tape() == b.tape(), "op: tensors live on different tapes");
  return *a.tape();
}

// C[m x n] += A(op) * B(op)
void mm_acc(const double* a, bool ta, const double* b, bool tb, int m, int k, int n, double* c) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = ta ? a[static_cast<size_t>(p) * m + i] : a[static_cast<size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : b + static_cast<size_t>(p) * n;
      double* crow = c + static_cast<size_t>(i) * n;
      if (tb) {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<size_t>(j) * k + p];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  check(numel(shape) == static_cast<int>(values.size()), "leaf: shape does not match value count");
  detail::Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Tensor(this, it->second);
  detail::Node n;
  n.shape = p.shape;
  n.value = p.value;
  n.bound = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Tensor(this, id);
}

Tensor Tape::make(Shape shape, std::vector<double> values, std::vector<int> parents,
                  detail::BackwardFn backward) {
  check(numel(shape) == static_cast<int>(values.size()), "make: shape does not match value count");
  detail::Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.parents = std::move(parents);
  for (int p : n.parents) {
    if (nodes_[p].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

double* Tape::grad_accum(int id) {
  detail::Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.bound) return n.bound->grad.data();
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad.data();
}

const std::vector<double>& Tape::grad(int id) const {
  const detail::Node& n = nodes_[id];
  if (n.bound) return n.bound->grad;
  if (n.grad.size() != n.value.size()) throw Error("grad: no gradient recorded for this tensor");
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  check(loss.defined() && loss.tape() == this, "backward: loss not on this tape");
  if (numel(nodes_[loss.id()].shape) != 1) throw ShapeError("backward: loss must be scalar");
  if (!nodes_[loss.id()].requires_grad) return;

  // Mark nodes reachable from the loss through requires-grad parents.
  std::vector<char> needed(nodes_.size(), 0);
  std::vector<int> stack{loss.id()};
  needed[loss.id()] = 1;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (!needed[p] && nodes_[p].requires_grad) {
        needed[p] = 1;
        stack.push_back(p);
      }
    }
  }

  // Fresh propagation buffers for interior nodes; leaves keep accumulating.
  for (int id = 0; id <= loss.id(); ++id) {
    if (!needed[id]) continue;
    detail::Node& n = nodes_[id];
    if (n.backward) {
      n.grad.assign(n.value.size(), 0.0);
    } else if (!n.bound && n.grad.size() != n.value.size()) {
      n.grad.assign(n.value.size(), 0.0);
    }
  }

  grad_accum(loss.id())[0] += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    if (needed[id] && nodes_[id].backward) nodes_[id].backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  check(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int aid = a.id(), bid = b.id();
  return t.make(a.shape(), std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.grad_accum(bid)) {
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int aid = a.id(), bid = b.id();
  return t.make(a.shape(), std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.grad_accum(bid)) {
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int aid = a.id(), bid = b.id();
  return t.make(a.shape(), std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& av = t.values(aid);
    const auto& bv = t.values(bid);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (double* gb = t.grad_accum(bid)) {
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid, s](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    }
  });
}

Tensor relu(const Tensor& a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& x = t.values(aid);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values());
  for (double& v : out) v = sigmoid_value(v);
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.values(self);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Tensor swish(const Tensor& a) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values());
  for (double& v : out) v = v * sigmoid_value(v);
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& x = t.values(aid);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid_value(x[i]);
        ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    }
  });
}

Tensor glu(const Tensor& a) {
  Tape& t = *a.tape();
  check(a.rank() == 2 && a.cols() % 2 == 0, "glu: needs rank-2 input with even column count");
  const int rows = a.rows(), half = a.cols() / 2, cols = a.cols();
  std::vector<double> out(static_cast<size_t>(rows) * half);
  const auto& x = a.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < half; ++c) {
      const double lhs = x[static_cast<size_t>(r) * cols + c];
      const double gate = x[static_cast<size_t>(r) * cols + half + c];
      out[static_cast<size_t>(r) * half + c] = lhs * sigmoid_value(gate);
    }
  }
  const int aid = a.id();
  return t.make({rows, half}, std::move(out), {aid}, [aid, rows, half, cols](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& x = t.values(aid);
    double* ga = t.grad_accum(aid);
    if (!ga) return;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < half; ++c) {
        const double lhs = x[static_cast<size_t>(r) * cols + c];
        const double s = sigmoid_value(x[static_cast<size_t>(r) * cols + half + c]);
        const double go = g[static_cast<size_t>(r) * half + c];
        ga[static_cast<size_t>(r) * cols + c] += go * s;
        ga[static_cast<size_t>(r) * cols + half + c] += go * lhs * s * (1.0 - s);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  check(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank-2");
  check(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  mm_acc(a.values().data(), false, b.values().data(), false, m, k, n, out.data());
  const int aid = a.id(), bid = b.id();
  return t.make({m, n}, std::move(out), {aid, bid}, [aid, bid, m, k, n](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      // dA += dC * B^T
      mm_acc(g.data(), false, t.values(bid).data(), true, m, n, k, ga);
    }
    if (double* gb = t.grad_accum(bid)) {
      // dB += A^T * dC
      mm_acc(t.values(aid).data(), true, g.data(), false, k, m, n, gb);
    }
  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = *a.tape();
  check(a.rank() == 2, "transpose: input must be rank-2");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& x = a.values();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = x[static_cast<size_t>(i) * n + j];
  }
  const int aid = a.id();
  return t.make({n, m}, std::move(out), {aid}, [aid, m, n](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape& t = same_tape(x, w);
  same_tape(w, b);
  check(x.rank() == 2 && w.rank() == 2, "linear: x and w must be rank-2");
  check(x.cols() == w.rows(), "linear: inner dimensions disagree");
  check(b.size() == w.cols(), "linear: bias size must equal output width");
  const int m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = b.values()[j];
  }
  mm_acc(x.values().data(), false, w.values().data(), false, m, k, n, out.data());
  const int xid = x.id(), wid = w.id(), bid = b.id();
  return t.make({m, n}, std::move(out), {xid, wid, bid}, [xid, wid, bid, m, k, n](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* gx = t.grad_accum(xid)) mm_acc(g.data(), false, t.values(wid).data(), true, m, n, k, gx);
    if (double* gw = t.grad_accum(wid)) mm_acc(t.values(xid).data(), true, g.data(), false, k, m, n, gw);
    if (double* gb = t.grad_accum(bid)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

Tensor softmax(const Tensor& a, int axis) {
  Tape& t = *a.tape();
  check(a.rank() == 1 || a.rank() == 2, "softmax: rank-1 or rank-2 input");
  const int rank = a.rank();
  check(axis >= 0 && axis < rank, "softmax: invalid axis");
  // View as groups x span: axis 1 (or rank-1) iterates rows, axis 0 columns.
  const int rows = rank == 2 ? a.rows() : 1;
  const int cols = rank == 2 ? a.cols() : a.size();
  const bool over_cols = (rank == 1) || axis == 1;
  const int groups = over_cols ? rows : cols;
  const int span = over_cols ? cols : rows;
  const int gstride = over_cols ? cols : 1;
  const int sstride = over_cols ? 1 : cols;

  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (int gi = 0; gi < groups; ++gi) {
    const size_t base = static_cast<size_t>(gi) * gstride;
    double mx = kNegInf;
    for (int si = 0; si < span; ++si) mx = std::max(mx, x[base + static_cast<size_t>(si) * sstride]);
    double total = 0.0;
    for (int si = 0; si < span; ++si) {
      const double e = std::exp(x[base + static_cast<size_t>(si) * sstride] - mx);
      out[base + static_cast<size_t>(si) * sstride] = e;
      total += e;
    }
    for (int si = 0; si < span; ++si) out[base + static_cast<size_t>(si) * sstride] /= total;
  }
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid},
                [aid, groups, span, gstride, sstride](Tape& t, int self) {
                  const auto& g = t.grad(self);
                  const auto& y = t.values(self);
                  double* ga = t.grad_accum(aid);
                  if (!ga) return;
                  for (int gi = 0; gi < groups; ++gi) {
                    const size_t base = static_cast<size_t>(gi) * gstride;
                    double dot = 0.0;
                    for (int si = 0; si < span; ++si) {
                      const size_t ix = base + static_cast<size_t>(si) * sstride;
                      dot += g[ix] * y[ix];
                    }
                    for (int si = 0; si < span; ++si) {
                      const size_t ix = base + static_cast<size_t>(si) * sstride;
                      ga[ix] += y[ix] * (g[ix] - dot);
                    }
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-12;
  Tape& t = same_tape(x, gain);
  same_tape(gain, bias);
  check(x.rank() == 1 || x.rank() == 2, "layer_norm: rank-1 or rank-2 input");
  const int rows = x.rank() == 2 ? x.rows() : 1;
  const int cols = x.rank() == 2 ? x.cols() : x.size();
  check(cols >= 1, "layer_norm: last axis must be non-empty");
  check(gain.size() == cols && bias.size() == cols, "layer_norm: gain/bias width mismatch");

  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_sd(rows);
  std::vector<double> xhat(xv.size());
  for (int r = 0; r < rows; ++r) {
    const size_t base = static_cast<size_t>(r) * cols;
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += xv[base + c];
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = xv[base + c] - mu;
      var += d * d;
    }
    var /= cols;
    const double isd = 1.0 / std::sqrt(var + kEps);
    inv_sd[r] = isd;
    for (int c = 0; c < cols; ++c) {
      const double h = (xv[base + c] - mu) * isd;
      xhat[base + c] = h;
      out[base + c] = gain.values()[c] * h + bias.values()[c];
    }
  }
  const int xid = x.id(), gid = gain.id(), bid = bias.id();
  auto xhat_p = std::make_shared<std::vector<double>>(std::move(xhat));
  auto isd_p = std::make_shared<std::vector<double>>(std::move(inv_sd));
  return t.make(x.shape(), std::move(out), {xid, gid, bid},
                [xid, gid, bid, rows, cols, xhat_p, isd_p](Tape& t, int self) {
                  const auto& g = t.grad(self);
                  const auto& gainv = t.values(gid);
                  double* gx = t.grad_accum(xid);
                  double* gg = t.grad_accum(gid);
                  double* gb = t.grad_accum(bid);
                  for (int r = 0; r < rows; ++r) {
                    const size_t base = static_cast<size_t>(r) * cols;
                    double mean_dh = 0.0, mean_dh_xhat = 0.0;
                    for (int c = 0; c < cols; ++c) {
                      const double dh = g[base + c] * gainv[c];
                      mean_dh += dh;
                      mean_dh_xhat += dh * (*xhat_p)[base + c];
                    }
                    mean_dh /= cols;
                    mean_dh_xhat /= cols;
                    for (int c = 0; c < cols; ++c) {
                      const double h = (*xhat_p)[base + c];
                      if (gx) {
                        const double dh = g[base + c] * gainv[c];
                        gx[base + c] += (*isd_p)[r] * (dh - mean_dh - h * mean_dh_xhat);
                      }
                      if (gg) gg[c] += g[base + c] * h;
                      if (gb) gb[c] += g[base + c];
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Convolutions

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  Tape& t = same_tape(x, kernel);
  check(x.rank() == 2 && kernel.rank() == 2, "depthwise_conv1d: rank-2 inputs");
  check(kernel.cols() == x.cols(), "depthwise_conv1d: channel count mismatch");
  check(kernel.rows() % 2 == 1, "depthwise_conv1d: kernel length must be odd");
  const int T = x.rows(), d = x.cols(), k = kernel.rows(), half = k / 2;
  std::vector<double> out(static_cast<size_t>(T) * d, 0.0);
  const auto& xv = x.values();
  const auto& kv = kernel.values();
  for (int ti = 0; ti < T; ++ti) {
    for (int j = 0; j < k; ++j) {
      const int src = ti + j - half;
      if (src < 0 || src >= T) continue;
      for (int c = 0; c < d; ++c) {
        out[static_cast<size_t>(ti) * d + c] += xv[static_cast<size_t>(src) * d + c] * kv[static_cast<size_t>(j) * d + c];
      }
    }
  }
  const int xid = x.id(), kid = kernel.id();
  return t.make({T, d}, std::move(out), {xid, kid}, [xid, kid, T, d, k, half](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.values(xid);
    const auto& kv = t.values(kid);
    double* gx = t.grad_accum(xid);
    double* gk = t.grad_accum(kid);
    for (int ti = 0; ti < T; ++ti) {
      for (int j = 0; j < k; ++j) {
        const int src = ti + j - half;
        if (src < 0 || src >= T) continue;
        for (int c = 0; c < d; ++c) {
          const double go = g[static_cast<size_t>(ti) * d + c];
          if (gx) gx[static_cast<size_t>(src) * d + c] += go * kv[static_cast<size_t>(j) * d + c];
          if (gk) gk[static_cast<size_t>(j) * d + c] += go * xv[static_cast<size_t>(src) * d + c];
        }
      }
    }
  });
}

int conv1d_out_len(int in_len, int ksize, int stride) {
  const int pad = (ksize - 1) / 2;
  return (in_len + 2 * pad - ksize) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int ksize, int stride) {
  Tape& t = same_tape(x, w);
  same_tape(w, b);
  check(x.rank() == 2 && w.rank() == 2, "conv1d: rank-2 inputs");
  const int T = x.rows(), cin = x.cols();
  check(w.rows() == ksize * cin, "conv1d: weight rows must be ksize*c_in");
  const int cout = w.cols();
  check(b.size() == cout, "conv1d: bias size mismatch");
  check(ksize % 2 == 1 && stride >= 1, "conv1d: odd kernel and positive stride required");
  const int pad = (ksize - 1) / 2;
  const int tout = conv1d_out_len(T, ksize, stride);
  check(tout >= 1, "conv1d: input too short");

  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<double> out(static_cast<size_t>(tout) * cout);
  for (int to = 0; to < tout; ++to) {
    for (int o = 0; o < cout; ++o) out[static_cast<size_t>(to) * cout + o] = b.values()[o];
    for (int j = 0; j < ksize; ++j) {
      const int src = to * stride + j - pad;
      if (src < 0 || src >= T) continue;
      for (int ci = 0; ci < cin; ++ci) {
        const double xvv = xv[static_cast<size_t>(src) * cin + ci];
        if (xvv == 0.0) continue;
        const double* wrow = wv.data() + static_cast<size_t>(j * cin + ci) * cout;
        double* orow = out.data() + static_cast<size_t>(to) * cout;
        for (int o = 0; o < cout; ++o) orow[o] += xvv * wrow[o];
      }
    }
  }
  const int xid = x.id(), wid = w.id(), bid = b.id();
  return t.make({tout, cout}, std::move(out), {xid, wid, bid},
                [xid, wid, bid, T, cin, cout, ksize, stride, pad, tout](Tape& t, int self) {
                  const auto& g = t.grad(self);
                  const auto& xv = t.values(xid);
                  const auto& wv = t.values(wid);
                  double* gx = t.grad_accum(xid);
                  double* gw = t.grad_accum(wid);
                  double* gb = t.grad_accum(bid);
                  for (int to = 0; to < tout; ++to) {
                    const double* grow = g.data() + static_cast<size_t>(to) * cout;
                    if (gb) {
                      for (int o = 0; o < cout; ++o) gb[o] += grow[o];
                    }
                    for (int j = 0; j < ksize; ++j) {
                      const int src = to * stride + j - pad;
                      if (src < 0 || src >= T) continue;
                      for (int ci = 0; ci < cin; ++ci) {
                        const size_t wbase = static_cast<size_t>(j * cin + ci) * cout;
                        if (gx) {
                          double acc = 0.0;
                          for (int o = 0; o < cout; ++o) acc += grow[o] * wv[wbase + o];
                          gx[static_cast<size_t>(src) * cin + ci] += acc;
                        }
                        if (gw) {
                          const double xvv = xv[static_cast<size_t>(src) * cin + ci];
                          for (int o = 0; o < cout; ++o) gw[wbase + o] += xvv * grow[o];
                        }
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  Tape& t = same_tape(a, b);
  check(a.rank() == 2 && b.rank() == 2, "concat: rank-2 inputs");
  check(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  int m, n, asz;
  std::vector<double> out;
  if (axis == 0) {
    check(a.cols() == b.cols(), "concat: column mismatch");
    m = a.rows() + b.rows();
    n = a.cols();
    asz = a.rows();
    out = a.values();
    out.insert(out.end(), b.values().begin(), b.values().end());
  } else {
    check(a.rows() == b.rows(), "concat: row mismatch");
    m = a.rows();
    n = a.cols() + b.cols();
    asz = a.cols();
    out.resize(static_cast<size_t>(m) * n);
    for (int r = 0; r < m; ++r) {
      std::copy_n(a.values().begin() + static_cast<size_t>(r) * a.cols(), a.cols(),
                  out.begin() + static_cast<size_t>(r) * n);
      std::copy_n(b.values().begin() + static_cast<size_t>(r) * b.cols(), b.cols(),
                  out.begin() + static_cast<size_t>(r) * n + a.cols());
    }
  }
  const int aid = a.id(), bid = b.id();
  return t.make({m, n}, std::move(out), {aid, bid}, [aid, bid, m, n, asz, axis](Tape& t, int self) {
    const auto& g = t.grad(self);
    double* ga = t.grad_accum(aid);
    double* gb = t.grad_accum(bid);
    if (axis == 0) {
      const size_t split = static_cast<size_t>(asz) * n;
      if (ga) {
        for (size_t i = 0; i < split; ++i) ga[i] += g[i];
      }
      if (gb) {
        for (size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
      }
    } else {
      const int bsz = n - asz;
      for (int r = 0; r < m; ++r) {
        if (ga) {
          for (int c = 0; c < asz; ++c) ga[static_cast<size_t>(r) * asz + c] += g[static_cast<size_t>(r) * n + c];
        }
        if (gb) {
          for (int c = 0; c < bsz; ++c) gb[static_cast<size_t>(r) * bsz + c] += g[static_cast<size_t>(r) * n + asz + c];
        }
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  Tape& t = *a.tape();
  check(a.rank() == 2, "slice: rank-2 input");
  check(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
  const int lim = axis == 0 ? a.rows() : a.cols();
  check(0 <= begin && begin < end && end <= lim, "slice: bad range");
  const int m = axis == 0 ? end - begin : a.rows();
  const int n = axis == 0 ? a.cols() : end - begin;
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& x = a.values();
  const int acols = a.cols();
  for (int r = 0; r < m; ++r) {
    const int sr = axis == 0 ? r + begin : r;
    const int sc = axis == 0 ? 0 : begin;
    std::copy_n(x.begin() + static_cast<size_t>(sr) * acols + sc, n, out.begin() + static_cast<size_t>(r) * n);
  }
  const int aid = a.id();
  return t.make({m, n}, std::move(out), {aid}, [aid, axis, begin, m, n, acols](Tape& t, int self) {
    const auto& g = t.grad(self);
    double* ga = t.grad_accum(aid);
    if (!ga) return;
    for (int r = 0; r < m; ++r) {
      const int sr = axis == 0 ? r + begin : r;
      const int sc = axis == 0 ? 0 : begin;
      for (int c = 0; c < n; ++c) ga[static_cast<size_t>(sr) * acols + sc + c] += g[static_cast<size_t>(r) * n + c];
    }
  });
}

Tensor embedding_lookup(const Tensor& emb, const std::vector<int>& ids) {
  Tape& t = *emb.tape();
  check(emb.rank() == 2, "embedding_lookup: table must be rank-2");
  const int V = emb.rows(), d = emb.cols();
  for (int id : ids) check(0 <= id && id < V, "embedding_lookup: id out of range");
  std::vector<double> out(ids.size() * static_cast<size_t>(d));
  const auto& ev = emb.values();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(ev.begin() + static_cast<size_t>(ids[i]) * d, d, out.begin() + i * d);
  }
  const int eid = emb.id();
  auto ids_p = std::make_shared<std::vector<int>>(ids);
  return t.make({static_cast<int>(ids.size()), d}, std::move(out), {eid}, [eid, d, ids_p](Tape& t, int self) {
    const auto& g = t.grad(self);
    double* ge = t.grad_accum(eid);
    if (!ge) return;
    for (size_t i = 0; i < ids_p->size(); ++i) {
      for (int c = 0; c < d; ++c) ge[static_cast<size_t>((*ids_p)[i]) * d + c] += g[i * d + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions, dropout, masking

Tensor sum(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.values()) s += v;
  const int aid = a.id();
  return t.make({1}, {s}, {aid}, [aid](Tape& t, int self) {
    const double g = t.grad(self)[0];
    if (double* ga = t.grad_accum(aid)) {
      const size_t n = t.values(aid).size();
      for (size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Tensor mean(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  const int aid = a.id();
  return t.make({1}, {s * inv}, {aid}, [aid, inv](Tape& t, int self) {
    const double g = t.grad(self)[0] * inv;
    if (double* ga = t.grad_accum(aid)) {
      const size_t n = t.values(aid).size();
      for (size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return a;
  Tape& t = *a.tape();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(a.values().size());
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = unif(rng) < p ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] *= m;
  }
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid, mask](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    }
  });
}

Tensor mask_rows(const Tensor& a, int valid) {
  check(a.rank() == 2, "mask_rows: rank-2 input");
  check(valid >= 0, "mask_rows: negative valid length");
  if (valid >= a.rows()) return a;
  Tape& t = *a.tape();
  const int cols = a.cols();
  std::vector<double> out(a.values());
  std::fill(out.begin() + static_cast<size_t>(valid) * cols, out.end(), 0.0);
  const int aid = a.id();
  return t.make(a.shape(), std::move(out), {aid}, [aid, valid, cols](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* ga = t.grad_accum(aid)) {
      const size_t keep = static_cast<size_t>(valid) * cols;
      for (size_t i = 0; i < keep; ++i) ga[i] += g[i];
    }
  });
}

}  // namespace gic
