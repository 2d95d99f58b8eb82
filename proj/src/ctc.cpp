#include "gic/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>

namespace gic {

namespace {

void check_labels(const std::vector<int>& labels, int vocab, int blank) {
  for (int y : labels) {
    if (y == blank) throw DataError("ctc: blank inside label sequence");
    if (y < 0 || y >= vocab) throw DataError("ctc: label id out of vocabulary range");
  }
}

// Minimum frames needed: one per label plus one separator per repeated pair.
int min_frames(const std::vector<int>& labels) {
  int need = static_cast<int>(labels.size());
  for (size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++need;
  }
  return need;
}

}  // namespace

std::vector<int> collapse(const std::vector<int>& alignment, int blank) {
  std::vector<int> out;
  int prev = blank;
  for (int a : alignment) {
    if (a != blank && a != prev) out.push_back(a);
    prev = a;
  }
  return out;
}

CtcResult ctc_loss(const Matrix& q, const std::vector<int>& labels, int blank) {
  const int T = q.rows, V = q.cols;
  check_labels(labels, V, blank);
  CtcResult res;
  res.grad = Matrix(T, V, 0.0);
  if (T < min_frames(labels) || T == 0) {
    res.loss = labels.empty() && T == 0 ? 0.0 : kPosInf;
    res.feasible = labels.empty() && T == 0;
    return res;
  }

  const int U = static_cast<int>(labels.size());
  const int S = 2 * U + 1;
  std::vector<int> ext(S, blank);
  for (int i = 0; i < U; ++i) ext[2 * i + 1] = labels[i];

  Matrix lq(T, V);
  for (size_t i = 0; i < q.size(); ++i) {
    // Exactly-zero probabilities (masking, underflow) mean -inf log mass, but
    // NaN must stay NaN: a numeric failure may not masquerade as infeasibility.
    const double p = q.data[i];
    lq.data[i] = p > 0.0 ? std::log(p) : (p == 0.0 ? kNegInf : std::numeric_limits<double>::quiet_NaN());
  }

  // Both alpha and beta include the emission term at their own frame.
  Matrix alpha(T, S, kNegInf), beta(T, S, kNegInf);
  alpha.at(0, 0) = lq.at(0, ext[0]);
  if (S > 1) alpha.at(0, 1) = lq.at(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double m = alpha.at(t - 1, s);
      if (s >= 1) m = log_add(m, alpha.at(t - 1, s - 1));
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]) m = log_add(m, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = m + lq.at(t, ext[s]);
    }
  }
  double log_p = alpha.at(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, alpha.at(T - 1, S - 2));
  if (log_p == kNegInf) {
    res.loss = kPosInf;
    res.feasible = false;
    return res;
  }

  beta.at(T - 1, S - 1) = lq.at(T - 1, ext[S - 1]);
  if (S > 1) beta.at(T - 1, S - 2) = lq.at(T - 1, ext[S - 2]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double m = beta.at(t + 1, s);
      if (s + 1 < S) m = log_add(m, beta.at(t + 1, s + 1));
      if (s + 2 < S && ext[s + 2] != blank && ext[s + 2] != ext[s]) m = log_add(m, beta.at(t + 1, s + 2));
      beta.at(t, s) = m + lq.at(t, ext[s]);
    }
  }

  // State posteriors gamma[t,s] = alpha*beta/(q-emission); fold into labels,
  // then grad = q - gamma_hat for pre-softmax logits.
  for (int t = 0; t < T; ++t) {
    std::vector<double> acc(V, kNegInf);
    for (int s = 0; s < S; ++s) {
      const double a = alpha.at(t, s), b = beta.at(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      const int k = ext[s];
      acc[k] = log_add(acc[k], a + b - lq.at(t, k));
    }
    for (int k = 0; k < V; ++k) {
      const double gamma = acc[k] == kNegInf ? 0.0 : std::exp(acc[k] - log_p);
      res.grad.at(t, k) = q.at(t, k) - gamma;
    }
  }
  res.loss = -log_p;
  return res;
}

double ctc_brute_force_prob(const Matrix& q, const std::vector<int>& labels, int blank) {
  const int T = q.rows, V = q.cols;
  check_labels(labels, V, blank);
  double count = 1.0;
  for (int t = 0; t < T; ++t) {
    count *= V;
    if (count > 1e6) throw DataError("ctc_brute_force_prob: instance too large");
  }
  if (T == 0) return labels.empty() ? 1.0 : 0.0;

  std::vector<int> align(T, 0);
  double total = 0.0;
  while (true) {
    if (collapse(align, blank) == labels) {
      double p = 1.0;
      for (int t = 0; t < T; ++t) p *= q.at(t, align[t]);
      total += p;
    }
    int pos = T - 1;
    while (pos >= 0 && align[pos] == V - 1) align[pos--] = 0;
    if (pos < 0) break;
    ++align[pos];
  }
  return total;
}

Tensor ctc_loss_node(const Tensor& logits, const std::vector<int>& labels, int blank) {
  Tape& t = *logits.tape();
  if (logits.rank() != 2) throw ShapeError("ctc_loss_node: logits must be T x V");
  const int T = logits.rows(), V = logits.cols();

  Matrix q(T, V);
  const auto& lv = logits.values();
  for (int r = 0; r < T; ++r) {
    double mx = kNegInf;
    for (int c = 0; c < V; ++c) mx = std::max(mx, lv[static_cast<size_t>(r) * V + c]);
    double sum = 0.0;
    for (int c = 0; c < V; ++c) {
      const double e = std::exp(lv[static_cast<size_t>(r) * V + c] - mx);
      q.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < V; ++c) q.at(r, c) /= sum;
  }

  CtcResult res = ctc_loss(q, labels, blank);
  if (!res.feasible) return t.constant({1}, {kPosInf});

  const int lid = logits.id();
  auto grad = std::make_shared<Matrix>(std::move(res.grad));
  return t.make({1}, {res.loss}, {lid}, [lid, grad](Tape& t, int self) {
    const double g = t.grad(self)[0];
    if (double* gl = t.grad_accum(lid)) {
      for (size_t i = 0; i < grad->size(); ++i) gl[i] += g * grad->data[i];
    }
  });
}

std::vector<int> greedy_decode(const Matrix& q, int blank) {
  std::vector<int> align(q.rows);
  for (int t = 0; t < q.rows; ++t) {
    int best = 0;
    for (int v = 1; v < q.cols; ++v) {
      if (q.at(t, v) > q.at(t, best)) best = v;
    }
    align[t] = best;
  }
  return collapse(align, blank);
}

namespace {

struct BeamEntry {
  double pb = kNegInf;   // log mass of paths ending in blank
  double pnb = kNegInf;  // log mass of paths ending in the last label
  double lm = 0.0;       // sum of LM log probs over the prefix (unweighted)
};

double fused_score(const BeamEntry& e, int len, double lm_weight, double length_bonus) {
  double s = log_add(e.pb, e.pnb);
  if (lm_weight != 0.0) s += lm_weight * e.lm;
  return s + length_bonus * len;
}

}  // namespace

BeamResult prefix_beam_search_scored(const Matrix& q, int beam, const LmScorer* lm,
                                     double lm_weight, double length_bonus, int blank) {
  if (beam < 1) throw ConfigError("prefix_beam_search: beam must be >= 1");
  const int T = q.rows, V = q.cols;
  const bool use_lm = lm != nullptr && lm_weight != 0.0;

  // std::map keeps prefixes in lexicographic order, which the tie-break uses.
  using Beam = std::map<std::vector<int>, BeamEntry>;
  Beam cur;
  cur[{}].pb = 0.0;

  for (int t = 0; t < T; ++t) {
    Beam next;
    for (const auto& [prefix, e] : cur) {
      const double p_total = log_add(e.pb, e.pnb);
      for (int v = 0; v < V; ++v) {
        const double lp = q.at(t, v) > 0.0 ? std::log(q.at(t, v)) : kNegInf;
        if (lp == kNegInf) continue;
        if (v == blank) {
          BeamEntry& ne = next[prefix];
          ne.pb = log_add(ne.pb, p_total + lp);
          ne.lm = e.lm;
          continue;
        }
        if (!prefix.empty() && v == prefix.back()) {
          // Same label again: without a blank it merges into the same prefix;
          // after a blank it starts a new occurrence.
          BeamEntry& stay = next[prefix];
          stay.pnb = log_add(stay.pnb, e.pnb + lp);
          stay.lm = e.lm;
          if (e.pb != kNegInf) {
            double lm_step = 0.0;
            if (use_lm) {
              lm_step = lm->log_prob(prefix, v);
              if (lm_step == kNegInf) continue;
            }
            std::vector<int> ext(prefix);
            ext.push_back(v);
            BeamEntry& ne = next[ext];
            ne.pnb = log_add(ne.pnb, e.pb + lp);
            ne.lm = e.lm + lm_step;
          }
          continue;
        }
        if (p_total == kNegInf) continue;
        double lm_step = 0.0;
        if (use_lm) {
          lm_step = lm->log_prob(prefix, v);
          if (lm_step == kNegInf) continue;
        }
        std::vector<int> ext(prefix);
        ext.push_back(v);
        BeamEntry& ne = next[ext];
        ne.pnb = log_add(ne.pnb, p_total + lp);
        ne.lm = e.lm + lm_step;
      }
    }

    // Keep the top `beam` prefixes by fused score; equal scores keep map
    // (lexicographic) order, so pruning is deterministic.
    std::vector<Beam::iterator> order;
    order.reserve(next.size());
    for (auto it = next.begin(); it != next.end(); ++it) order.push_back(it);
    std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      return fused_score(a->second, static_cast<int>(a->first.size()), lm_weight, length_bonus) >
             fused_score(b->second, static_cast<int>(b->first.size()), lm_weight, length_bonus);
    });
    Beam pruned;
    for (size_t i = 0; i < order.size() && i < static_cast<size_t>(beam); ++i) {
      pruned.insert(*order[i]);
    }
    cur = std::move(pruned);
  }

  BeamResult best;
  double best_score = kNegInf;
  bool first = true;
  for (const auto& [prefix, e] : cur) {
    const double s = fused_score(e, static_cast<int>(prefix.size()), lm_weight, length_bonus);
    if (first || s > best_score) {
      best.tokens = prefix;
      best_score = s;
      first = false;
    }
  }
  best.score = best_score;
  return best;
}

EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const int R = static_cast<int>(ref.size()), H = static_cast<int>(hyp.size());
  // Per cell: minimum cost, and among those the maximum match count. The pair
  // (cost, matches) determines the S/I/D split uniquely.
  struct Cell {
    int cost;
    int matches;
  };
  std::vector<Cell> prev(H + 1), row(H + 1);
  for (int j = 0; j <= H; ++j) prev[j] = {j, 0};
  for (int i = 1; i <= R; ++i) {
    row[0] = {i, 0};
    for (int j = 1; j <= H; ++j) {
      const bool eq = ref[i - 1] == hyp[j - 1];
      Cell best{prev[j - 1].cost + (eq ? 0 : 1), prev[j - 1].matches + (eq ? 1 : 0)};
      const Cell del{prev[j].cost + 1, prev[j].matches};
      const Cell ins{row[j - 1].cost + 1, row[j - 1].matches};
      for (const Cell& c : {del, ins}) {
        if (c.cost < best.cost || (c.cost == best.cost && c.matches > best.matches)) best = c;
      }
      row[j] = best;
    }
    std::swap(prev, row);
  }
  const int cost = prev[H].cost, m = prev[H].matches;
  EditCounts e;
  e.insertions = cost - (R - m);
  e.deletions = cost - (H - m);
  e.substitutions = cost - e.insertions - e.deletions;
  return e;
}

}  // namespace gic
