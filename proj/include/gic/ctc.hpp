#pragma once

#include <vector>

#include "gic/common.hpp"
#include "gic/tensor.hpp"

namespace gic {

constexpr int kBlank = 0;

// Standard CTC collapse: merge adjacent duplicates, then delete blanks.
std::vector<int> collapse(const std::vector<int>& alignment, int blank = kBlank);

struct CtcResult {
  double loss = 0.0;   // -log P; +inf when no feasible alignment exists
  Matrix grad;         // dloss/dlogits (pre-softmax producing q); zero when infeasible
  bool feasible = true;
};

// Forward-backward over the 2|y|+1 augmented lattice, all in log space.
// q rows are the softmax of the logits the gradient refers to.
CtcResult ctc_loss(const Matrix& q, const std::vector<int>& labels, int blank = kBlank);

// Exact sum over all |V|^T alignments whose collapse equals labels.
// The test oracle; refuses instances with more than 10^6 alignments.
double ctc_brute_force_prob(const Matrix& q, const std::vector<int>& labels, int blank = kBlank);

// Records ctc loss on the tape: softmax over logit rows, DP loss, and the
// posterior-based gradient injected into the logits on backward. Infeasible
// labels give a +inf constant; callers decide whether to skip.
Tensor ctc_loss_node(const Tensor& logits, const std::vector<int>& labels, int blank = kBlank);

// Per-frame argmax (ties to the lowest index), then collapse.
std::vector<int> greedy_decode(const Matrix& q, int blank = kBlank);

// Shallow-fusion scoring interface; NgramModel implements it.
struct LmScorer {
  virtual ~LmScorer() = default;
  // log p(token | context) in natural log; -inf forbids the token.
  virtual double log_prob(const std::vector<int>& context, int token) const = 0;
};

struct BeamResult {
  std::vector<int> tokens;
  double score = 0.0;  // fused score of the returned hypothesis
};

// CTC prefix beam search keeping (blank, nonblank) log masses per prefix.
// Fused score = log P_ctc(prefix) + lm_weight * sum log p_LM + length_bonus * len.
// With lm_weight == 0 the scorer is never consulted, so results are identical
// with and without an LM. Ties break toward the lexicographically smaller
// prefix. Emissions the LM forbids (-inf, lm_weight != 0) are dropped.
BeamResult prefix_beam_search_scored(const Matrix& q, int beam, const LmScorer* lm,
                                     double lm_weight, double length_bonus, int blank = kBlank);

inline std::vector<int> prefix_beam_search(const Matrix& q, int beam, const LmScorer* lm,
                                           double lm_weight, double length_bonus,
                                           int blank = kBlank) {
  return prefix_beam_search_scored(q, beam, lm, lm_weight, length_bonus, blank).tokens;
}

struct EditCounts {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int total() const { return substitutions + insertions + deletions; }
};

// Levenshtein with unit costs. Among minimum-cost alignments the one with the
// most matches is chosen, which pins down a unique (S, I, D) split.
EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);

// (S+I+D)/|ref|; an empty reference counts errors over a length of 1.
inline double error_rate(const EditCounts& e, int ref_len) {
  return static_cast<double>(e.total()) / static_cast<double>(ref_len > 0 ? ref_len : 1);
}

}  // namespace gic
