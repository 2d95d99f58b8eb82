#pragma once

#include <map>
#include <string>
#include <vector>

#include "gic/common.hpp"
#include "gic/ctc.hpp"

namespace gic {

// Sentinel ids usable in contexts/events; never part of the vocabulary.
constexpr int kLmStart = -1;
constexpr int kLmEnd = -2;

// Fixed-weight interpolated n-gram model over token ids. weights[k-1] is the
// share of order k; the order-1 term is a Laplace unigram (the uniform floor
// over V plus the end token), so every in-vocabulary conditional is finite. A
// context unseen at some order falls through to the next lower order, which
// keeps each conditional exactly normalized over V plus end.
class NgramModel : public LmScorer {
 public:
  int order = 0;
  std::vector<double> weights;  // simplex, weights[k-1] for order k
  std::vector<int> vocab;       // sorted unique token ids
  // counts[k-1]: context of k-1 ids (start pads allowed) -> event token -> count
  std::vector<std::map<std::vector<int>, std::map<int, int64_t>>> counts;
  std::vector<std::map<std::vector<int>, int64_t>> totals;

  // p(token | context); token may be kLmEnd. Contexts are trimmed to the most
  // recent order-1 ids and left-padded with the start symbol when shorter.
  double prob(const std::vector<int>& context, int token) const;
  double log_prob(const std::vector<int>& context, int token) const override;

  bool in_vocab(int token) const;

  std::vector<uint8_t> serialize() const;
  static NgramModel deserialize(const std::vector<uint8_t>& bytes);
  void save(const std::string& path) const;
  static NgramModel load(const std::string& path);
};

// Interpolation weights: the tuned defaults for order 4, otherwise uniform.
std::vector<double> default_lm_weights(int order);

// Counts n-grams of orders 1..order with order-1 start pads and one end event
// per sentence. vocab defaults to the distinct corpus tokens; pass a wider id
// set to guarantee coverage for fusion.
NgramModel lm_train(const std::vector<std::vector<int>>& corpus, int order,
                    const std::vector<double>& weights, std::vector<int> vocab = {});

double lm_log_prob(const NgramModel& model, int token, const std::vector<int>& context);

// exp of the mean negative log probability over all events (including end).
double lm_perplexity(const NgramModel& model, const std::vector<std::vector<int>>& corpus);

}  // namespace gic
