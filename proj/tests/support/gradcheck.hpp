#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gic/tensor.hpp"

namespace gic::testsupport {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

// Central-difference check of d(loss)/d(p) for every element of every listed
// Parameter. build must record a fresh graph on the given tape and return the
// scalar loss; it reads the Parameters' current values each call, so the same
// callable serves both the analytic backward pass and the perturbed re-evals.
inline GradCheckResult grad_check(const std::function<Tensor(Tape&)>& build,
                                  const std::vector<Parameter*>& params, double step = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto eval = [&]() {
    Tape tape;
    return build(tape).value();
  };
  GradCheckResult res;
  for (Parameter* p : params) {
    for (int j = 0; j < p->size(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + step;
      const double fp = eval();
      p->value[j] = orig - step;
      const double fm = eval();
      p->value[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double rel = std::abs(p->grad[j] - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p->name + "[" + std::to_string(j) + "] analytic=" + std::to_string(p->grad[j]) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace gic::testsupport
