#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bb/autograd.hpp"
#include "bb/rng.hpp"

namespace bb::testing {

// Builds a scalar loss on a fresh tape; must bind the checked tensors with
// tape.parameter().
using LossBuilder = std::function<ag::Var<double>(ag::Tape<double>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients against central finite differences for
// every element of `params`. Relative error uses max(|analytic|, |numeric|)
// with a floor of 1e-3 in the denominator.
inline GradCheck gradcheck(const std::vector<ag::Tensor<double>*>& params, const LossBuilder& build,
                           double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    ag::Tape<double> tape;
    tape.backward(build(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto evaluate = [&] {
    ag::Tape<double> tape;
    return build(tape).item();
  };
  GradCheck result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k]->values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = evaluate();
      values[i] = saved - h;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

inline ag::Tensor<double> random_tensor(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ag::Tensor<double> t(std::move(shape));
  for (auto& v : t.values) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace bb::testing
