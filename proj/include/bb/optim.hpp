#pragma once

#include <string>
#include <vector>

#include "bb/autograd.hpp"

namespace bb::optim {

enum class Kind { adam, sgd };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Holds per-parameter moment estimates. Bound to the layout of the ParamSet
/// it first steps; later calls must pass a set with the same shapes.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(Kind kind = Kind::adam, AdamConfig config = {})
      : kind_(kind), config_(config) {}

  /// Applies one update from the gradients currently stored in `params`.
  /// Throws DivergedError naming the (1-based) step index if any gradient is non-finite;
  /// parameters are left untouched in that case.
  void step(ag::ParamSet<T>& params, double lr);

  long steps_taken() const { return steps_; }
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  AdamConfig config_;
  long steps_ = 0;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ag::ParamSet<T>& params, double max_norm);

}  // namespace bb::optim
