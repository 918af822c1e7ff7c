#include "bb/optim.hpp"

#include <cmath>

#include "bb/error.hpp"

namespace bb::optim {

std::string to_string(Kind kind) {
  return kind == Kind::adam ? "adam" : "sgd";
}

Kind kind_from_string(const std::string& name) {
  if (name == "adam") return Kind::adam;
  if (name == "sgd") return Kind::sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

template <typename T>
void Optimizer<T>::step(ag::ParamSet<T>& params, double lr) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params.tensor(p);
    if (t.grad.size() != t.values.size()) t.zero_grad();
    for (T g : t.grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergedError("diverged: non-finite gradient in '" + params.name(p) +
                                "' at optimizer step " + std::to_string(steps_ + 1),
                            steps_ + 1);
      }
    }
  }

  ++steps_;
  if (kind_ == Kind::sgd) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& t = params.tensor(p);
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        t.values[i] -= static_cast<T>(lr * static_cast<double>(t.grad[i]));
      }
    }
    return;
  }

  if (first_.empty()) {
    first_.resize(params.size());
    second_.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      first_[p].assign(params.tensor(p).size(), T{0});
      second_[p].assign(params.tensor(p).size(), T{0});
    }
  }
  if (first_.size() != params.size()) throw ShapeError("optimizer bound to a different ParamSet");

  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params.tensor(p);
    auto& m = first_[p];
    auto& v = second_[p];
    if (m.size() != t.size()) throw ShapeError("optimizer bound to a different ParamSet");
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double g = t.grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      t.values[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

template <typename T>
double clip_grad_norm(ag::ParamSet<T>& params, double max_norm) {
  const double norm = params.grad_norm();
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    params.scale_grad(static_cast<T>(max_norm / norm));
  }
  return norm;
}

template class Optimizer<float>;
template class Optimizer<double>;
template double clip_grad_norm(ag::ParamSet<float>&, double);
template double clip_grad_norm(ag::ParamSet<double>&, double);

}  // namespace bb::optim
