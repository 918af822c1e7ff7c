#include "bb/autograd.hpp"

#include <cmath>
#include <numeric>

#include "bb/error.hpp"
#include "bb/kernels.hpp"

namespace bb::ag {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != numel(shape)) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

// --- Var ---------------------------------------------------------------------

template <typename T>
const Shape& Var<T>::shape() const {
  return tape_->shape(id_);
}

template <typename T>
std::span<const T> Var<T>::values() const {
  return tape_->values(id_);
}

template <typename T>
std::span<const T> Var<T>::grad() const {
  const auto* g = tape_->grad_if_any(id_);
  if (!g) return {};
  return *g;
}

template <typename T>
T Var<T>::item() const {
  const auto v = values();
  if (v.size() != 1) throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  return v[0];
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// --- Tape --------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::emplace(Tensor<T> value, bool requires_grad) {
  owned_.push_back(std::move(value));
  Tensor<T>& t = owned_.back();
  t.grad.clear();
  nodes_.push_back({&t.shape, &t.values, requires_grad ? &t.grad : nullptr});
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return emplace(std::move(value), false);
}

template <typename T>
Var<T> Tape<T>::input(const Tensor<T>& value) {
  nodes_.push_back({&value.shape, &value.values, nullptr});
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T>& value) {
  if (value.grad.size() != value.values.size()) value.zero_grad();
  nodes_.push_back({&value.shape, &value.values, &value.grad});
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
std::vector<T>& Tape<T>::grad(int id) {
  std::vector<T>* g = nodes_[id].grad;
  if (g->size() != nodes_[id].values->size()) g->assign(nodes_[id].values->size(), T{0});
  return *g;
}

template <typename T>
const std::vector<T>* Tape<T>::grad_if_any(int id) const {
  const std::vector<T>* g = nodes_[id].grad;
  if (!g || g->empty()) return nullptr;
  return g;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (numel(shape(loss.id())) != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(shape(loss.id())));
  }
  if (!requires_grad(loss.id())) return;
  for (auto& t : owned_) t.grad.clear();
  grad(loss.id())[0] += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// --- ops ---------------------------------------------------------------------

namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(op) + ": invalid Var");
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": Vars on different tapes");
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T, typename F>
Var<T> unary(Var<T> a, F f) {
  Tape<T>& tape = *a.tape();
  const auto& av = a.values();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(av[i]);
  return tape.emplace(std::move(out), a.requires_grad());
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  const auto bv = b.values();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = av[i] + bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, a = a.id(), b = b.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      for (int id : {a, b}) {
        if (!tape.requires_grad(id)) continue;
        auto& g = tape.grad(id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  const auto bv = b.values();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = av[i] - bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, a = a.id(), b = b.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      if (tape.requires_grad(a)) {
        auto& g = tape.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
      }
      if (tape.requires_grad(b)) {
        auto& g = tape.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= (*gy)[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "hadamard");
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  const auto bv = b.values();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = av[i] * bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, a = a.id(), b = b.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      const auto& av = tape.values(a);
      const auto& bv = tape.values(b);
      if (tape.requires_grad(a)) {
        auto& g = tape.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * bv[i];
      }
      if (tape.requires_grad(b)) {
        auto& g = tape.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * av[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Var<T> y = unary(a, [](T x) { return T{1} / (T{1} + std::exp(-x)); });
  if (y.requires_grad()) {
    Tape<T>& tape = *a.tape();
    tape.record([&tape, a = a.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      const auto& yv = tape.values(y);
      auto& g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * yv[i] * (T{1} - yv[i]);
    });
  }
  return y;
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Var<T> y = unary(a, [](T x) { return std::tanh(x); });
  if (y.requires_grad()) {
    Tape<T>& tape = *a.tape();
    tape.record([&tape, a = a.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      const auto& yv = tape.values(y);
      auto& g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * (T{1} - yv[i] * yv[i]);
    });
  }
  return y;
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Var<T> y = unary(a, [factor](T x) { return factor * x; });
  if (y.requires_grad()) {
    Tape<T>& tape = *a.tape();
    tape.record([&tape, a = a.id(), y = y.id(), factor] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      auto& g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * (*gy)[i];
    });
  }
  return y;
}

template <typename T>
Var<T> affine(Var<T> a, T factor, T offset) {
  Var<T> y = unary(a, [factor, offset](T x) { return factor * x + offset; });
  if (y.requires_grad()) {
    Tape<T>& tape = *a.tape();
    tape.record([&tape, a = a.id(), y = y.id(), factor] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      auto& g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * (*gy)[i];
    });
  }
  return y;
}

template <typename T>
Var<T> matvec(Var<T> w, Var<T> x) {
  require_same_tape(w, x, "matvec");
  const Shape& ws = w.shape();
  const Shape& xs = x.shape();
  if (ws.size() != 2 || xs.size() != 1 || ws[1] != xs[0]) {
    throw ShapeError("matvec: shape mismatch W" + to_string(ws) + " x" + to_string(xs));
  }
  const int rows = ws[0], cols = ws[1];
  Tape<T>& tape = *w.tape();
  Tensor<T> out(Shape{rows});
  kernels::matvec<T>(rows, cols, w.values(), x.values(), out.values);
  const bool rg = w.requires_grad() || x.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, w = w.id(), x = x.id(), y = y.id(), rows, cols] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      if (tape.requires_grad(w)) {
        kernels::outer_acc<T>(rows, cols, *gy, tape.values(x), tape.grad(w));
      }
      if (tape.requires_grad(x)) {
        kernels::matvec_transposed_acc<T>(rows, cols, tape.values(w), *gy, tape.grad(x));
      }
    });
  }
  return y;
}

template <typename T>
Var<T> conv2d(Var<T> kernel, Var<T> x) {
  require_same_tape(kernel, x, "conv2d");
  const Shape& ks = kernel.shape();
  const Shape& xs = x.shape();
  if (ks.size() != 4 || xs.size() != 3 || ks[1] != xs[0]) {
    throw ShapeError("conv2d: shape mismatch K" + to_string(ks) + " X" + to_string(xs));
  }
  kernels::ConvShape s{xs[0], ks[0], xs[1], xs[2], ks[2], ks[3]};
  s.validate();
  Tape<T>& tape = *x.tape();
  Tensor<T> out(Shape{s.c_out, s.height, s.width});
  kernels::conv2d_forward<T>(s, x.values(), kernel.values(), out.values);
  const bool rg = kernel.requires_grad() || x.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, k = kernel.id(), x = x.id(), y = y.id(), s] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      if (tape.requires_grad(k)) {
        kernels::conv2d_backward_kernel<T>(s, *gy, tape.values(x), tape.grad(k));
      }
      if (tape.requires_grad(x)) {
        kernels::conv2d_backward_input<T>(s, *gy, tape.values(k), tape.grad(x));
      }
    });
  }
  return y;
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias, "add_channel_bias");
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  if (xs.size() != 3 || bs.size() != 1 || bs[0] != xs[0]) {
    throw ShapeError("add_channel_bias: shape mismatch X" + to_string(xs) + " b" + to_string(bs));
  }
  const int channels = xs[0];
  const std::size_t plane = static_cast<std::size_t>(xs[1]) * xs[2];
  Tape<T>& tape = *x.tape();
  const auto xv = x.values();
  const auto bv = bias.values();
  Tensor<T> out(xs);
  for (int c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out.values[c * plane + i] = xv[c * plane + i] + bv[c];
  }
  const bool rg = x.requires_grad() || bias.requires_grad();
  Var<T> y = tape.emplace(std::move(out), rg);
  if (rg) {
    tape.record([&tape, x = x.id(), b = bias.id(), y = y.id(), channels, plane] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      if (tape.requires_grad(x)) {
        auto& g = tape.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
      }
      if (tape.requires_grad(b)) {
        auto& g = tape.grad(b);
        for (int c = 0; c < channels; ++c) {
          T s{0};
          for (std::size_t i = 0; i < plane; ++i) s += (*gy)[c * plane + i];
          g[c] += s;
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  Tensor<T> out(std::move(shape), std::vector<T>(av.begin(), av.end()));
  Var<T> y = tape.emplace(std::move(out), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([&tape, a = a.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      auto& g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
    });
  }
  return y;
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  T s{0};
  for (T v : av) s += v;
  Var<T> y = tape.emplace(Tensor<T>(Shape{1}, std::vector<T>{s}), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([&tape, a = a.id(), y = y.id()] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      auto& g = tape.grad(a);
      for (auto& v : g) v += (*gy)[0];
    });
  }
  return y;
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mse");
  Tape<T>& tape = *a.tape();
  const auto av = a.values();
  const auto bv = b.values();
  T s{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    s += d * d;
  }
  const T n = static_cast<T>(av.size());
  const bool rg = a.requires_grad() || b.requires_grad();
  Var<T> y = tape.emplace(Tensor<T>(Shape{1}, std::vector<T>{s / n}), rg);
  if (rg) {
    tape.record([&tape, a = a.id(), b = b.id(), y = y.id(), n] {
      const auto* gy = tape.grad_if_any(y);
      if (!gy) return;
      const T c = T{2} * (*gy)[0] / n;
      const auto& av = tape.values(a);
      const auto& bv = tape.values(b);
      if (tape.requires_grad(a)) {
        auto& g = tape.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (av[i] - bv[i]);
      }
      if (tape.requires_grad(b)) {
        auto& g = tape.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * (av[i] - bv[i]);
      }
    });
  }
  return y;
}

// --- ParamSet ----------------------------------------------------------------

template <typename T>
Tensor<T>& ParamSet<T>::add(std::string name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.emplace_back(std::move(shape));
  return tensors_.back();
}

template <typename T>
Tensor<T>& ParamSet<T>::at(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParamSet<T>::n_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template <typename T>
double ParamSet<T>::grad_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) {
    for (T g : t.grad) s += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(s);
}

template <typename T>
void ParamSet<T>::scale_grad(T factor) {
  for (auto& t : tensors_) {
    for (T& g : t.grad) g *= factor;
  }
}

#define BB_INSTANTIATE_AUTOGRAD(T)                         \
  template struct Tensor<T>;                               \
  template class Var<T>;                                   \
  template class Tape<T>;                                  \
  template class ParamSet<T>;                              \
  template Var<T> add(Var<T>, Var<T>);                     \
  template Var<T> sub(Var<T>, Var<T>);                     \
  template Var<T> hadamard(Var<T>, Var<T>);                \
  template Var<T> sigmoid(Var<T>);                         \
  template Var<T> tanh(Var<T>);                            \
  template Var<T> scale(Var<T>, T);                        \
  template Var<T> affine(Var<T>, T, T);                    \
  template Var<T> matvec(Var<T>, Var<T>);                  \
  template Var<T> conv2d(Var<T>, Var<T>);                  \
  template Var<T> add_channel_bias(Var<T>, Var<T>);        \
  template Var<T> reshape(Var<T>, Shape);                  \
  template Var<T> sum(Var<T>);                             \
  template Var<T> mean(Var<T>);                            \
  template Var<T> mse(Var<T>, Var<T>);

BB_INSTANTIATE_AUTOGRAD(float)
BB_INSTANTIATE_AUTOGRAD(double)

#undef BB_INSTANTIATE_AUTOGRAD

}  // namespace bb::ag
