#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Tape-based reverse-mode differentiation over dense row-major tensors.
//
// A Tape records every op executed through it. Parameters are bound by
// reference, so backward() accumulates straight into Tensor::grad of the
// caller's parameters; intermediate results are owned by the tape. Ops whose
// inputs need no gradient are not recorded, which makes inference through the
// same code cheap.

namespace bb::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), values(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> v);

  std::size_t size() const { return values.size(); }
  void zero_grad() { grad.assign(values.size(), T{0}); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Shape& shape() const;
  std::span<const T> values() const;
  /// Empty until backward() has reached this node.
  std::span<const T> grad() const;
  T item() const;
  bool requires_grad() const;
  std::size_t size() const { return values().size(); }

  Tape<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned value without gradient.
  Var<T> constant(Tensor<T> value);
  /// Borrowed value without gradient; `value` must outlive the tape.
  Var<T> input(const Tensor<T>& value);
  /// Borrowed trainable value; backward() accumulates into `value.grad`.
  Var<T> parameter(Tensor<T>& value);

  /// Fills gradients of every node reachable from the scalar `loss`.
  /// Intermediate gradients are reset first; parameter gradients accumulate.
  void backward(Var<T> loss);

  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_ops() const { return ops_.size(); }

  // Op-author interface.
  Var<T> emplace(Tensor<T> value, bool requires_grad);
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  const Shape& shape(int id) const { return *nodes_[id].shape; }
  const std::vector<T>& values(int id) const { return *nodes_[id].values; }
  bool requires_grad(int id) const { return nodes_[id].grad != nullptr; }
  /// Gradient buffer of a node, zero-filled on first access.
  std::vector<T>& grad(int id);
  /// Gradient of a node if anything has flowed into it, else nullptr.
  const std::vector<T>* grad_if_any(int id) const;

 private:
  struct Node {
    const Shape* shape;
    const std::vector<T>* values;
    std::vector<T>* grad;  // nullptr for constants
  };

  std::deque<Tensor<T>> owned_;
  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
};

// Elementwise ops. Shapes must match exactly.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> hadamard(Var<T> a, Var<T> b);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// factor * a + offset
template <typename T> Var<T> affine(Var<T> a, T factor, T offset);

/// W [m x n] times x [n] -> [m].
template <typename T> Var<T> matvec(Var<T> w, Var<T> x);
/// K [c_out x c_in x kh x kw] over X [c_in x H x W] -> [c_out x H x W], stride 1, same padding.
template <typename T> Var<T> conv2d(Var<T> kernel, Var<T> x);
/// X [c x H x W] plus per-channel b [c].
template <typename T> Var<T> add_channel_bias(Var<T> x, Var<T> bias);
/// Same values, new shape with equal element count.
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

// Reductions to a scalar of shape {1}.
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// mean((a - b)^2)
template <typename T> Var<T> mse(Var<T> a, Var<T> b);

/// Named parameter tensors in a fixed order. References stay valid as
/// tensors are added.
template <typename T>
class ParamSet {
 public:
  Tensor<T>& add(std::string name, Shape shape);
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  /// Total number of scalar parameters.
  std::size_t n_values() const;
  void zero_grad();
  double grad_norm() const;
  void scale_grad(T factor);

 private:
  std::vector<std::string> names_;
  std::deque<Tensor<T>> tensors_;
};

}  // namespace bb::ag
