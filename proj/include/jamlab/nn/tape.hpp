#pragma once

// Dense tensors and a reverse-mode tape.
//
// A Tape records one forward pass. Every operation appends a node holding its
// output and a closure that pushes the output gradient back to its inputs.
// Parameters live outside the tape; their nodes forward accumulated gradients
// into Parameter::grad when backward() finishes.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace jamlab::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  bool operator==(const Tensor&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T{0}); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // allocated on first use
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
  };

  /// With `grad_enabled` false every node is recorded as a constant, which
  /// skips closure creation during inference.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that receives no gradient.
  Var constant(Tensor<T> v) { return push(std::move(v), false); }
  /// A value whose gradient is kept (e.g. an input under a gradient check).
  Var leaf(Tensor<T> v) { return push(std::move(v), true); }

  Var param(Parameter<T>& p) {
    Var v = push(p.value, true);
    nodes_[static_cast<std::size_t>(v.id)]->param = &p;
    return v;
  }

  /// Appends an op output; `requires_grad` is true when any input needs one.
  Var push(Tensor<T> v, bool requires_grad, std::function<void()> backward = {}) {
    auto n = std::make_unique<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad && grad_enabled_;
    if (n->requires_grad) n->backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) { return *nodes_.at(static_cast<std::size_t>(v.id)); }
  const Tensor<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id))->value; }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id))->requires_grad; }

  /// Gradient buffer of v, zero-initialized on first access.
  std::vector<T>& grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_.at(static_cast<std::size_t>(v.id))->grad.empty(); }

  /// Seeds d(out)/d(out) = 1 (out must be a scalar) and runs all closures in
  /// reverse creation order.
  void backward(Var out) {
    if (value(out).size() != 1) throw ShapeError("backward() needs a scalar output");
    grad(out)[0] = T{1};
    for (int i = out.id; i >= 0; --i) {
      Node& n = *nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param) {
        auto& g = n.param->grad.data;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  bool grad_enabled_ = true;
  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace jamlab::nn
