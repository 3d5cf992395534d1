#pragma once

// Dense row-major tensor with a dynamic reverse-mode tape.
//
// Every differentiable op produces a node that keeps shared ownership of its
// inputs and a closure that pushes the node's gradient into them. backward()
// topologically sorts the nodes reachable from a scalar loss, runs the
// closures in reverse order and then releases the graph. A released graph
// cannot be differentiated again; run the forward pass again instead.
//
// The scalar type is a template parameter: float for training, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "multimae/errors.hpp"

namespace multimae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool retain_grad = false;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward && !released; }

  /// Gradient accumulator, zero-initialised on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  static Tensor from_node(NodePtr node) { return Tensor(std::move(node)); }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  /// Extent of axis i; negative i counts from the back.
  std::size_t dim(int i) const {
    const int r = static_cast<int>(rank());
    const int k = i < 0 ? r + i : i;
    if (k < 0 || k >= r) throw DimensionError("axis " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(k)];
  }

  std::span<const T> data() const { return node_->value; }

  /// Mutable view of the values. Intended for leaves (optimizer updates,
  /// perturbation in gradient checks); mutating a recorded input invalidates
  /// its graph.
  std::span<T> mutable_data() { return node_->value; }

  T item() const {
    if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw StateError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Keep this non-leaf tensor's gradient after backward().
  void retain_grad() { node_->retain_grad = true; }

  /// Copy of the values as a new leaf without history.
  Tensor detach() const { return from_data(shape(), node_->value, false); }

  template <typename U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node_->value.begin(), node_->value.end());
    return Tensor<U>::from_data(shape(), std::move(out), requires_grad);
  }

  /// Populates gradients of every requires_grad leaf reachable from this
  /// scalar. Leaf gradients accumulate across calls; the recorded graph is
  /// released afterwards.
  void backward() const {
    if (numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (node_->released) {
      throw StateError("backward() already ran through this graph; record a new forward pass first");
    }
    if (!node_->requires_grad) {
      throw ContractError("backward() called on a tensor that does not require grad");
    }

    std::vector<detail::Node<T>*> order;
    {
      std::unordered_set<const detail::Node<T>*> seen;
      std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
      stack.emplace_back(node_.get(), 0);
      seen.insert(node_.get());
      while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
          detail::Node<T>* child = n->inputs[next++].get();
          if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
          order.push_back(n);
          stack.pop_back();
        }
      }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (detail::Node<T>* n : order) {
      if (!n->backward) continue;
      n->backward = nullptr;
      n->inputs.clear();
      n->released = true;
      if (!n->retain_grad) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

namespace detail {

template <typename T>
bool all_finite(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Wraps a forward result into a tensor, recording `backward` when any input
/// requires grad and recording is enabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
#ifndef NDEBUG
  if (!all_finite(node->value)) {
    bool inputs_finite = true;
    for (const auto& t : inputs) inputs_finite = inputs_finite && all_finite(t.node()->value);
    if (inputs_finite) throw NumericError("non-finite value produced from finite inputs");
  }
#endif
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  return make_result<T>(std::move(shape), std::move(value), std::vector<Tensor<T>>(inputs), std::move(backward));
}

}  // namespace detail

}  // namespace multimae
