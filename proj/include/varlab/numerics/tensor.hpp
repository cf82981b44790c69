#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// Every op result keeps shared ownership of its inputs plus a closure that
// pushes the output gradient back into them. The graph is a DAG rooted at the
// loss; backward() walks it once in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "varlab/errors.hpp"

namespace varlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(std::span<const T>)> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicTensor() = default;

  static BasicTensor from_data(Shape shape, std::vector<T> values) {
    expects(shape_numel(shape) == values.size(),
            "tensor data size " + std::to_string(values.size()) + " does not match shape " +
                shape_str(shape));
    auto node = std::make_shared<NodeType>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return BasicTensor(std::move(node));
  }

  static BasicTensor zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, T(0)));
  }

  static BasicTensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, v));
  }

  static BasicTensor scalar(T v) { return from_data({}, {v}); }

  // Trainable leaf.
  static BasicTensor parameter(Shape shape, std::vector<T> values) {
    auto t = from_data(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(int i) const {
    const int r = static_cast<int>(rank());
    const int idx = i < 0 ? i + r : i;
    expects(idx >= 0 && idx < r, "dimension index out of range");
    return node_->shape[static_cast<std::size_t>(idx)];
  }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only initializers and the optimizer use this.
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T item() const {
    expects(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::string_view op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_buffer() const { return node_->grad_buffer(); }
  void zero_grad() const { node_->grad.clear(); }

  void set_requires_grad(bool on) {
    expects(node_->leaf, "requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
  }

  // Same values, no history.
  BasicTensor detach() const { return from_data(shape(), node_->value); }

  const NodeType* id() const noexcept { return node_.get(); }
  static BasicTensor wrap(std::shared_ptr<NodeType> node) { return BasicTensor(std::move(node)); }
  std::shared_ptr<NodeType> node() const { return node_; }

  // Builds an op result. History is only attached when recording is on and
  // at least one input needs a gradient.
  static BasicTensor make_result(Shape shape, std::vector<T> value, std::string_view op,
                                 std::vector<BasicTensor> inputs,
                                 std::function<void(std::span<const T>)> backward) {
    auto out = from_data(std::move(shape), std::move(value));
    out.node_->op = op;
    out.node_->leaf = false;
    if (!grad_enabled()) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const BasicTensor& t) { return t.requires_grad(); });
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    return out;
  }

 private:
  explicit BasicTensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;

// Reverse-mode pass from a scalar loss. Returns the trainable leaves that the
// loss depends on; their gradients are accumulated (not overwritten).
template <typename T>
std::vector<BasicTensor<T>> backward(const BasicTensor<T>& loss) {
  using Node = detail::Node<T>;
  expects(loss.defined() && loss.numel() == 1,
          "backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  std::vector<BasicTensor<T>> leaves;
  if (!loss.requires_grad()) return leaves;

  // Iterative post-order DFS gives a topological order.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.id());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  order.back()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (node.leaf || !node.backward || node.grad.empty()) continue;
    node.backward(node.grad);
    for (const auto& in : node.inputs) {
      if (!in->requires_grad) continue;
      for (T g : in->grad) {
        if (!std::isfinite(g)) {
          throw NumericFailure("non-finite gradient produced by backward of '" +
                               std::string(node.op) + "'");
        }
      }
    }
  }
  for (auto& node : order) {
    if (node->leaf) {
      leaves.push_back(BasicTensor<T>::wrap(node));
    } else {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  return leaves;
}

}  // namespace varlab
