#pragma once

// Dense rank-4 tensor with a reverse-mode gradient tape.
//
// Every Tensor is a shared handle to a Node. Operations producing a Tensor
// from inputs that require gradients record a backward closure and keep their
// parents alive; backward() walks that graph once in reverse topological order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace podf {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (N, C, H, W) extents.
struct Shape {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w) : dims{n, c, h, w} {}

  constexpr std::size_t n() const { return dims[0]; }
  constexpr std::size_t c() const { return dims[1]; }
  constexpr std::size_t h() const { return dims[2]; }
  constexpr std::size_t w() const { return dims[3]; }
  constexpr std::size_t operator[](std::size_t i) const { return dims[i]; }
  constexpr std::size_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << dims[0] << ',' << dims[1] << ',' << dims[2] << ',' << dims[3] << ')';
    return os.str();
  }
};

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<detail::Node>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                       shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor ones(Shape s) { return Tensor(s, 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Mutable access for leaves only (optimizers, initializers, test harnesses).
  std::span<double> mutable_data() {
    if (!node_->parents.empty()) throw GraphError("mutable_data on a non-leaf tensor");
    return node_->data;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = shape();
    return node_->data[((n * s.c() + c) * s.h() + h) * s.w() + w];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    if (!node_->parents.empty()) throw GraphError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  const char* op_name() const { return node_->op; }

  /// Value copy detached from any graph.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  std::shared_ptr<detail::Node> node() const { return node_; }

  /// Builds an op output. `backward` receives the output node, whose grad is
  /// populated, and must accumulate into the parents' grad buffers.
  static Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
    for (double v : values) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
    Tensor out(shape, std::move(values));
    out.node_->op = op;
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (const auto& t : inputs) out.node_->parents.push_back(t.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Accumulates d(root)/d(leaf) into every requires_grad leaf reachable from
/// `root`. The graph is released afterwards; a second call is an error.
inline void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw GraphError("backward requires a scalar root, got shape " +
                     (root.defined() ? root.shape().str() : std::string("<undefined>")));
  }
  auto top = root.node();
  if (top->consumed) throw GraphError("graph already consumed by a previous backward");
  if (!top->requires_grad) throw GraphError("backward on a tensor that does not require grad");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{top.get(), 0}};
  seen.insert(top.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  top->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (node->parents.empty()) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
  top->consumed = true;
}

namespace detail {

inline void accumulate(Node& parent, std::span<const double> g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

}  // namespace podf
