#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace buddynet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

// Dense row-major real array. Copies are shallow handles onto the same
// storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Writable access. Only legal on tensors that are not inputs of a live
  // recorded graph (e.g. parameters between optimizer steps).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();

  Tensor clone() const;
  // Same values, cut from any graph: no gradient flows through the result.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Accumulates `values` into the gradient buffer of `node` (allocating zeros
// first when absent).
void accumulate_grad(detail::TensorNode& node, std::span<const double> values);
std::vector<double>& grad_buffer(detail::TensorNode& node);

// Append-only record of differentiable operations. Nodes only reference
// tensors created earlier, so append order is a topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    std::string op;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string op, std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse append order.
  // Intermediate gradients are recomputed on every call; leaf gradients
  // accumulate across calls until clear() or Tensor::clear_grad().
  void backward(const Tensor& loss);

  // Drops every node and resets the grads of all tensors it touched.
  void clear();

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Name and index of the first recorded operation whose output holds a
  // NaN or infinity.
  std::optional<std::string> first_non_finite() const;

  // Graph receiving operations on the current thread, or nullptr.
  static Graph* active();

 private:
  friend class GraphScope;
  friend class NoGradScope;
  std::vector<Node> nodes_;
};

// Makes `graph` the recording target for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// Suspends recording on the current thread.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

}  // namespace buddynet
