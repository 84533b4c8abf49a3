#include "buddynet/tensor.hpp"

#include <cmath>
#include <sstream>

#include "buddynet/errors.hpp"

namespace buddynet {

namespace {
thread_local Graph* g_active_graph = nullptr;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : node_(std::make_shared<detail::TensorNode>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  node_->value.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<detail::TensorNode>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape()));
  }
  return node_->shape[axis];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::clear_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

std::vector<double>& grad_buffer(detail::TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void accumulate_grad(detail::TensorNode& node, std::span<const double> values) {
  auto& g = grad_buffer(node);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

void Graph::record(std::string op, std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                   std::shared_ptr<detail::TensorNode> output, BackwardFn backward) {
  output->requires_grad = true;
  output->is_leaf = false;
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward() needs a single-element loss, got shape " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty()) throw std::logic_error("backward() on an empty graph");

  for (auto& node : nodes_) node.output->grad.assign(node.output->value.size(), 0.0);
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (in->requires_grad) grad_buffer(*in);
    }
  }
  grad_buffer(*loss.node())[0] += 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward(it->output->grad);
  }
}

void Graph::clear() {
  for (auto& node : nodes_) {
    node.output->grad.clear();
    for (auto& in : node.inputs) in->grad.clear();
  }
  nodes_.clear();
}

std::optional<std::string> Graph::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (double v : nodes_[i].output->value) {
      if (!std::isfinite(v)) {
        return nodes_[i].op + " (node " + std::to_string(i) + ", shape " +
               shape_to_string(nodes_[i].output->shape) + ")";
      }
    }
  }
  return std::nullopt;
}

Graph* Graph::active() { return g_active_graph; }

GraphScope::GraphScope(Graph& graph) : previous_(g_active_graph) { g_active_graph = &graph; }
GraphScope::~GraphScope() { g_active_graph = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_graph) { g_active_graph = nullptr; }
NoGradScope::~NoGradScope() { g_active_graph = previous_; }

}  // namespace buddynet
