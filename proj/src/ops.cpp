#include "buddynet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

Graph* recording_graph(std::initializer_list<const Tensor*> inputs) {
  Graph* graph = Graph::active();
  if (graph == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return graph;
  }
  return nullptr;
}

Graph* recording_graph(std::span<const Tensor> inputs) {
  Graph* graph = Graph::active();
  if (graph == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return graph;
  }
  return nullptr;
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Maps flat output indices onto the flat indices of one broadcast operand.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& operand, const Shape& out) {
    const std::size_t n_out = shape_size(out);
    const std::size_t n_in = shape_size(operand);
    if (operand == out) {
      kind_ = Kind::kSame;
    } else if (n_in == 1) {
      kind_ = Kind::kScalar;
    } else if (is_suffix(operand, out)) {
      kind_ = Kind::kSuffix;
      period_ = n_in;
    } else {
      kind_ = Kind::kGeneral;
      map_.resize(n_out);
      const std::size_t rank = out.size();
      const std::size_t offset = rank - operand.size();
      std::vector<std::size_t> stride(rank, 0);
      std::size_t s = 1;
      for (std::size_t k = operand.size(); k-- > 0;) {
        stride[k + offset] = operand[k] == 1 ? 0 : s;
        s *= operand[k];
      }
      std::vector<std::size_t> counter(rank, 0);
      std::size_t idx = 0;
      for (std::size_t i = 0; i < n_out; ++i) {
        map_[i] = idx;
        for (std::size_t k = rank; k-- > 0;) {
          ++counter[k];
          idx += stride[k];
          if (counter[k] < out[k]) break;
          idx -= stride[k] * counter[k];
          counter[k] = 0;
        }
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::kSame: return i;
      case Kind::kScalar: return 0;
      case Kind::kSuffix: return i % period_;
      case Kind::kGeneral: break;
    }
    return map_[i];
  }

 private:
  enum class Kind { kSame, kScalar, kSuffix, kGeneral };

  static bool is_suffix(const Shape& operand, const Shape& out) {
    if (operand.size() > out.size()) return false;
    const std::size_t offset = out.size() - operand.size();
    for (std::size_t k = 0; k < operand.size(); ++k) {
      if (operand[k] != out[k + offset]) return false;
    }
    return true;
  }

  Kind kind_ = Kind::kSame;
  std::size_t period_ = 1;
  std::vector<std::size_t> map_;
};

// f(x, y) -> z, dx(x, y, z) = dz/dx, dy(x, y, z) = dz/dy
template <class F, class DX, class DY>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DX dx, DY dy) {
  check_defined(a, name);
  check_defined(b, name);
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_size(out_shape);
  BroadcastIndex ia(a.shape(), out_shape);
  BroadcastIndex ib(b.shape(), out_shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ia(i)], bv[ib(i)]);
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* graph = recording_graph({&a, &b})) {
    NodePtr an = a.node(), bn = b.node();
    detail::TensorNode* on = result.node().get();
    graph->record(name, {an, bn}, result.node(),
                  [an, bn, on, ia = std::move(ia), ib = std::move(ib), dx, dy](std::span<const double> g) {
                    const auto& av = an->value;
                    const auto& bv = bn->value;
                    const auto& ov = on->value;
                    if (an->requires_grad) {
                      auto& ga = an->grad;
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        const std::size_t j = ia(i), k = ib(i);
                        ga[j] += g[i] * dx(av[j], bv[k], ov[i]);
                      }
                    }
                    if (bn->requires_grad) {
                      auto& gb = bn->grad;
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        const std::size_t j = ia(i), k = ib(i);
                        gb[k] += g[i] * dy(av[j], bv[k], ov[i]);
                      }
                    }
                  });
  }
  return result;
}

// f(x) -> y, df(x, y) = dy/dx
template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  check_defined(a, name);
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tensor result(a.shape(), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    detail::TensorNode* on = result.node().get();
    graph->record(name, {an}, result.node(), [an, on, df](std::span<const double> g) {
      auto& ga = an->grad;
      const auto& x = an->value;
      const auto& y = on->value;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return result;
}

// Splits a shape into (outer, length, inner) around `axis`.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.length = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k != axis) out.push_back(shape[k]);
  }
  return out;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_to_string(t.shape()));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_to_string(a) + " and " + shape_to_string(b));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero (divisor shape " + shape_to_string(b.shape()) + ")");
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor pow(const Tensor& a, const Tensor& b) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("pow: base must be strictly positive, got " + std::to_string(v));
  }
  return binary_op(
      "pow", a, b, [](double x, double y) { return std::pow(x, y); },
      [](double x, double y, double z) { return y * z / x; },
      [](double x, double, double z) { return z * std::log(x); });
}

Tensor pow(const Tensor& a, double exponent) {
  if (exponent != std::floor(exponent)) {
    for (double v : a.data()) {
      if (v < 0.0) throw DomainError("pow: negative base with non-integer exponent");
    }
  }
  return unary_op(
      "pow_scalar", a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("log: argument must be strictly positive, got " + std::to_string(v));
  }
  return unary_op("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument " + std::to_string(v));
  }
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor sin(const Tensor& a) {
  return unary_op("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary_op("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor maximum(const Tensor& a, double floor) {
  return unary_op(
      "maximum", a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a) { return neg(a); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  Tensor result(Shape{m, n}, std::move(out));
  if (Graph* graph = recording_graph({&a, &b})) {
    NodePtr an = a.node(), bn = b.node();
    graph->record("matmul", {an, bn}, result.node(), [an, bn, m, k, n](std::span<const double> g) {
      const double* A = an->value.data();
      const double* B = bn->value.data();
      if (an->requires_grad) {
        double* gA = an->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            gA[i * k + p] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        double* gB = bn->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double s = A[i * k + p];
            double* gbrow = gB + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto av = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tensor result(Shape{n, m}, std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    graph->record("transpose", {an}, result.node(), [an, m, n](std::span<const double> g) {
      auto& ga = an->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    graph->record("reshape", {an}, result.node(),
                  [an](std::span<const double> g) { accumulate_grad(*an, g); });
  }
  return result;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  check_defined(a, "slice");
  const AxisSplit s = split_axis(a.shape(), axis, "slice");
  if (begin >= end || end > s.length) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis of length " + std::to_string(s.length));
  }
  const std::size_t len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  auto av = a.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.begin() + (o * s.length + begin) * s.inner, len * s.inner,
                out.begin() + o * len * s.inner);
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    graph->record("slice", {an}, result.node(), [an, s, begin, len](std::span<const double> g) {
      auto& ga = an->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t dst = (o * s.length + begin) * s.inner;
        const std::size_t src = o * len * s.inner;
        for (std::size_t i = 0; i < len * s.inner; ++i) ga[dst + i] += g[src + i];
      }
    });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) check_defined(p, "concat");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_to_string(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t k = 0; ok && k < sh.size(); ++k) {
      if (k != axis && sh[k] != first[k]) ok = false;
    }
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_to_string(first) + " and " + shape_to_string(sh));
    total += sh[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const AxisSplit os = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    auto pv = p.data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(pv.begin() + o * len * os.inner, len * os.inner,
                  out.begin() + (o * total + offset) * os.inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* graph = recording_graph(parts)) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    graph->record("concat", nodes, result.node(), [nodes, offsets, os, total, axis](std::span<const double> g) {
      for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
        auto& node = *nodes[idx];
        if (!node.requires_grad) continue;
        const std::size_t len = node.shape[axis];
        auto& gp = node.grad;
        for (std::size_t o = 0; o < os.outer; ++o) {
          const std::size_t src = (o * total + offsets[idx]) * os.inner;
          const std::size_t dst = o * len * os.inner;
          for (std::size_t i = 0; i < len * os.inner; ++i) gp[dst + i] += g[src + i];
        }
      }
    });
  }
  return result;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& first = parts.front().shape();
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  Shape lifted_shape{1};
  lifted_shape.insert(lifted_shape.end(), first.begin(), first.end());
  for (const auto& p : parts) {
    check_defined(p, "stack");
    if (p.shape() != first) {
      throw ShapeError("stack: incompatible shapes " + shape_to_string(first) + " and " + shape_to_string(p.shape()));
    }
    lifted.push_back(reshape(p, lifted_shape));
  }
  return concat(lifted, 0);
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = Tensor::scalar(total);
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    graph->record("sum", {an}, result.node(), [an](std::span<const double> g) {
      for (double& v : an->grad) v += g[0];
    });
  }
  return result;
}

Tensor sum(const Tensor& a, std::size_t axis) {
  check_defined(a, "sum");
  const AxisSplit s = split_axis(a.shape(), axis, "sum");
  auto av = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.length + l) * s.inner + i];
  Tensor result(drop_axis(a.shape(), axis), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    graph->record("sum_axis", {an}, result.node(), [an, s](std::span<const double> g) {
      auto& ga = an->grad;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.length; ++l)
          for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.length + l) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "mean");
  return sum(a, axis) * (1.0 / static_cast<double>(s.length));
}

Tensor softmax(const Tensor& a, std::size_t axis, double temperature) {
  check_defined(a, "softmax");
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  const AxisSplit s = split_axis(a.shape(), axis, "softmax");
  auto av = a.data();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) mx = std::max(mx, av[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double e = std::exp((av[base + l * s.inner] - mx) / temperature);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= z;
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    detail::TensorNode* on = result.node().get();
    graph->record("softmax", {an}, result.node(), [an, on, s, temperature](std::span<const double> g) {
      const auto& y = on->value;
      auto& ga = an->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.length * s.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < s.length; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
          for (std::size_t l = 0; l < s.length; ++l) {
            const std::size_t idx = base + l * s.inner;
            ga[idx] += y[idx] * (g[idx] - dot) / temperature;
          }
        }
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& a, std::size_t axis, double temperature) {
  check_defined(a, "log_softmax");
  if (!(temperature > 0.0)) throw DomainError("log_softmax: temperature must be positive");
  const AxisSplit s = split_axis(a.shape(), axis, "log_softmax");
  auto av = a.data();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) mx = std::max(mx, av[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) z += std::exp((av[base + l * s.inner] - mx) / temperature);
      const double lse = std::log(z);
      for (std::size_t l = 0; l < s.length; ++l) {
        out[base + l * s.inner] = (av[base + l * s.inner] - mx) / temperature - lse;
      }
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    detail::TensorNode* on = result.node().get();
    graph->record("log_softmax", {an}, result.node(), [an, on, s, temperature](std::span<const double> g) {
      const auto& y = on->value;
      auto& ga = an->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.length * s.inner + i;
          double gsum = 0.0;
          for (std::size_t l = 0; l < s.length; ++l) gsum += g[base + l * s.inner];
          for (std::size_t l = 0; l < s.length; ++l) {
            const std::size_t idx = base + l * s.inner;
            ga[idx] += (g[idx] - std::exp(y[idx]) * gsum) / temperature;
          }
        }
      }
    });
  }
  return result;
}

Tensor l2_normalize(const Tensor& a, std::size_t axis, double epsilon) {
  check_defined(a, "l2_normalize");
  if (!(epsilon > 0.0)) throw DomainError("l2_normalize: epsilon must be positive");
  const AxisSplit s = split_axis(a.shape(), axis, "l2_normalize");
  auto av = a.data();
  std::vector<double> out(a.size(), 0.0);
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      double sq = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) sq += av[base + l * s.inner] * av[base + l * s.inner];
      const double norm = std::sqrt(sq);
      norms[o * s.inner + i] = norm;
      if (norm < epsilon) continue;
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] = av[base + l * s.inner] / norm;
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (Graph* graph = recording_graph({&a})) {
    NodePtr an = a.node();
    detail::TensorNode* on = result.node().get();
    graph->record("l2_normalize", {an}, result.node(),
                  [an, on, s, epsilon, norms = std::move(norms)](std::span<const double> g) {
                    const auto& y = on->value;
                    auto& ga = an->grad;
                    for (std::size_t o = 0; o < s.outer; ++o) {
                      for (std::size_t i = 0; i < s.inner; ++i) {
                        const double norm = norms[o * s.inner + i];
                        if (norm < epsilon) continue;
                        const std::size_t base = o * s.length * s.inner + i;
                        double dot = 0.0;
                        for (std::size_t l = 0; l < s.length; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
                        for (std::size_t l = 0; l < s.length; ++l) {
                          const std::size_t idx = base + l * s.inner;
                          ga[idx] += (g[idx] - y[idx] * dot) / norm;
                        }
                      }
                    }
                  });
  }
  return result;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double epsilon) {
  check_defined(a, "layer_norm");
  if (a.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t cols = a.shape().back();
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(cols) + "], got " +
                     shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
  const std::size_t rows = a.size() / cols;
  auto av = a.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(a.size());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (x[c] - mu) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (Graph* graph = recording_graph({&a, &gamma, &beta})) {
    NodePtr an = a.node(), gn = gamma.node(), bn = beta.node();
    graph->record("layer_norm", {an, gn, bn}, result.node(),
                  [an, gn, bn, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      std::span<const double> g) {
                    const auto& gam = gn->value;
                    if (gn->requires_grad) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) gn->grad[c] += g[r * cols + c] * xhat[r * cols + c];
                    }
                    if (bn->requires_grad) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += g[r * cols + c];
                    }
                    if (an->requires_grad) {
                      const double nc = static_cast<double>(cols);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double sum_d = 0.0, sum_dh = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = g[r * cols + c] * gam[c];
                          sum_d += d;
                          sum_dh += d * xhat[r * cols + c];
                        }
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = g[r * cols + c] * gam[c];
                          an->grad[r * cols + c] +=
                              inv_std[r] * (d - sum_d / nc - xhat[r * cols + c] * sum_dh / nc);
                        }
                      }
                    }
                  });
  }
  return result;
}

}  // namespace buddynet
