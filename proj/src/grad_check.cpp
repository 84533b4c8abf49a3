#include "buddynet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  Tensor y = f();
  if (y.size() != 1) throw ShapeError("grad_check: function is not scalar-valued, shape " + shape_to_string(y.shape()));
  return y.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw ValidationError("grad_check: step must lie in (0, 1e-3]");

  std::vector<bool> previous(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    previous[k] = inputs[k].requires_grad();
    inputs[k].set_requires_grad(true);
    inputs[k].clear_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Graph graph;
    {
      GraphScope scope(graph);
      Tensor y = f();
      if (y.size() != 1) throw ShapeError("grad_check: function is not scalar-valued, shape " + shape_to_string(y.shape()));
      if (!graph.empty()) graph.backward(y);
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (inputs[k].has_grad()) {
        analytic[k].assign(inputs[k].grad().begin(), inputs[k].grad().end());
      } else {
        analytic[k].assign(inputs[k].size(), 0.0);
      }
    }
    graph.clear();
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double up = evaluate(f);
      values[i] = original - h;
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
    }
    inputs[k].set_requires_grad(previous[k]);
    inputs[k].clear_grad();
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  Tensor inputs[] = {x};
  return grad_check([&] { return f(x); }, inputs, h);
}

}  // namespace buddynet
