#pragma once

#include <functional>
#include <span>

#include "buddynet/tensor.hpp"

namespace buddynet {

// Compares reverse-mode gradients of a scalar function against central
// finite differences (f(x+h) - f(x-h)) / 2h. Returns the maximum over all
// coordinates of |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

// Same check over every coordinate of several tensors that `f` closes over.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h = 1e-5);

}  // namespace buddynet
