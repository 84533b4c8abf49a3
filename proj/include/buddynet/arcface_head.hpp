#pragma once

#include <cstddef>

#include "buddynet/rng.hpp"
#include "buddynet/tensor.hpp"

namespace buddynet {

// Class-weight matrix and the learnable scale/margin of an additive angular
// margin head. s = softplus(scale_raw) stays positive and
// m = margin_max * sigmoid(margin_raw) stays inside (0, margin_max).
struct ArcFaceHead {
  Tensor weight;      // [D x n], one column per class
  Tensor scale_raw;   // scalar
  Tensor margin_raw;  // scalar
  double margin_max = 0.5;

  Tensor scale() const;
  Tensor margin() const;
  std::size_t num_classes() const { return weight.dim(1); }

  static ArcFaceHead initialize(std::size_t dim, std::size_t num_classes, Rng& rng, double init_scale = 30.0,
                                double init_margin = 0.3, double margin_max = 0.5);
};

}  // namespace buddynet
