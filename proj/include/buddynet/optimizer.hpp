#pragma once

#include <cstddef>
#include <vector>

#include "buddynet/tensor.hpp"

namespace buddynet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

// Adaptive moments with decoupled weight decay. Holds handles onto the
// parameters it updates; their storage is modified in place.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Applies one update using each parameter's current gradient. Parameters
  // without a gradient only receive the decay term.
  void step(double learning_rate);
  void zero_grad();

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  AdamWConfig config_;
  std::size_t steps_ = 0;
};

}  // namespace buddynet
