#include "buddynet/optimizer.hpp"

#include <cmath>

#include "buddynet/errors.hpp"

namespace buddynet {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("optimizer moments must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("optimizer epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be non-negative");
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const Tensor& p : params_) {
    first_.emplace_back(p.size(), 0.0);
    second_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double learning_rate) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  const double decay = 1.0 - learning_rate * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    std::span<double> w = params_[k].mutable_data();
    const bool has_grad = params_[k].has_grad();
    std::span<const double> g = params_[k].grad();
    auto& m = first_[k];
    auto& v = second_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] = w[i] * decay - learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.clear_grad();
}

}  // namespace buddynet
