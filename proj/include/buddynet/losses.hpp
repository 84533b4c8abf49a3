#pragma once

#include <cstddef>
#include <span>

#include "buddynet/arcface_head.hpp"
#include "buddynet/tensor.hpp"

namespace buddynet {

// Which block's distribution serves as the KL reference.
enum class KlDirection {
  kMasterReference,     // KL(P_master || P_assistant), the default
  kAssistantReference,  // reversed
  kOff,
};

inline constexpr double kKlLogFloor = 1e-12;

// KL(reference || other) for two distributions over the same support.
Tensor kl_divergence(const Tensor& reference, const Tensor& other);

// Sum over every (master crop, assistant crop) pair of the KL divergence
// between temperature-softmax distributions of the two embeddings. Gradients
// reach both embedding lists.
Tensor kl_embedding_loss(std::span<const Tensor> assistant, std::span<const Tensor> master, double temperature,
                         KlDirection direction = KlDirection::kMasterReference);

// Additive angular margin loss averaged over the crops: cosine logits of
// normalized embeddings against normalized class columns, target logit
// s * cos(theta_y + m), other logits s * cos(theta_j), cross-entropy.
Tensor arcface_loss(std::span<const Tensor> embeddings, std::span<const std::size_t> labels, const Tensor& weight,
                    const Tensor& scale, const Tensor& margin);
Tensor arcface_loss(std::span<const Tensor> embeddings, std::span<const std::size_t> labels, const ArcFaceHead& head);

// cos(min(theta + m, pi)) from cos(theta) as cos t cos m - sin t sin m, with
// sin t = sqrt(1 - cos^2 t) clamped at zero. `margin` is a scalar.
Tensor cos_add_margin(const Tensor& cosine, const Tensor& margin);

struct LossBreakdown {
  Tensor kl;
  Tensor arc_master;
  Tensor arc_assistant;
  Tensor total;

  static LossBreakdown combine(Tensor kl, Tensor arc_master, Tensor arc_assistant);
};

struct LossValues {
  double kl = 0.0;
  double arc_master = 0.0;
  double arc_assistant = 0.0;
  double total = 0.0;

  static LossValues of(const LossBreakdown& b);
};

// Sums each component over the batch (no averaging).
LossBreakdown total_loss(std::span<const LossBreakdown> per_image);

}  // namespace buddynet
