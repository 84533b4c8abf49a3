#include "buddynet/losses.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "buddynet/errors.hpp"
#include "buddynet/ops.hpp"

namespace buddynet {

Tensor ArcFaceHead::scale() const { return softplus(scale_raw); }

Tensor ArcFaceHead::margin() const { return sigmoid(margin_raw) * margin_max; }

ArcFaceHead ArcFaceHead::initialize(std::size_t dim, std::size_t num_classes, Rng& rng, double init_scale,
                                    double init_margin, double margin_max) {
  if (num_classes < 1) throw ValidationError("arcface head needs at least one class");
  if (!(init_scale > 0.0)) throw ValidationError("arcface scale must be positive");
  if (!(margin_max > 0.0 && init_margin > 0.0 && init_margin < margin_max)) {
    throw ValidationError("arcface initial margin must lie in (0, margin_max)");
  }
  ArcFaceHead head;
  std::vector<double> w(dim * num_classes);
  for (double& v : w) v = rng.normal();
  head.weight = Tensor::parameter({dim, num_classes}, std::move(w));
  // inverse softplus / inverse scaled sigmoid
  const double raw_scale = init_scale > 30.0 ? init_scale : std::log(std::expm1(init_scale));
  const double frac = init_margin / margin_max;
  head.scale_raw = Tensor::parameter({}, {raw_scale});
  head.margin_raw = Tensor::parameter({}, {std::log(frac / (1.0 - frac))});
  head.margin_max = margin_max;
  return head;
}

Tensor kl_divergence(const Tensor& reference, const Tensor& other) {
  if (reference.shape() != other.shape()) {
    throw ShapeError("kl_divergence: shapes differ, " + shape_to_string(reference.shape()) + " vs " +
                     shape_to_string(other.shape()));
  }
  Tensor log_ratio = log(maximum(reference, kKlLogFloor)) - log(maximum(other, kKlLogFloor));
  return sum(reference * log_ratio);
}

Tensor kl_embedding_loss(std::span<const Tensor> assistant, std::span<const Tensor> master, double temperature,
                         KlDirection direction) {
  if (!(temperature > 0.0)) throw ValidationError("kl_embedding_loss: temperature must be positive");
  if (assistant.empty() || master.empty()) throw ValidationError("kl_embedding_loss: empty embedding list");
  const Shape& shape = master.front().shape();
  for (auto list : {assistant, master}) {
    for (const Tensor& e : list) {
      if (e.rank() != 1 || e.shape() != shape) {
        throw ShapeError("kl_embedding_loss: embedding length mismatch, " + shape_to_string(shape) + " vs " +
                         shape_to_string(e.shape()));
      }
    }
  }
  if (direction == KlDirection::kOff) return Tensor::scalar(0.0);

  const bool master_ref = direction == KlDirection::kMasterReference;
  Tensor ref = softmax(stack(master_ref ? master : assistant), 1, temperature);
  Tensor other = softmax(stack(master_ref ? assistant : master), 1, temperature);
  const double other_count = static_cast<double>(other.dim(0));

  // sum_{r,o} sum_d P_r[d] (log P_r[d] - log P_o[d])
  Tensor log_ref = log(maximum(ref, kKlLogFloor));
  Tensor log_other = log(maximum(other, kKlLogFloor));
  Tensor self_term = sum(ref * log_ref) * other_count;
  Tensor cross_term = sum(matmul(ref, transpose(log_other)));
  return self_term - cross_term;
}

Tensor cos_add_margin(const Tensor& cosine, const Tensor& margin) {
  Tensor sine = sqrt(maximum(1.0 - cosine * cosine, 1e-12));
  Tensor shifted = cosine * cos(margin) - sine * sin(margin);
  // theta + m past pi holds the logit at -1
  const double threshold = std::cos(std::numbers::pi - margin.item());
  std::vector<double> keep(cosine.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = cosine[i] >= threshold ? 1.0 : 0.0;
  const Tensor mask(cosine.shape(), std::move(keep));
  return shifted * mask + (mask - 1.0);
}

Tensor arcface_loss(std::span<const Tensor> embeddings, std::span<const std::size_t> labels, const Tensor& weight,
                    const Tensor& scale, const Tensor& margin) {
  if (embeddings.empty()) throw ValidationError("arcface_loss: no embeddings");
  if (labels.size() != embeddings.size()) {
    throw ValidationError("arcface_loss: " + std::to_string(embeddings.size()) + " embeddings but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (weight.rank() != 2 || weight.dim(0) != embeddings.front().size()) {
    throw ShapeError("arcface_loss: weight " + shape_to_string(weight.shape()) + " incompatible with embeddings " +
                     shape_to_string(embeddings.front().shape()));
  }
  const std::size_t crops = embeddings.size();
  const std::size_t classes = weight.dim(1);
  std::vector<double> onehot(crops * classes, 0.0);
  for (std::size_t i = 0; i < crops; ++i) {
    if (labels[i] >= classes) {
      throw ValidationError("arcface_loss: label " + std::to_string(labels[i]) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    onehot[i * classes + labels[i]] = 1.0;
  }
  Tensor mask({crops, classes}, std::move(onehot));

  Tensor e = l2_normalize(stack(embeddings), 1);
  Tensor w = l2_normalize(weight, 0);
  Tensor cosine = matmul(e, w);
  Tensor target_cos = sum(cosine * mask, 1);
  Tensor shift = reshape(cos_add_margin(target_cos, margin) - target_cos, {crops, 1});
  Tensor logits = scale * (cosine + mask * shift);
  return -sum(log_softmax(logits, 1) * mask) / static_cast<double>(crops);
}

Tensor arcface_loss(std::span<const Tensor> embeddings, std::span<const std::size_t> labels, const ArcFaceHead& head) {
  return arcface_loss(embeddings, labels, head.weight, head.scale(), head.margin());
}

LossBreakdown LossBreakdown::combine(Tensor kl, Tensor arc_master, Tensor arc_assistant) {
  LossBreakdown b;
  b.total = kl + arc_master + arc_assistant;
  b.kl = std::move(kl);
  b.arc_master = std::move(arc_master);
  b.arc_assistant = std::move(arc_assistant);
  return b;
}

LossValues LossValues::of(const LossBreakdown& b) {
  return LossValues{b.kl.item(), b.arc_master.item(), b.arc_assistant.item(), b.total.item()};
}

LossBreakdown total_loss(std::span<const LossBreakdown> per_image) {
  if (per_image.empty()) throw ValidationError("total_loss: empty batch");
  Tensor kl = per_image.front().kl;
  Tensor am = per_image.front().arc_master;
  Tensor aa = per_image.front().arc_assistant;
  for (std::size_t i = 1; i < per_image.size(); ++i) {
    kl = kl + per_image[i].kl;
    am = am + per_image[i].arc_master;
    aa = aa + per_image[i].arc_assistant;
  }
  return LossBreakdown::combine(kl, am, aa);
}

}  // namespace buddynet
