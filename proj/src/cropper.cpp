#include "buddynet/cropper.hpp"

#include <algorithm>
#include <cmath>

#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

void check_range(const Range& r, const char* name) {
  if (!(r.min > 0.0 && r.min <= r.max && r.max <= 1.0)) {
    throw ValidationError(std::string("crop ") + name + " range must satisfy 0 < min <= max <= 1");
  }
}

}  // namespace

void CropConfig::validate() const {
  if (global_side == 0 || local_side == 0) throw ValidationError("crop sides must be positive");
  check_range(global_scale, "global scale");
  check_range(local_scale, "local scale");
  if (!(aspect.min > 0.0 && aspect.min <= aspect.max)) {
    throw ValidationError("crop aspect range must satisfy 0 < min <= max");
  }
}

CropConfig CropConfig::full_scale() {
  CropConfig c;
  c.global_side = 224;
  c.local_side = 96;
  return c;
}

Rect sample_crop_rect(std::size_t height, std::size_t width, const Range& scale, const Range& aspect, Rng& rng) {
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double area = H * W * rng.uniform(scale.min, scale.max);
  const double log_lo = std::log(aspect.min), log_hi = std::log(aspect.max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const double w = std::sqrt(area * ratio);
    const double h = std::sqrt(area / ratio);
    if (w <= W && h <= H) return Rect{rng.uniform() * (W - w), rng.uniform() * (H - h), w, h};
  }
  // Closest-to-square rectangle of the same area that fits.
  const double h = std::clamp(std::sqrt(area), area / W, H);
  const double w = std::min(area / h, W);
  return Rect{rng.uniform() * (W - w), rng.uniform() * (H - h), w, h};
}

CropSet multi_crop(const Image& image, const CropConfig& config, std::uint64_t seed, std::string source_id) {
  config.validate();
  if (image.height < config.local_side || image.width < config.local_side) {
    throw ValidationError("image " + source_id + " too small for cropping: " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " < local side " + std::to_string(config.local_side));
  }
  Rng rng(seed);
  CropSet set;
  set.source_id = std::move(source_id);
  set.seed = seed;
  for (std::size_t i = 0; i < config.n_global; ++i) {
    const Rect r = sample_crop_rect(image.height, image.width, config.global_scale, config.aspect, rng);
    set.globals.push_back(Crop{resize_bilinear(image, r, config.global_side), r});
  }
  for (std::size_t i = 0; i < config.n_local; ++i) {
    const Rect r = sample_crop_rect(image.height, image.width, config.local_scale, config.aspect, rng);
    set.locals.push_back(Crop{resize_bilinear(image, r, config.local_side), r});
  }
  return set;
}

}  // namespace buddynet
