#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "buddynet/image.hpp"
#include "buddynet/rng.hpp"

namespace buddynet {

struct Range {
  double min = 0.0;
  double max = 0.0;
  bool operator==(const Range&) const = default;
};

struct CropConfig {
  std::size_t n_global = 2;
  std::size_t n_local = 8;
  std::size_t global_side = 16;
  std::size_t local_side = 8;
  Range global_scale{0.5, 1.0};  // fraction of source area
  Range local_scale{0.05, 0.5};
  Range aspect{3.0 / 4.0, 4.0 / 3.0};

  void validate() const;
  // 224 / 96 pixel crops.
  static CropConfig full_scale();
  bool operator==(const CropConfig&) const = default;
};

struct Crop {
  Image image;
  Rect source;
};

struct CropSet {
  std::vector<Crop> globals;
  std::vector<Crop> locals;
  std::string source_id;
  std::uint64_t seed = 0;
};

// Draws a rectangle covering a uniform fraction of the image area in
// `scale`, with log-uniform aspect ratio in `aspect` and uniform placement.
Rect sample_crop_rect(std::size_t height, std::size_t width, const Range& scale, const Range& aspect, Rng& rng);

CropSet multi_crop(const Image& image, const CropConfig& config, std::uint64_t seed, std::string source_id = {});

}  // namespace buddynet
