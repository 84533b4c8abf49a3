#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace buddynet {

// Row-major H x W x C real raster.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// Axis-aligned source region in continuous pixel coordinates.
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
};

// Samples `region` of `source` onto a side x side grid with bilinear
// interpolation at pixel centres (edge samples clamp to the border).
Image resize_bilinear(const Image& source, const Rect& region, std::size_t side);
Image resize_bilinear(const Image& source, std::size_t side);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats compute_channel_stats(std::span<const Image* const> images);
Image normalize(const Image& image, const ChannelStats& stats);

// Portable pixmap (P5 grey / P6 RGB, maxval up to 65535) and the raw "BIMG"
// format: magic, u32 version, u32 height, u32 width, u32 channels, then f64
// little-endian pixels.
Image read_raster(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image, unsigned maxval = 255);
void write_bimg(const std::filesystem::path& path, const Image& image);

}  // namespace buddynet
