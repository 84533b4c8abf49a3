#include "buddynet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "buddynet/binary_io.hpp"
#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

constexpr std::uint32_t kBimgVersion = 1;

Image parse_pnm(std::span<const std::uint8_t> bytes, const std::string& name) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(name + ": malformed PNM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  const std::size_t width = read_number();
  const std::size_t height = read_number();
  const std::size_t maxval = read_number();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw FormatError(name + ": invalid PNM header");
  ++pos;  // single whitespace before the payload
  const std::size_t sample = maxval > 255 ? 2 : 1;
  const std::size_t expected = width * height * channels * sample;
  if (bytes.size() < pos || bytes.size() - pos < expected) {
    throw FormatError(name + ": truncated payload, expected " + std::to_string(expected) + " bytes but found " +
                      std::to_string(bytes.size() < pos ? 0 : bytes.size() - pos));
  }
  Image img(height, width, channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::size_t v = bytes[pos + i * sample];
    if (sample == 2) v = (v << 8) | bytes[pos + i * sample + 1];
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

Image parse_bimg(std::span<const std::uint8_t> bytes, const std::string& name) {
  BinaryReader in(bytes, name);
  in.expect_magic("BIMG");
  const std::uint32_t version = in.u32();
  if (version != kBimgVersion) throw FormatError(name + ": unsupported BIMG version " + std::to_string(version));
  const std::size_t h = in.u32(), w = in.u32(), c = in.u32();
  if (h == 0 || w == 0 || c == 0) throw FormatError(name + ": empty BIMG raster");
  Image img(h, w, c);
  in.require(img.pixels.size() * 8);
  for (double& v : img.pixels) v = in.f64();
  in.expect_end();
  return img;
}

}  // namespace

Image resize_bilinear(const Image& source, const Rect& region, std::size_t side) {
  Image out(side, side, source.channels);
  const double sy = region.height / static_cast<double>(side);
  const double sx = region.width / static_cast<double>(side);
  const double max_y = static_cast<double>(source.height - 1);
  const double max_x = static_cast<double>(source.width - 1);
  for (std::size_t i = 0; i < side; ++i) {
    const double y = std::clamp(region.y + (static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t y1 = std::min(y0 + 1, source.height - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < side; ++j) {
      const double x = std::clamp(region.x + (static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, max_x);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t x1 = std::min(x0 + 1, source.width - 1);
      const double fx = x - static_cast<double>(x0);
      for (std::size_t c = 0; c < source.channels; ++c) {
        const double top = source.at(y0, x0, c) * (1.0 - fx) + source.at(y0, x1, c) * fx;
        const double bottom = source.at(y1, x0, c) * (1.0 - fx) + source.at(y1, x1, c) * fx;
        out.at(i, j, c) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& source, std::size_t side) {
  return resize_bilinear(source, Rect{0.0, 0.0, static_cast<double>(source.width), static_cast<double>(source.height)},
                         side);
}

ChannelStats compute_channel_stats(std::span<const Image* const> images) {
  if (images.empty()) throw ValidationError("channel statistics need at least one image");
  const std::size_t channels = images.front()->channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  double count = 0.0;
  for (const Image* img : images) {
    if (img->channels != channels) throw ValidationError("images disagree on channel count");
    for (std::size_t p = 0; p < img->height * img->width; ++p) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = img->pixels[p * channels + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += static_cast<double>(img->height * img->width);
  }
  ChannelStats stats;
  for (std::size_t c = 0; c < channels; ++c) {
    const double mu = sum[c] / count;
    const double var = std::max(sq[c] / count - mu * mu, 0.0);
    stats.mean.push_back(mu);
    stats.stddev.push_back(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
  return stats;
}

Image normalize(const Image& image, const ChannelStats& stats) {
  if (stats.mean.size() != image.channels || stats.stddev.size() != image.channels) {
    throw ValidationError("channel statistics do not match image channels");
  }
  Image out = image;
  for (std::size_t p = 0; p < image.height * image.width; ++p) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      double& v = out.pixels[p * image.channels + c];
      v = (v - stats.mean[c]) / stats.stddev[c];
    }
  }
  return out;
}

Image read_raster(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string name = path.string();
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "BIMG")) return parse_bimg(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return parse_pnm(bytes, name);
  throw FormatError(name + ": unsupported raster format (expected P5, P6 or BIMG)");
}

void write_ppm(const std::filesystem::path& path, const Image& image, unsigned maxval) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("PNM output needs 1 or 3 channels");
  if (maxval == 0 || maxval > 65535) throw ValidationError("PNM maxval must lie in [1, 65535]");
  BinaryWriter out;
  out.raw(image.channels == 3 ? "P6\n" : "P5\n");
  out.raw(std::to_string(image.width) + " " + std::to_string(image.height) + "\n" + std::to_string(maxval) + "\n");
  for (double v : image.pixels) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval > 255) out.u8(static_cast<std::uint8_t>(q >> 8));
    out.u8(static_cast<std::uint8_t>(q & 0xff));
  }
  write_file(path, out.bytes());
}

void write_bimg(const std::filesystem::path& path, const Image& image) {
  BinaryWriter out;
  out.raw("BIMG");
  out.u32(kBimgVersion);
  out.u32(static_cast<std::uint32_t>(image.height));
  out.u32(static_cast<std::uint32_t>(image.width));
  out.u32(static_cast<std::uint32_t>(image.channels));
  for (double v : image.pixels) out.f64(v);
  write_file(path, out.bytes());
}

}  // namespace buddynet
