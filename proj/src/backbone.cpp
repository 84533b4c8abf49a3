#include "buddynet/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "buddynet/errors.hpp"
#include "buddynet/ops.hpp"

namespace buddynet {

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::parameter({rows, cols}, std::move(v));
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return random_matrix(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Tensor filled(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

// Interpolation weights of a 1-D grid resampled from `from` to `to` cells,
// sampling at cell centres.
std::vector<std::vector<double>> axis_weights(std::size_t from, std::size_t to) {
  std::vector<std::vector<double>> w(to, std::vector<double>(from, 0.0));
  const double scale = static_cast<double>(from) / static_cast<double>(to);
  for (std::size_t i = 0; i < to; ++i) {
    const double src = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(from - 1));
    const std::size_t lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, from - 1);
    const double f = src - static_cast<double>(lo);
    w[i][lo] += 1.0 - f;
    w[i][hi] += f;
  }
  return w;
}

}  // namespace

void BackboneConfig::validate() const {
  if (patch_side == 0 || image_side == 0 || image_side % patch_side != 0) {
    throw ValidationError("backbone: image side " + std::to_string(image_side) + " not divisible by patch side " +
                          std::to_string(patch_side));
  }
  if (channels == 0 || embed_dim == 0 || num_heads == 0 || out_dim == 0) {
    throw ValidationError("backbone: channels, embed dim, heads and output dim must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ValidationError("backbone: embed dim " + std::to_string(embed_dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
  }
  if (!(mlp_ratio > 0.0)) throw ValidationError("backbone: mlp ratio must be positive");
}

std::size_t BackboneConfig::mlp_dim() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) * mlp_ratio)));
}

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig c;
  c.image_side = 224;
  c.patch_side = 16;
  c.embed_dim = 384;
  c.num_layers = 12;
  c.num_heads = 6;
  c.mlp_ratio = 4.0;
  c.out_dim = 512;
  return c;
}

BlockParams BlockParams::initialize(const BackboneConfig& config, std::size_t num_classes, Rng& rng,
                                    const HeadInit& init) {
  config.validate();
  const std::size_t e = config.embed_dim, h = config.mlp_dim(), d = config.out_dim;
  const std::size_t t0 = config.native_grid() * config.native_grid();
  BlockParams p;
  p.config = config;
  p.patch_weight = xavier(config.patch_dim(), e, rng);
  p.patch_bias = filled({e}, 0.0);
  p.position = random_matrix(t0, e, 0.02, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    TransformerLayer layer;
    layer.ln1_gamma = filled({e}, 1.0);
    layer.ln1_beta = filled({e}, 0.0);
    layer.qkv_weight = xavier(e, 3 * e, rng);
    layer.qkv_bias = filled({3 * e}, 0.0);
    layer.proj_weight = xavier(e, e, rng);
    layer.proj_bias = filled({e}, 0.0);
    layer.ln2_gamma = filled({e}, 1.0);
    layer.ln2_beta = filled({e}, 0.0);
    layer.fc1_weight = xavier(e, h, rng);
    layer.fc1_bias = filled({h}, 0.0);
    layer.fc2_weight = xavier(h, e, rng);
    layer.fc2_bias = filled({e}, 0.0);
    p.layers.push_back(std::move(layer));
  }
  p.gem_p = Tensor::parameter({}, {init.gem_p});
  p.gem_weight = xavier(e, d, rng);
  p.gem_bias = filled({d}, 0.0);
  p.fc_weight = xavier(d, d, rng);
  p.fc_bias = filled({d}, 0.0);
  p.arcface = ArcFaceHead::initialize(d, num_classes, rng, init.scale, init.margin, init.margin_max);
  return p;
}

BlockParams BlockParams::zeros(const BackboneConfig& config, std::size_t num_classes, double margin_max) {
  Rng rng(0);
  HeadInit init;
  init.margin_max = margin_max;
  init.margin = margin_max / 2.0;
  BlockParams p = initialize(config, num_classes, rng, init);
  p.visit([](const std::string&, Tensor& t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0); });
  return p;
}

void BlockParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch.weight", patch_weight);
  fn("patch.bias", patch_bias);
  fn("position", position);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    TransformerLayer& L = layers[l];
    fn(pre + "ln1.gamma", L.ln1_gamma);
    fn(pre + "ln1.beta", L.ln1_beta);
    fn(pre + "attn.qkv.weight", L.qkv_weight);
    fn(pre + "attn.qkv.bias", L.qkv_bias);
    fn(pre + "attn.proj.weight", L.proj_weight);
    fn(pre + "attn.proj.bias", L.proj_bias);
    fn(pre + "ln2.gamma", L.ln2_gamma);
    fn(pre + "ln2.beta", L.ln2_beta);
    fn(pre + "mlp.fc1.weight", L.fc1_weight);
    fn(pre + "mlp.fc1.bias", L.fc1_bias);
    fn(pre + "mlp.fc2.weight", L.fc2_weight);
    fn(pre + "mlp.fc2.bias", L.fc2_bias);
  }
  fn("gem.p", gem_p);
  fn("gem.weight", gem_weight);
  fn("gem.bias", gem_bias);
  fn("fc.weight", fc_weight);
  fn("fc.bias", fc_bias);
  fn("arcface.weight", arcface.weight);
  fn("arcface.scale_raw", arcface.scale_raw);
  fn("arcface.margin_raw", arcface.margin_raw);
}

void BlockParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<BlockParams*>(this)->visit([&](const std::string& name, Tensor& t) { fn(name, t); });
}

std::vector<Tensor> BlockParams::tensors() const {
  std::vector<Tensor> out;
  visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

BlockParams BlockParams::clone() const {
  BlockParams copy = *this;
  copy.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

bool BlockParams::congruent(const BlockParams& other) const {
  std::vector<std::pair<std::string, Shape>> mine, theirs;
  visit([&](const std::string& n, const Tensor& t) { mine.emplace_back(n, t.shape()); });
  other.visit([&](const std::string& n, const Tensor& t) { theirs.emplace_back(n, t.shape()); });
  return mine == theirs;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    Tensor y = add(matmul(row, weight), bias);
    return reshape(y, {weight.dim(1)});
  }
  return add(matmul(x, weight), bias);
}

Tensor grid_interpolation(std::size_t from_side, std::size_t to_side) {
  const auto w = axis_weights(from_side, to_side);
  const std::size_t rows = to_side * to_side, cols = from_side * from_side;
  std::vector<double> m(rows * cols, 0.0);
  for (std::size_t i = 0; i < to_side; ++i)
    for (std::size_t j = 0; j < to_side; ++j)
      for (std::size_t a = 0; a < from_side; ++a)
        for (std::size_t b = 0; b < from_side; ++b)
          m[(i * to_side + j) * cols + a * from_side + b] = w[i][a] * w[j][b];
  return Tensor({rows, cols}, std::move(m));
}

Tensor patch_embed(const Image& crop, const BlockParams& params) {
  const BackboneConfig& cfg = params.config;
  if (crop.height != crop.width) {
    throw ShapeError("patch_embed: crop must be square, got " + std::to_string(crop.height) + "x" +
                     std::to_string(crop.width));
  }
  if (crop.height == 0 || crop.height % cfg.patch_side != 0) {
    throw ShapeError("patch_embed: crop side " + std::to_string(crop.height) + " not divisible by patch side " +
                     std::to_string(cfg.patch_side));
  }
  if (crop.channels != cfg.channels) {
    throw ShapeError("patch_embed: crop has " + std::to_string(crop.channels) + " channels, backbone expects " +
                     std::to_string(cfg.channels));
  }
  const std::size_t grid = crop.height / cfg.patch_side;
  const std::size_t tokens = grid * grid;
  const std::size_t pd = cfg.patch_dim();
  std::vector<double> patches(tokens * pd);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* dst = patches.data() + (gy * grid + gx) * pd;
      for (std::size_t py = 0; py < cfg.patch_side; ++py) {
        for (std::size_t px = 0; px < cfg.patch_side; ++px) {
          for (std::size_t c = 0; c < cfg.channels; ++c) {
            *dst++ = crop.at(gy * cfg.patch_side + py, gx * cfg.patch_side + px, c);
          }
        }
      }
    }
  }
  Tensor x({tokens, pd}, std::move(patches));
  Tensor projected = linear(x, params.patch_weight, params.patch_bias);
  if (grid == cfg.native_grid()) return add(projected, params.position);
  return add(projected, matmul(grid_interpolation(cfg.native_grid(), grid), params.position));
}

Tensor vit_forward(const Tensor& tokens, const BlockParams& params, std::vector<Tensor>* attention) {
  const BackboneConfig& cfg = params.config;
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.embed_dim) {
    throw ShapeError("vit_forward: expected tokens [T x " + std::to_string(cfg.embed_dim) + "], got " +
                     shape_to_string(tokens.shape()));
  }
  const std::size_t e = cfg.embed_dim;
  const std::size_t hd = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor x = tokens;
  for (const TransformerLayer& layer : params.layers) {
    Tensor h = layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    Tensor qkv = linear(h, layer.qkv_weight, layer.qkv_bias);
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t k = 0; k < cfg.num_heads; ++k) {
      Tensor q = slice(qkv, 1, k * hd, (k + 1) * hd);
      Tensor kk = slice(qkv, 1, e + k * hd, e + (k + 1) * hd);
      Tensor v = slice(qkv, 1, 2 * e + k * hd, 2 * e + (k + 1) * hd);
      Tensor weights = softmax(matmul(q, transpose(kk)) * inv_sqrt, 1);
      if (attention != nullptr) attention->push_back(weights);
      heads.push_back(matmul(weights, v));
    }
    Tensor merged = cfg.num_heads == 1 ? heads.front() : concat(heads, 1);
    x = add(x, linear(merged, layer.proj_weight, layer.proj_bias));
    Tensor h2 = layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    x = add(x, linear(gelu(linear(h2, layer.fc1_weight, layer.fc1_bias)), layer.fc2_weight, layer.fc2_bias));
  }
  return x;
}

Tensor gem(const Tensor& positive_features, const Tensor& p) {
  if (positive_features.rank() != 2) {
    throw ShapeError("gem: expected features [T x E], got " + shape_to_string(positive_features.shape()));
  }
  Tensor pooled = mean(pow(positive_features, p), 0);
  return pow(pooled, 1.0 / p);
}

Tensor gem_pool(const Tensor& features, const BlockParams& params) {
  Tensor p = maximum(params.gem_p, kGemMinExponent);
  return linear(gem(softplus(features), p), params.gem_weight, params.gem_bias);
}

Tensor embed(const Image& crop, const BlockParams& params) {
  return gem_pool(vit_forward(patch_embed(crop, params), params), params);
}

Tensor classify(const Tensor& embedding, const BlockParams& params) {
  return linear(embedding, params.fc_weight, params.fc_bias);
}

}  // namespace buddynet
