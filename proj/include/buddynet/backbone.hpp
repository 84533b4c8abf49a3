#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "buddynet/arcface_head.hpp"
#include "buddynet/image.hpp"
#include "buddynet/rng.hpp"
#include "buddynet/tensor.hpp"

namespace buddynet {

// Lower bound applied to the GEM exponent in the forward pass.
inline constexpr double kGemMinExponent = 1e-3;

struct BackboneConfig {
  std::size_t image_side = 16;  // crop side the positional table is laid out for
  std::size_t patch_side = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  double mlp_ratio = 4.0;
  std::size_t out_dim = 64;

  void validate() const;
  std::size_t patch_dim() const { return patch_side * patch_side * channels; }
  std::size_t mlp_dim() const;
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t native_grid() const { return image_side / patch_side; }
  // 224-pixel crops, 16-pixel patches, ViT-small widths, 512-d embeddings.
  static BackboneConfig full_scale();
  bool operator==(const BackboneConfig&) const = default;
};

struct HeadInit {
  double scale = 30.0;
  double margin = 0.3;
  double margin_max = 0.5;
  double gem_p = 3.0;
  bool operator==(const HeadInit&) const = default;
};

struct TransformerLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_weight, qkv_bias;    // [E x 3E], [3E]
  Tensor proj_weight, proj_bias;  // [E x E], [E]
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_weight, fc1_bias;    // [E x H], [H]
  Tensor fc2_weight, fc2_bias;    // [H x E], [E]
};

// Every tensor of one backbone block: patch projection, positional table,
// transformer layers, GEM exponent and projection, FC layer and ArcFace head.
struct BlockParams {
  BackboneConfig config;
  Tensor patch_weight, patch_bias;  // [P x E], [E]
  Tensor position;                  // [T0 x E]
  std::vector<TransformerLayer> layers;
  Tensor gem_p;                     // scalar exponent
  Tensor gem_weight, gem_bias;      // [E x D], [D]
  Tensor fc_weight, fc_bias;        // [D x D], [D]
  ArcFaceHead arcface;

  static BlockParams initialize(const BackboneConfig& config, std::size_t num_classes, Rng& rng,
                                const HeadInit& init = {});
  // All tensors present with the right shapes, zero-filled.
  static BlockParams zeros(const BackboneConfig& config, std::size_t num_classes, double margin_max = 0.5);

  // Calls fn(name, tensor) for every tensor in a fixed order.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::vector<Tensor> tensors() const;

  BlockParams clone() const;
  // Same tensor names and shapes.
  bool congruent(const BlockParams& other) const;
  std::size_t num_classes() const { return arcface.num_classes(); }
};

// Flattens side x side crops into (side/patch)^2 patch tokens, projects them
// and adds the positional table, bilinearly resampled when the crop grid
// differs from its native layout.
Tensor patch_embed(const Image& crop, const BlockParams& params);

// Pre-norm transformer encoder. When `attention` is non-null it receives each
// head's [T x T] attention matrix, layer by layer.
Tensor vit_forward(const Tensor& tokens, const BlockParams& params, std::vector<Tensor>* attention = nullptr);

// Generalized mean over rows of strictly positive features: (mean_t x^p)^(1/p).
Tensor gem(const Tensor& positive_features, const Tensor& p);

// softplus -> GEM with clamped exponent -> linear projection to D.
Tensor gem_pool(const Tensor& features, const BlockParams& params);

Tensor embed(const Image& crop, const BlockParams& params);

// The block's FC layer, applied to an embedding before the ArcFace head.
Tensor classify(const Tensor& embedding, const BlockParams& params);

// x [K] or [M x K] times weight [K x N] plus bias [N].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Bilinear resampling matrix [to^2 x from^2] between square token grids.
Tensor grid_interpolation(std::size_t from_side, std::size_t to_side);

}  // namespace buddynet
