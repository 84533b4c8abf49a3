#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "buddynet/evaluation.hpp"
#include "buddynet/image.hpp"

namespace buddynet {

struct LabeledImage {
  std::string id;
  Image image;  // values in [0, 1]
  std::size_t label = 0;
};

// Oriented two-component sinusoid with per-class colour weights.
struct ClassTexture {
  double orientation = 0.0;  // radians
  double frequency = 0.0;    // cycles across the image side
  double cross_frequency = 0.0;
  std::vector<double> colour;
};

struct SyntheticSpec {
  std::size_t n_classes = 8;
  std::size_t images_per_class = 64;
  std::size_t image_side = 32;
  std::size_t channels = 3;
  double noise_sigma = 0.05;
  // Per class: the first train_per_class images train, the next
  // query_per_class are queries and the rest form the database. With no
  // queries every non-training image is both a query and a database entry.
  std::size_t train_per_class = 32;
  std::size_t query_per_class = 8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

struct Dataset {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> database;
  std::vector<LabeledImage> queries;
  GroundTruth ground_truth;  // positives: same-class database images
  std::size_t num_classes = 0;
};

std::vector<ClassTexture> class_textures(const SyntheticSpec& spec);
Image render_texture(const ClassTexture& texture, std::size_t side, double phase, double cross_phase, double noise,
                     std::uint64_t noise_seed);
Dataset synth_dataset(const SyntheticSpec& spec);

// Same-class ground truth of every query against the database.
GroundTruth class_ground_truth(const std::vector<LabeledImage>& queries, const std::vector<LabeledImage>& database);

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::size_t label = 0;
};

// Lines `id<TAB>path<TAB>label`; relative paths resolve against the
// manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Loads a raster and takes its id and label from the manifest entry whose
// path matches.
LabeledImage load_image(const std::filesystem::path& path, const std::vector<ManifestEntry>& manifest);
std::vector<LabeledImage> load_manifest_images(const std::filesystem::path& manifest_path);

// Writes every image as BIMG under dir/images and the split manifests
// train.tsv, database.tsv, queries.tsv plus gt.txt.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace buddynet
