#include "buddynet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "buddynet/errors.hpp"
#include "buddynet/rng.hpp"

namespace buddynet {

namespace {

std::string image_id(std::size_t label, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02zu_%03zu", label, k);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (images_per_class < 1) throw ValidationError("synthetic data needs images per class");
  if (image_side < 2) throw ValidationError("synthetic image side too small");
  if (channels != 1 && channels != 3) throw ValidationError("synthetic images have 1 or 3 channels");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  if (train_per_class + query_per_class >= images_per_class) {
    throw ValidationError("train and query counts leave no database images");
  }
  if (query_per_class == 0 && images_per_class - train_per_class < 2) {
    throw ValidationError("leave-one-out split needs at least 2 non-training images per class");
  }
}

std::vector<ClassTexture> class_textures(const SyntheticSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x7465787475726573ULL));
  std::vector<ClassTexture> out;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    ClassTexture t;
    // evenly spaced orientations in [0, pi) keep classes distinct
    t.orientation = std::numbers::pi * (static_cast<double>(c) + 0.25 * rng.uniform()) /
                    static_cast<double>(spec.n_classes);
    t.frequency = 2.0 + static_cast<double>(c % 3) + 0.5 * rng.uniform();
    t.cross_frequency = 1.0 + static_cast<double>((c / 3) % 3) + 0.5 * rng.uniform();
    for (std::size_t ch = 0; ch < spec.channels; ++ch) t.colour.push_back(rng.uniform(0.3, 1.0));
    out.push_back(std::move(t));
  }
  return out;
}

Image render_texture(const ClassTexture& t, std::size_t side, double phase, double cross_phase, double noise,
                     std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  const std::size_t channels = t.colour.size();
  Image img(side, side, channels);
  const double c = std::cos(t.orientation), s = std::sin(t.orientation);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(side);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(side);
      const double along = u * c + v * s;
      const double across = -u * s + v * c;
      const double wave = 0.7 * std::sin(two_pi * t.frequency * along + phase) +
                          0.3 * std::sin(two_pi * t.cross_frequency * across + cross_phase);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double value = 0.5 + 0.45 * t.colour[ch] * wave;
        if (noise > 0.0) value += noise * rng.normal();
        img.at(y, x, ch) = std::clamp(value, 0.0, 1.0);
      }
    }
  }
  return img;
}

GroundTruth class_ground_truth(const std::vector<LabeledImage>& queries, const std::vector<LabeledImage>& database) {
  GroundTruth gt;
  for (const LabeledImage& q : queries) {
    GroundTruthEntry& e = gt.queries[q.id];
    for (const LabeledImage& d : database) {
      if (d.label == q.label && d.id != q.id) e.positives.insert(d.id);
    }
  }
  return gt;
}

Dataset synth_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<ClassTexture> textures = class_textures(spec);
  Rng rng(mix_seed(spec.seed, 0x696d61676573ULL));
  Dataset out;
  out.num_classes = spec.n_classes;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t k = 0; k < spec.images_per_class; ++k) {
      const double phase = rng.uniform(0.0, two_pi);
      const double cross_phase = rng.uniform(0.0, two_pi);
      const std::uint64_t noise_seed = rng.next();
      LabeledImage img{image_id(c, k),
                       render_texture(textures[c], spec.image_side, phase, cross_phase, spec.noise_sigma, noise_seed),
                       c};
      if (k < spec.train_per_class) {
        out.train.push_back(std::move(img));
      } else if (spec.query_per_class == 0) {
        out.queries.push_back(img);
        out.database.push_back(std::move(img));
      } else if (k < spec.train_per_class + spec.query_per_class) {
        out.queries.push_back(std::move(img));
      } else {
        out.database.push_back(std::move(img));
      }
    }
  }
  out.ground_truth = class_ground_truth(out.queries, out.database);
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string f;
    while (std::getline(row, f, '\t')) fields.push_back(f);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw FormatError(where + ": expected id, path and label separated by tabs");
    ManifestEntry e;
    e.id = fields[0];
    e.path = fields[1];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    auto [end, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), e.label);
    if (ec != std::errc() || end != fields[2].data() + fields[2].size()) {
      throw FormatError(where + ": invalid label '" + fields[2] + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const ManifestEntry& e : entries) out << e.id << '\t' << e.path.generic_string() << '\t' << e.label << '\n';
}

LabeledImage load_image(const std::filesystem::path& path, const std::vector<ManifestEntry>& manifest) {
  const std::filesystem::path wanted = std::filesystem::weakly_canonical(path);
  for (const ManifestEntry& e : manifest) {
    if (std::filesystem::weakly_canonical(e.path) == wanted) return LabeledImage{e.id, read_raster(path), e.label};
  }
  throw ValidationError("image " + path.string() + " is not listed in the manifest");
}

std::vector<LabeledImage> load_manifest_images(const std::filesystem::path& manifest_path) {
  std::vector<LabeledImage> out;
  for (const ManifestEntry& e : read_manifest(manifest_path)) out.push_back(LabeledImage{e.id, read_raster(e.path), e.label});
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir / "images");
  auto write_split = [&](const std::vector<LabeledImage>& images, const std::string& name) {
    std::vector<ManifestEntry> entries;
    for (const LabeledImage& img : images) {
      const std::filesystem::path rel = std::filesystem::path("images") / (img.id + ".bimg");
      write_bimg(dir / rel, img.image);
      entries.push_back(ManifestEntry{img.id, rel, img.label});
    }
    write_manifest(dir / name, entries);
  };
  write_split(dataset.train, "train.tsv");
  write_split(dataset.database, "database.tsv");
  write_split(dataset.queries, "queries.tsv");
  write_ground_truth(dir / "gt.txt", dataset.ground_truth);
}

}  // namespace buddynet
