#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "buddynet/backbone.hpp"
#include "buddynet/cropper.hpp"
#include "buddynet/image.hpp"

namespace buddynet {

struct EmbeddingRecord {
  std::string id;
  std::vector<double> vector;
  double norm = 0.0;

  static EmbeddingRecord make(std::string id, std::vector<double> vector);
};

struct RankedEntry {
  std::string id;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
  std::vector<RankedEntry> entries;
  std::optional<std::string> query_id;
  // Set when a re-ranking step could not run and returned its input.
  bool degenerate = false;

  std::size_t size() const { return entries.size(); }
  // Scores non-increasing and ids unique.
  bool well_formed() const;
};

// Orders by descending score, ties by ascending id.
void sort_ranked(std::vector<RankedEntry>& entries);

// Flat cosine-similarity index. Records keep insertion order; unit vectors
// are cached for scoring.
class RetrievalIndex {
 public:
  explicit RetrievalIndex(std::size_t dim);

  void add(EmbeddingRecord record);
  void add(std::string id, std::vector<double> vector);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t dim() const { return dim_; }
  const EmbeddingRecord& record(std::size_t i) const { return records_.at(i); }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  std::optional<std::size_t> find(const std::string& id) const;
  std::span<const double> unit(std::size_t i) const;

  // Cosine similarity of `query` to every record, in insertion order.
  std::vector<double> similarities(std::span<const double> query) const;

 private:
  std::size_t dim_;
  std::vector<EmbeddingRecord> records_;
  std::vector<double> units_;
  std::unordered_map<std::string, std::size_t> positions_;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);
std::vector<double> unit_vector(std::span<const double> v);

RankedList knn_query(const RetrievalIndex& index, std::span<const double> query, std::size_t k);

// Symmetric cosine matrix with unit diagonal.
Eigen::MatrixXd pairwise_similarities(const RetrievalIndex& index);

struct RetrievalOptions {
  // Normalize each per-crop segment before concatenation.
  bool per_segment_normalize = false;
  std::uint64_t crop_seed = 0;
};

// Crop seed used at inference for a given image id.
std::uint64_t inference_seed(const std::string& id, std::uint64_t base = 0);

// Embeddings of the image resized to the global side, then each global and
// each local crop, concatenated in that order. The image must already be
// normalized. With `assistant` the assistant's embeddings of the same crops
// are appended after the master's.
std::vector<double> embed_concat(const Image& image, const BlockParams& master, const CropConfig& crops,
                                 std::uint64_t crop_seed, const RetrievalOptions& options = {},
                                 const BlockParams* assistant = nullptr);

EmbeddingRecord embed_record(const std::string& id, const Image& image, const BlockParams& master,
                             const CropConfig& crops, const RetrievalOptions& options = {},
                             const BlockParams* assistant = nullptr);

// Embedding file: "BEMB", u32 version, u64 count, u32 dim, then per record
// u16 id length, id bytes and dim little-endian f32 values.
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;
void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_embeddings(std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> deserialize_embeddings(std::span<const std::uint8_t> bytes,
                                                    const std::string& context = "embeddings");

RetrievalIndex build_index(std::span<const EmbeddingRecord> records);

}  // namespace buddynet
