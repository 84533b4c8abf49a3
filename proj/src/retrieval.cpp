#include "buddynet/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "buddynet/errors.hpp"
#include "buddynet/rng.hpp"

namespace buddynet {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void append_segment(std::vector<double>& out, const Tensor& embedding, bool normalize) {
  std::span<const double> v = embedding.data();
  const double n = normalize ? l2_norm(v) : 1.0;
  for (double x : v) out.push_back(normalize && n > 0.0 ? x / n : x);
}

}  // namespace

EmbeddingRecord EmbeddingRecord::make(std::string id, std::vector<double> vector) {
  EmbeddingRecord r;
  r.norm = l2_norm(vector);
  r.id = std::move(id);
  r.vector = std::move(vector);
  return r;
}

bool RankedList::well_formed() const {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && entries[i].score > entries[i - 1].score) return false;
    ids.push_back(entries[i].id);
  }
  std::sort(ids.begin(), ids.end());
  return std::adjacent_find(ids.begin(), ids.end()) == ids.end();
}

void sort_ranked(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

RetrievalIndex::RetrievalIndex(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("retrieval index dimension must be positive");
}

void RetrievalIndex::add(EmbeddingRecord record) {
  if (record.vector.size() != dim_) {
    throw ShapeError("record '" + record.id + "' has dimension " + std::to_string(record.vector.size()) +
                     ", index expects " + std::to_string(dim_));
  }
  record.norm = l2_norm(record.vector);
  if (!(record.norm > 0.0) || !std::isfinite(record.norm)) {
    throw ValidationError("record '" + record.id + "' has zero or non-finite norm");
  }
  if (positions_.count(record.id)) throw ValidationError("duplicate id '" + record.id + "' in index");
  positions_.emplace(record.id, records_.size());
  for (double x : record.vector) units_.push_back(x / record.norm);
  records_.push_back(std::move(record));
}

void RetrievalIndex::add(std::string id, std::vector<double> vector) {
  add(EmbeddingRecord::make(std::move(id), std::move(vector)));
}

std::optional<std::size_t> RetrievalIndex::find(const std::string& id) const {
  auto it = positions_.find(id);
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

std::span<const double> RetrievalIndex::unit(std::size_t i) const {
  if (i >= records_.size()) throw std::out_of_range("record index out of range");
  return std::span<const double>(units_).subspan(i * dim_, dim_);
}

std::vector<double> RetrievalIndex::similarities(std::span<const double> query) const {
  if (query.size() != dim_) {
    throw ShapeError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                     std::to_string(dim_));
  }
  const double qn = l2_norm(query);
  if (!(qn > 0.0)) throw ValidationError("query vector has zero norm");
  std::vector<double> sims(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) sims[i] = dot(unit(i), query) / qn;
  return sims;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = l2_norm(a), nb = l2_norm(b);
  if (!(na > 0.0 && nb > 0.0)) throw ValidationError("cosine_similarity: zero vector");
  return dot(a, b) / (na * nb);
}

std::vector<double> unit_vector(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw ValidationError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

RankedList knn_query(const RetrievalIndex& index, std::span<const double> query, std::size_t k) {
  if (k < 1) throw ValidationError("knn_query: k must be at least 1");
  if (index.empty()) throw ValidationError("knn_query: empty index");
  std::vector<double> sims = index.similarities(query);
  std::vector<RankedEntry> entries;
  entries.reserve(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) entries.push_back({index.record(i).id, sims[i]});
  const std::size_t keep = std::min(k, entries.size());
  auto before = [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep), entries.end(), before);
  entries.resize(keep);
  RankedList out;
  out.entries = std::move(entries);
  return out;
}

Eigen::MatrixXd pairwise_similarities(const RetrievalIndex& index) {
  if (index.empty()) throw ValidationError("pairwise_similarities: empty index");
  const std::size_t n = index.size();
  Eigen::MatrixXd s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = dot(index.unit(i), index.unit(j));
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return s;
}

std::uint64_t inference_seed(const std::string& id, std::uint64_t base) { return mix_seed(fnv1a(id), base); }

std::vector<double> embed_concat(const Image& image, const BlockParams& master, const CropConfig& crops,
                                 std::uint64_t crop_seed, const RetrievalOptions& options,
                                 const BlockParams* assistant) {
  NoGradScope no_grad;
  CropSet set = multi_crop(image, crops, crop_seed);
  std::vector<const Image*> views;
  Image original = resize_bilinear(image, crops.global_side);
  views.push_back(&original);
  for (const Crop& c : set.globals) views.push_back(&c.image);
  for (const Crop& c : set.locals) views.push_back(&c.image);

  std::vector<double> out;
  out.reserve(views.size() * master.config.out_dim * (assistant ? 2 : 1));
  for (const Image* view : views) append_segment(out, embed(*view, master), options.per_segment_normalize);
  if (assistant) {
    for (const Image* view : views) append_segment(out, embed(*view, *assistant), options.per_segment_normalize);
  }
  return out;
}

EmbeddingRecord embed_record(const std::string& id, const Image& image, const BlockParams& master,
                             const CropConfig& crops, const RetrievalOptions& options,
                             const BlockParams* assistant) {
  return EmbeddingRecord::make(
      id, embed_concat(image, master, crops, inference_seed(id, options.crop_seed), options, assistant));
}

RetrievalIndex build_index(std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw ValidationError("cannot build an index from zero records");
  RetrievalIndex index(records.front().vector.size());
  for (const EmbeddingRecord& r : records) index.add(r);
  return index;
}

}  // namespace buddynet
