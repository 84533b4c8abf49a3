#include <limits>

#include "buddynet/binary_io.hpp"
#include "buddynet/errors.hpp"
#include "buddynet/retrieval.hpp"

namespace buddynet {

std::vector<std::uint8_t> serialize_embeddings(std::span<const EmbeddingRecord> records) {
  const std::size_t dim = records.empty() ? 0 : records.front().vector.size();
  BinaryWriter out;
  out.raw("BEMB");
  out.u32(kEmbeddingFileVersion);
  out.u64(records.size());
  out.u32(static_cast<std::uint32_t>(dim));
  for (const EmbeddingRecord& r : records) {
    if (r.vector.size() != dim) throw ShapeError("embedding '" + r.id + "' has inconsistent dimension");
    if (r.id.size() > std::numeric_limits<std::uint16_t>::max()) throw ValidationError("embedding id too long");
    out.u16(static_cast<std::uint16_t>(r.id.size()));
    out.raw(r.id);
    for (double v : r.vector) out.f32(static_cast<float>(v));
  }
  return out.bytes();
}

std::vector<EmbeddingRecord> deserialize_embeddings(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader in(bytes, context);
  in.expect_magic("BEMB");
  const std::uint32_t version = in.u32();
  if (version != kEmbeddingFileVersion) {
    throw FormatError(context + ": unsupported embedding file version " + std::to_string(version));
  }
  const std::uint64_t count = in.u64();
  const std::uint32_t dim = in.u32();
  // each record needs at least the id length and its payload
  if (count > in.remaining() / (2 + 4 * static_cast<std::uint64_t>(dim))) {
    throw FormatError(context + ": header claims " + std::to_string(count) + " records, file too short");
  }
  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint16_t len = in.u16();
    std::string id = in.raw(len);
    in.require(4 * static_cast<std::size_t>(dim));
    std::vector<double> v(dim);
    for (double& x : v) x = in.f32();
    records.push_back(EmbeddingRecord::make(std::move(id), std::move(v)));
  }
  in.expect_end();
  return records;
}

void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  write_file(path, serialize_embeddings(records));
}

std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
  return deserialize_embeddings(read_file(path), path.string());
}

}  // namespace buddynet
