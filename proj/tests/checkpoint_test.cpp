#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "buddynet/checkpoint.hpp"
#include "buddynet/errors.hpp"

using namespace buddynet;

namespace {

BlockParams sample_block() {
  Rng rng(31);
  return BlockParams::initialize(BackboneConfig{}, 5, rng);
}

ChannelStats sample_stats() { return ChannelStats{{0.1, 0.2, 0.3}, {1.5, 0.25, 2.0}}; }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, ByteRoundTripIsExact) {
  BlockParams p = sample_block();
  auto bytes = serialize_checkpoint(p, sample_stats());
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BNET");
  Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.params.config, p.config);
  EXPECT_EQ(back.normalization.mean, sample_stats().mean);
  EXPECT_EQ(back.normalization.stddev, sample_stats().stddev);
  std::vector<Tensor> a = p.tensors(), b = back.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].shape(), b[k].shape());
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_EQ(a[k][i], b[k][i]);
  }
  EXPECT_EQ(serialize_checkpoint(back.params, back.normalization), bytes);
}

TEST(Checkpoint, FileRoundTripIsBitExact) {
  const auto path = std::filesystem::temp_directory_path() / "buddynet_checkpoint_test.bnet";
  BlockParams p = sample_block();
  write_checkpoint(path, p, sample_stats());
  Checkpoint back = read_checkpoint(path);
  write_checkpoint(path.string() + ".2", back.params, back.normalization);
  EXPECT_EQ(read_bytes(path), read_bytes(path.string() + ".2"));
}

TEST(Checkpoint, LoadedParametersRequireGradients) {
  Checkpoint back = deserialize_checkpoint(serialize_checkpoint(sample_block(), sample_stats()));
  for (const Tensor& t : back.params.tensors()) EXPECT_TRUE(t.requires_grad());
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = serialize_checkpoint(sample_block(), sample_stats());
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_checkpoint(truncated), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), FormatError);
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/x.bnet"), std::runtime_error);
}
