#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "buddynet/backbone.hpp"
#include "buddynet/image.hpp"

namespace buddynet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  BlockParams params;
  ChannelStats normalization;
};

// Little-endian layout: "BNET", u32 version, config block, u32 tensor count,
// then per tensor u32 name length, name bytes, u32 rank, u64 dims, f64 payload.
std::vector<std::uint8_t> serialize_checkpoint(const BlockParams& params, const ChannelStats& normalization);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");

void write_checkpoint(const std::filesystem::path& path, const BlockParams& params, const ChannelStats& normalization);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace buddynet
