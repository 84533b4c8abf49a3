#include "buddynet/checkpoint.hpp"

#include <map>

#include "buddynet/binary_io.hpp"
#include "buddynet/errors.hpp"

namespace buddynet {

std::vector<std::uint8_t> serialize_checkpoint(const BlockParams& params, const ChannelStats& normalization) {
  const BackboneConfig& c = params.config;
  BinaryWriter out;
  out.raw("BNET");
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(c.image_side));
  out.u32(static_cast<std::uint32_t>(c.patch_side));
  out.u32(static_cast<std::uint32_t>(c.channels));
  out.u32(static_cast<std::uint32_t>(c.embed_dim));
  out.u32(static_cast<std::uint32_t>(c.num_layers));
  out.u32(static_cast<std::uint32_t>(c.num_heads));
  out.f64(c.mlp_ratio);
  out.u32(static_cast<std::uint32_t>(c.out_dim));
  out.u32(static_cast<std::uint32_t>(params.num_classes()));
  out.f64(params.arcface.margin_max);
  out.u32(static_cast<std::uint32_t>(normalization.mean.size()));
  for (double v : normalization.mean) out.f64(v);
  for (double v : normalization.stddev) out.f64(v);

  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Tensor&) { ++count; });
  out.u32(count);
  params.visit([&](const std::string& name, const Tensor& t) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.raw(name);
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) out.u64(d);
    for (double v : t.data()) out.f64(v);
  });
  return out.bytes();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader in(bytes, context);
  in.expect_magic("BNET");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(context + ": unsupported checkpoint version " + std::to_string(version));
  }
  BackboneConfig c;
  c.image_side = in.u32();
  c.patch_side = in.u32();
  c.channels = in.u32();
  c.embed_dim = in.u32();
  c.num_layers = in.u32();
  c.num_heads = in.u32();
  c.mlp_ratio = in.f64();
  c.out_dim = in.u32();
  const std::size_t num_classes = in.u32();
  const double margin_max = in.f64();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(context + ": invalid config block: " + e.what());
  }
  if (num_classes == 0) throw FormatError(context + ": zero classes");

  Checkpoint ck;
  const std::size_t stat_channels = in.u32();
  ck.normalization.mean.resize(stat_channels);
  ck.normalization.stddev.resize(stat_channels);
  for (double& v : ck.normalization.mean) v = in.f64();
  for (double& v : ck.normalization.stddev) v = in.f64();

  ck.params = BlockParams::zeros(c, num_classes, margin_max);
  std::map<std::string, Tensor*> slots;
  ck.params.visit([&](const std::string& name, Tensor& t) { slots[name] = &t; });

  const std::uint32_t count = in.u32();
  if (count != slots.size()) {
    throw FormatError(context + ": expected " + std::to_string(slots.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = in.u32();
    const std::string name = in.raw(len);
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError(context + ": unexpected tensor \"" + name + "\"");
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u64();
    Tensor& slot = *it->second;
    if (shape != slot.shape()) {
      throw FormatError(context + ": tensor \"" + name + "\" has shape " + shape_to_string(shape) + ", expected " +
                        shape_to_string(slot.shape()));
    }
    in.require(slot.size() * 8);
    for (double& v : slot.mutable_data()) v = in.f64();
    slots.erase(it);
  }
  in.expect_end();
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const BlockParams& params, const ChannelStats& normalization) {
  write_file(path, serialize_checkpoint(params, normalization));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

}  // namespace buddynet
