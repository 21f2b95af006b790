#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "xmodal/encoder/config.hpp"
#include "xmodal/encoder/weights.hpp"
#include "xmodal/weight_io/container.hpp"

namespace xmodal::weight_io {

struct LoadedCheckpoint {
  encoder::EncoderConfig config;
  encoder::EncoderWeights<float> weights;
  std::optional<std::string> provenance;
  // FNV-1a of the serialized checkpoint bytes.
  std::string fingerprint;
};

// Config block: u32 n_conv, n_conv x (u32 out_channels, u32 kernel, u32 stride),
// then u32 conv_norm_mode, conv_bias, d_model, n_transformer_layers, n_heads,
// ffn_dim, pos_conv_kernel, pos_conv_groups, pos_conv_trim_even,
// layernorm_placement, gelu, and f32 layer_norm_eps.
inline std::vector<std::uint8_t> encode_config(const encoder::EncoderConfig& c) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(c.conv_layers.size()));
  for (const auto& l : c.conv_layers) {
    w.u32(static_cast<std::uint32_t>(l.out_channels));
    w.u32(static_cast<std::uint32_t>(l.kernel));
    w.u32(static_cast<std::uint32_t>(l.stride));
  }
  w.u32(static_cast<std::uint32_t>(c.conv_norm_mode));
  w.u32(c.conv_bias ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.n_transformer_layers));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.ffn_dim));
  w.u32(static_cast<std::uint32_t>(c.pos_conv_kernel));
  w.u32(static_cast<std::uint32_t>(c.pos_conv_groups));
  w.u32(c.pos_conv_trim_even ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.layernorm_placement));
  w.u32(static_cast<std::uint32_t>(c.gelu));
  w.f32(c.layer_norm_eps);
  return std::move(w.bytes());
}

inline std::size_t config_block_length(std::size_t n_conv) { return 4 + 12 * n_conv + 11 * 4 + 4; }

inline encoder::EncoderConfig decode_config(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  encoder::EncoderConfig c;
  const std::uint32_t n_conv = r.u32();
  if (n_conv == 0 || n_conv > 64) throw CorruptCheckpointError("config declares " + std::to_string(n_conv) + " conv layers");
  if (bytes.size() != config_block_length(n_conv)) {
    throw FormatError("encoder config block is " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(config_block_length(n_conv)));
  }
  for (std::uint32_t i = 0; i < n_conv; ++i) {
    encoder::ConvLayerSpec l;
    l.out_channels = r.u32();
    l.kernel = r.u32();
    l.stride = r.u32();
    c.conv_layers.push_back(l);
  }
  auto flag = [&r](const char* field, std::uint32_t max) {
    const std::uint32_t v = r.u32();
    if (v > max) throw FormatError(std::string("config field ") + field + " has unknown value " + std::to_string(v));
    return v;
  };
  c.conv_norm_mode = static_cast<encoder::ConvNormMode>(flag("conv_norm_mode", 1));
  c.conv_bias = flag("conv_bias", 1) != 0;
  c.d_model = r.u32();
  c.n_transformer_layers = r.u32();
  c.n_heads = r.u32();
  c.ffn_dim = r.u32();
  c.pos_conv_kernel = r.u32();
  c.pos_conv_groups = r.u32();
  c.pos_conv_trim_even = flag("pos_conv_trim_even", 1) != 0;
  c.layernorm_placement = static_cast<encoder::LayerNormPlacement>(flag("layernorm_placement", 1));
  c.gelu = static_cast<numkit::GeluVariant>(flag("gelu", 1));
  c.layer_norm_eps = r.f32();
  c.validate();
  return c;
}

inline Container checkpoint_container(const encoder::EncoderConfig& config, const encoder::EncoderWeights<float>& weights,
                                      const std::optional<std::string>& provenance = std::nullopt) {
  config.validate();
  Container c;
  c.kind = ContainerKind::encoder;
  c.config = encode_config(config);
  if (provenance) c.metadata = nlohmann::json{{"provenance", *provenance}}.dump();
  for (const auto& [name, shape] : encoder::required_tensors(config)) {
    const Tensorf& t = weights.get(name);
    if (t.shape() != shape) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " + shape_string(shape));
    }
    c.add(name, t);
  }
  return c;
}

inline void save_checkpoint(const encoder::EncoderConfig& config, const encoder::EncoderWeights<float>& weights,
                            const std::filesystem::path& path,
                            const std::optional<std::string>& provenance = std::nullopt) {
  write_container(path, checkpoint_container(config, weights, provenance));
}

inline LoadedCheckpoint checkpoint_from_container(const Container& c) {
  if (c.kind != ContainerKind::encoder) throw FormatError("container is not an encoder checkpoint");
  LoadedCheckpoint out;
  out.config = decode_config(c.config);
  if (!c.metadata.empty()) {
    const auto meta = nlohmann::json::parse(c.metadata, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw CorruptCheckpointError("checkpoint metadata is not a JSON object");
    for (const auto& [key, value] : meta.items()) {
      if (key != "provenance" || !value.is_string()) throw FormatError("unknown checkpoint metadata field '" + key + "'");
      out.provenance = value.get<std::string>();
    }
  }
  const auto required = encoder::required_tensors(out.config);
  std::set<std::string> expected;
  for (const auto& [name, shape] : required) expected.insert(name);
  for (const auto& t : c.tensors) {
    if (!expected.count(t.name)) throw FormatError("unexpected tensor '" + t.name + "' for this config");
    if (t.dtype() != DType::f32) throw FormatError("encoder tensor '" + t.name + "' is not f32");
  }
  encoder::EncoderWeights<float>::TensorMap map;
  for (const auto& [name, shape] : required) {
    const StoredTensor* t = c.find(name);
    if (!t) throw CorruptCheckpointError("checkpoint directory is missing tensor '" + name + "'");
    if (t->shape() != shape) {
      throw CorruptCheckpointError("tensor '" + name + "' has shape " + shape_string(t->shape()) + ", expected " +
                                   shape_string(shape));
    }
    map.emplace(name, std::get<Tensorf>(t->data));
  }
  out.weights = encoder::EncoderWeights<float>(std::move(map));
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  LoadedCheckpoint out = checkpoint_from_container(parse(bytes));
  out.fingerprint = hex64(fnv1a64(bytes));
  return out;
}

// In-memory checkpoint with the same fingerprint a saved copy would have.
inline LoadedCheckpoint make_checkpoint(const encoder::EncoderConfig& config, encoder::EncoderWeights<float> weights,
                                        const std::optional<std::string>& provenance = std::nullopt) {
  LoadedCheckpoint out;
  out.fingerprint = hex64(fnv1a64(serialize(checkpoint_container(config, weights, provenance))));
  out.config = config;
  out.weights = std::move(weights);
  out.provenance = provenance;
  return out;
}

}  // namespace xmodal::weight_io
