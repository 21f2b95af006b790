#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/kernels.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::encoder {

struct ConvLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

enum class ConvNormMode { group_norm_first_layer = 0, layer_norm_every_layer = 1 };
enum class LayerNormPlacement { post = 0, pre = 1 };

// Architecture hyperparameters of the conv + transformer encoder. Real values
// always come from the checkpoint header; base() only mirrors the public
// base-size layout for convenience.
struct EncoderConfig {
  std::vector<ConvLayerSpec> conv_layers;
  ConvNormMode conv_norm_mode = ConvNormMode::group_norm_first_layer;
  bool conv_bias = false;
  std::size_t d_model = 768;
  std::size_t n_transformer_layers = 12;
  std::size_t n_heads = 12;
  std::size_t ffn_dim = 3072;
  std::size_t pos_conv_kernel = 128;
  std::size_t pos_conv_groups = 16;
  // Drop the trailing frame of the positional conv when its kernel is even.
  bool pos_conv_trim_even = true;
  LayerNormPlacement layernorm_placement = LayerNormPlacement::post;
  numkit::GeluVariant gelu = numkit::GeluVariant::tanh;
  float layer_norm_eps = 1e-5f;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;

  static std::vector<ConvLayerSpec> default_conv_layers(std::size_t channels = 512) {
    return {{channels, 10, 5}, {channels, 3, 2}, {channels, 3, 2}, {channels, 3, 2},
            {channels, 3, 2},  {channels, 2, 2}, {channels, 2, 2}};
  }

  static EncoderConfig base() {
    EncoderConfig c;
    c.conv_layers = default_conv_layers();
    return c;
  }

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t conv_channels() const { return conv_layers.back().out_channels; }

  void validate() const {
    if (conv_layers.empty()) throw ConfigError("encoder config needs at least one conv layer");
    for (std::size_t i = 0; i < conv_layers.size(); ++i) {
      const auto& l = conv_layers[i];
      if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
        throw ConfigError("conv layer " + std::to_string(i) + " has a zero dimension");
      }
    }
    if (d_model == 0 || n_transformer_layers == 0 || n_heads == 0 || ffn_dim == 0 || pos_conv_kernel == 0 ||
        pos_conv_groups == 0) {
      throw ConfigError("encoder config dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (d_model % pos_conv_groups != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by pos_conv_groups " +
                        std::to_string(pos_conv_groups));
    }
    if (!(layer_norm_eps > 0.0f)) throw ConfigError("layer_norm_eps must be positive");
  }
};

// Number of frames the conv stack produces for `input_length` samples:
// L <- floor((L - K) / s) + 1 per layer. Zero means the input is too short.
inline std::size_t frame_count(std::size_t input_length, std::span<const ConvLayerSpec> conv_layers) {
  std::size_t length = input_length;
  for (const auto& layer : conv_layers) {
    length = numkit::conv_output_length(length, layer.kernel, layer.stride);
    if (length == 0) return 0;
  }
  return length;
}

// Smallest input length that yields one frame.
inline std::size_t min_input_length(std::span<const ConvLayerSpec> conv_layers) {
  std::size_t length = 1;
  for (auto it = conv_layers.rbegin(); it != conv_layers.rend(); ++it) {
    length = (length - 1) * it->stride + it->kernel;
  }
  return length;
}

inline std::string layer_prefix(std::size_t block) {
  return "encoder.layers." + std::to_string(block) + ".";
}

// Every tensor an encoder with this config needs, in canonical order.
inline std::vector<std::pair<std::string, Shape>> required_tensors(const EncoderConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in_channels = 1;
  for (std::size_t i = 0; i < c.conv_layers.size(); ++i) {
    const auto& l = c.conv_layers[i];
    const std::string p = "feature_extractor.conv." + std::to_string(i) + ".";
    out.push_back({p + "weight", {l.out_channels, in_channels, l.kernel}});
    if (c.conv_bias) out.push_back({p + "bias", {l.out_channels}});
    const bool has_norm = c.conv_norm_mode == ConvNormMode::layer_norm_every_layer || i == 0;
    if (has_norm) {
      const std::string n = "feature_extractor.norm." + std::to_string(i) + ".";
      out.push_back({n + "weight", {l.out_channels}});
      out.push_back({n + "bias", {l.out_channels}});
    }
    in_channels = l.out_channels;
  }
  const std::size_t d = c.d_model;
  out.push_back({"feature_projection.layer_norm.weight", {in_channels}});
  out.push_back({"feature_projection.layer_norm.bias", {in_channels}});
  out.push_back({"feature_projection.weight", {d, in_channels}});
  out.push_back({"feature_projection.bias", {d}});
  out.push_back({"encoder.pos_conv.weight", {d, d / c.pos_conv_groups, c.pos_conv_kernel}});
  out.push_back({"encoder.pos_conv.bias", {d}});
  out.push_back({"encoder.layer_norm.weight", {d}});
  out.push_back({"encoder.layer_norm.bias", {d}});
  for (std::size_t b = 0; b < c.n_transformer_layers; ++b) {
    const std::string p = layer_prefix(b);
    for (const char* proj : {"q_proj", "k_proj", "v_proj", "out_proj"}) {
      out.push_back({p + "attention." + proj + ".weight", {d, d}});
      out.push_back({p + "attention." + proj + ".bias", {d}});
    }
    out.push_back({p + "layer_norm.weight", {d}});
    out.push_back({p + "layer_norm.bias", {d}});
    out.push_back({p + "feed_forward.intermediate_dense.weight", {c.ffn_dim, d}});
    out.push_back({p + "feed_forward.intermediate_dense.bias", {c.ffn_dim}});
    out.push_back({p + "feed_forward.output_dense.weight", {d, c.ffn_dim}});
    out.push_back({p + "feed_forward.output_dense.bias", {d}});
    out.push_back({p + "final_layer_norm.weight", {d}});
    out.push_back({p + "final_layer_norm.bias", {d}});
  }
  return out;
}

}  // namespace xmodal::encoder
