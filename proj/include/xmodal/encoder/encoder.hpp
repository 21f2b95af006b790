#pragma once

// Frozen speech-style encoder: strided conv feature extractor, projection to
// d_model, then a stack of transformer blocks. Hidden-state index 0 is the
// projected conv output; index l >= 1 is the output of transformer block l
// (tensor names use the 0-based block number, "encoder.layers.{l-1}").

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "xmodal/encoder/config.hpp"
#include "xmodal/encoder/weights.hpp"
#include "xmodal/lora/adapter.hpp"
#include "xmodal/numkit/kernels.hpp"

namespace xmodal::encoder {

// Arithmetic width used for a forward pass.
enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

template <typename T>
using HiddenStates = std::map<std::size_t, Tensor<T>>;

template <typename T>
struct AttentionWeights {
  const Tensor<T>* q_weight;
  const Tensor<T>* q_bias;
  const Tensor<T>* k_weight;
  const Tensor<T>* k_bias;
  const Tensor<T>* v_weight;
  const Tensor<T>* v_bias;
  const Tensor<T>* out_weight;
  const Tensor<T>* out_bias;

  static AttentionWeights from(const EncoderWeights<T>& w, std::size_t block) {
    const std::string p = layer_prefix(block) + "attention.";
    return {&w.get(p + "q_proj.weight"), &w.get(p + "q_proj.bias"),   &w.get(p + "k_proj.weight"),
            &w.get(p + "k_proj.bias"),   &w.get(p + "v_proj.weight"),  &w.get(p + "v_proj.bias"),
            &w.get(p + "out_proj.weight"), &w.get(p + "out_proj.bias")};
  }
};

namespace detail {

template <typename T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                  const lora::LoraAdapter<T>* adapter) {
  if (adapter) return lora::adapted_forward(x, weight, *adapter, &bias);
  return numkit::linear(x, weight, &bias);
}

}  // namespace detail

// Bidirectional multi-head self-attention on x [T×d]:
// softmax(Q Kᵀ / √(d/h)) V per head, heads concatenated, then output-projected.
template <typename T>
Tensor<T> attention(const Tensor<T>& x, const AttentionWeights<T>& w, std::size_t n_heads,
                    const lora::LoraAdapter<std::type_identity_t<T>>* q_adapter = nullptr,
                    const lora::LoraAdapter<std::type_identity_t<T>>* v_adapter = nullptr,
                    std::vector<Tensor<std::type_identity_t<T>>>* weights_out = nullptr) {
  const std::size_t d = x.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t head_dim = d / n_heads;
  const Tensor<T> q = detail::project(x, *w.q_weight, *w.q_bias, q_adapter);
  const Tensor<T> k = numkit::linear(x, *w.k_weight, w.k_bias);
  const Tensor<T> v = detail::project(x, *w.v_weight, *w.v_bias, v_adapter);
  const T inv_sqrt = T(1) / std::sqrt(T(head_dim));
  std::vector<Tensor<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor<T> qh = numkit::slice_cols(q, h * head_dim, head_dim);
    const Tensor<T> kh = numkit::slice_cols(k, h * head_dim, head_dim);
    const Tensor<T> vh = numkit::slice_cols(v, h * head_dim, head_dim);
    const Tensor<T> probs = numkit::softmax(numkit::scale(numkit::matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(numkit::matmul(probs, vh));
    if (weights_out) weights_out->push_back(probs);
  }
  return numkit::linear(numkit::concat_cols(heads), *w.out_weight, w.out_bias);
}

// Conv feature extractor on a mono waveform; returns frames [T×C].
template <typename T>
Tensor<T> extract_conv_features(const Tensor<T>& waveform, const EncoderWeights<T>& w, const EncoderConfig& c) {
  const T eps = static_cast<T>(c.layer_norm_eps);
  Tensor<T> x = waveform.reshaped({1, waveform.size()});
  for (std::size_t i = 0; i < c.conv_layers.size(); ++i) {
    const std::string p = "feature_extractor.conv." + std::to_string(i) + ".";
    const std::string n = "feature_extractor.norm." + std::to_string(i) + ".";
    x = numkit::conv1d(x, w.get(p + "weight"), c.conv_layers[i].stride, 1, c.conv_bias ? &w.get(p + "bias") : nullptr);
    if (c.conv_norm_mode == ConvNormMode::group_norm_first_layer && i == 0) {
      x = numkit::channel_norm(x, w.get(n + "weight"), w.get(n + "bias"), eps);
    } else if (c.conv_norm_mode == ConvNormMode::layer_norm_every_layer) {
      x = numkit::transpose(numkit::layer_norm(numkit::transpose(x), w.get(n + "weight"), w.get(n + "bias"), eps));
    }
    x = numkit::gelu(x, c.gelu);
  }
  return numkit::transpose(x);
}

// Layer 0: conv frames layer-normed and projected to d_model.
template <typename T>
Tensor<T> project_features(const Tensor<T>& frames, const EncoderWeights<T>& w, const EncoderConfig& c) {
  const T eps = static_cast<T>(c.layer_norm_eps);
  const Tensor<T> normed = numkit::layer_norm(frames, w.get("feature_projection.layer_norm.weight"),
                                              w.get("feature_projection.layer_norm.bias"), eps);
  return numkit::linear(normed, w.get("feature_projection.weight"), &w.get("feature_projection.bias"));
}

// Same-padded grouped conv over time followed by GELU; returns [T×d].
template <typename T>
Tensor<T> positional_embedding(const Tensor<T>& h, const EncoderWeights<T>& w, const EncoderConfig& c) {
  const std::size_t frames = h.rows();
  const std::size_t k = c.pos_conv_kernel;
  const Tensor<T> padded = numkit::pad_cols(numkit::transpose(h), k / 2, k / 2);
  Tensor<T> pos = numkit::conv1d(padded, w.get("encoder.pos_conv.weight"), 1, c.pos_conv_groups,
                                 &w.get("encoder.pos_conv.bias"));
  if (pos.cols() != frames) pos = numkit::slice_cols(pos, c.pos_conv_trim_even ? 0 : 1, frames);
  return numkit::transpose(numkit::gelu(pos, c.gelu));
}

// One transformer block (0-based `block`) applied to h [T×d].
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& input, const EncoderWeights<T>& w, const EncoderConfig& c,
                            std::size_t block, const lora::AdapterSet<T>* adapters = nullptr) {
  const T eps = static_cast<T>(c.layer_norm_eps);
  const std::string p = layer_prefix(block);
  const auto& ln_g = w.get(p + "layer_norm.weight");
  const auto& ln_b = w.get(p + "layer_norm.bias");
  const auto& fln_g = w.get(p + "final_layer_norm.weight");
  const auto& fln_b = w.get(p + "final_layer_norm.bias");
  const auto& enc_g = w.get("encoder.layer_norm.weight");
  const auto& enc_b = w.get("encoder.layer_norm.bias");
  const auto attn_w = AttentionWeights<T>::from(w, block);
  const auto* q_adapter = lora::find_adapter(adapters, block + 1, lora::Projection::q);
  const auto* v_adapter = lora::find_adapter(adapters, block + 1, lora::Projection::v);
  auto ffn = [&](const Tensor<T>& x) {
    const Tensor<T> hidden = numkit::gelu(numkit::linear(x, w.get(p + "feed_forward.intermediate_dense.weight"),
                                                         &w.get(p + "feed_forward.intermediate_dense.bias")),
                                          c.gelu);
    return numkit::linear(hidden, w.get(p + "feed_forward.output_dense.weight"),
                          &w.get(p + "feed_forward.output_dense.bias"));
  };

  Tensor<T> h = input;
  if (block == 0) {
    h = numkit::add(h, positional_embedding(h, w, c));
    if (c.layernorm_placement == LayerNormPlacement::post) h = numkit::layer_norm(h, enc_g, enc_b, eps);
  }
  if (c.layernorm_placement == LayerNormPlacement::post) {
    h = numkit::layer_norm(numkit::add(h, attention(h, attn_w, c.n_heads, q_adapter, v_adapter)), ln_g, ln_b, eps);
    h = numkit::layer_norm(numkit::add(h, ffn(h)), fln_g, fln_b, eps);
  } else {
    h = numkit::add(h, attention(numkit::layer_norm(h, ln_g, ln_b, eps), attn_w, c.n_heads, q_adapter, v_adapter));
    h = numkit::add(h, ffn(numkit::layer_norm(h, fln_g, fln_b, eps)));
    if (block + 1 == c.n_transformer_layers) h = numkit::layer_norm(h, enc_g, enc_b, eps);
  }
  return h;
}

inline void validate_taps(const std::set<std::size_t>& taps, const EncoderConfig& c) {
  for (std::size_t t : taps) {
    if (t > c.n_transformer_layers) {
      throw ValidationError("tap " + std::to_string(t) + " outside layers 0.." + std::to_string(c.n_transformer_layers));
    }
  }
}

inline void require_usable_length(std::size_t length, const EncoderConfig& c) {
  if (frame_count(length, c.conv_layers) == 0) {
    throw InputTooShortError("waveform of " + std::to_string(length) + " samples is too short; the encoder needs at least " +
                             std::to_string(min_input_length(c.conv_layers)) + " samples");
  }
}

// Runs the encoder on one mono waveform and returns the requested hidden
// states. Computation stops at the deepest requested tap.
template <typename T>
HiddenStates<T> encode(const Tensor<T>& waveform, const EncoderWeights<T>& w, const EncoderConfig& c,
                       const std::set<std::size_t>& taps, const lora::AdapterSet<T>* adapters = nullptr) {
  HiddenStates<T> out;
  validate_taps(taps, c);
  if (taps.empty()) return out;
  require_usable_length(waveform.size(), c);
  Tensor<T> h = project_features(extract_conv_features(waveform, w, c), w, c);
  if (taps.count(0)) out.emplace(0, h);
  const std::size_t deepest = *taps.rbegin();
  for (std::size_t layer = 1; layer <= deepest; ++layer) {
    h = transformer_block(h, w, c, layer - 1, adapters);
    if (taps.count(layer)) out.emplace(layer, h);
  }
  return out;
}

// encode() at the requested precision on float weights; results widened to double.
inline HiddenStates<double> encode_at(Precision precision, const Tensord& waveform, const EncoderWeights<float>& w32,
                                      const EncoderWeights<double>* w64, const EncoderConfig& c,
                                      const std::set<std::size_t>& taps) {
  HiddenStates<double> out;
  if (precision == Precision::f64) {
    if (w64) return encode(waveform, *w64, c, taps);
    return encode(waveform, w32.cast<double>(), c, taps);
  }
  for (auto& [layer, h] : encode(waveform.cast<float>(), w32, c, taps)) out.emplace(layer, h.cast<double>());
  return out;
}

}  // namespace xmodal::encoder
