#pragma once

// Differentiable (64-bit) mirror of the transformer stack. Uses the same
// kernels in the same order as encoder.hpp, so forward values agree exactly
// with the plain path; used for adapter training and gradient checks.

#include <cmath>
#include <optional>
#include <vector>

#include "xmodal/encoder/encoder.hpp"
#include "xmodal/numkit/autodiff.hpp"

namespace xmodal::encoder {

struct TapedAdapter {
  std::size_t layer = 1;
  lora::Projection projection = lora::Projection::q;
  ad::Var a;
  ad::Var b;
  double scaling = 1.0;
};

inline const TapedAdapter* find_taped_adapter(const std::vector<TapedAdapter>* adapters, std::size_t layer,
                                              lora::Projection projection) {
  if (!adapters) return nullptr;
  for (const auto& a : *adapters) {
    if (a.layer == layer && a.projection == projection) return &a;
  }
  return nullptr;
}

inline ad::Var taped_project(ad::Tape& tape, ad::Var x, const Tensord& weight, const Tensord& bias,
                             const TapedAdapter* adapter) {
  ad::Var y = ad::linear(tape, x, tape.constant_ref(weight), tape.constant_ref(bias));
  if (!adapter) return y;
  ad::Var low = ad::matmul_nt(tape, ad::matmul_nt(tape, x, adapter->a), adapter->b);
  return ad::add(tape, y, ad::scale(tape, low, adapter->scaling));
}

inline ad::Var taped_attention(ad::Tape& tape, ad::Var x, const AttentionWeights<double>& w, std::size_t n_heads,
                               const TapedAdapter* q_adapter = nullptr, const TapedAdapter* v_adapter = nullptr) {
  const std::size_t d = tape.value(x).cols();
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t head_dim = d / n_heads;
  ad::Var q = taped_project(tape, x, *w.q_weight, *w.q_bias, q_adapter);
  ad::Var k = ad::linear(tape, x, tape.constant_ref(*w.k_weight), tape.constant_ref(*w.k_bias));
  ad::Var v = taped_project(tape, x, *w.v_weight, *w.v_bias, v_adapter);
  const double inv_sqrt = 1.0 / std::sqrt(double(head_dim));
  std::vector<ad::Var> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    ad::Var qh = ad::slice_cols(tape, q, h * head_dim, head_dim);
    ad::Var kh = ad::slice_cols(tape, k, h * head_dim, head_dim);
    ad::Var vh = ad::slice_cols(tape, v, h * head_dim, head_dim);
    ad::Var probs = ad::softmax(tape, ad::scale(tape, ad::matmul_nt(tape, qh, kh), inv_sqrt));
    heads.push_back(ad::matmul(tape, probs, vh));
  }
  return ad::linear(tape, ad::concat_cols(tape, heads), tape.constant_ref(*w.out_weight),
                    tape.constant_ref(*w.out_bias));
}

inline ad::Var taped_positional_embedding(ad::Tape& tape, ad::Var h, const EncoderWeights<double>& w,
                                          const EncoderConfig& c) {
  const std::size_t frames = tape.value(h).rows();
  const std::size_t k = c.pos_conv_kernel;
  ad::Var padded = ad::pad_cols(tape, ad::transpose(tape, h), k / 2, k / 2);
  ad::Var pos = ad::conv1d(tape, padded, tape.constant_ref(w.get("encoder.pos_conv.weight")), 1, c.pos_conv_groups,
                           tape.constant_ref(w.get("encoder.pos_conv.bias")));
  if (tape.value(pos).cols() != frames) pos = ad::slice_cols(tape, pos, c.pos_conv_trim_even ? 0 : 1, frames);
  return ad::transpose(tape, ad::gelu(tape, pos, c.gelu));
}

inline ad::Var taped_transformer_block(ad::Tape& tape, ad::Var input, const EncoderWeights<double>& w,
                                       const EncoderConfig& c, std::size_t block,
                                       const std::vector<TapedAdapter>* adapters = nullptr) {
  const double eps = static_cast<double>(c.layer_norm_eps);
  const std::string p = layer_prefix(block);
  auto ref = [&](const std::string& name) { return tape.constant_ref(w.get(name)); };
  auto norm = [&](ad::Var x, const std::string& name) {
    return ad::layer_norm(tape, x, ref(name + ".weight"), ref(name + ".bias"), eps);
  };
  auto ffn = [&](ad::Var x) {
    ad::Var hidden = ad::gelu(tape,
                              ad::linear(tape, x, ref(p + "feed_forward.intermediate_dense.weight"),
                                         ref(p + "feed_forward.intermediate_dense.bias")),
                              c.gelu);
    return ad::linear(tape, hidden, ref(p + "feed_forward.output_dense.weight"), ref(p + "feed_forward.output_dense.bias"));
  };
  const auto attn_w = AttentionWeights<double>::from(w, block);
  const auto* q_adapter = find_taped_adapter(adapters, block + 1, lora::Projection::q);
  const auto* v_adapter = find_taped_adapter(adapters, block + 1, lora::Projection::v);

  ad::Var h = input;
  if (block == 0) {
    h = ad::add(tape, h, taped_positional_embedding(tape, h, w, c));
    if (c.layernorm_placement == LayerNormPlacement::post) h = norm(h, "encoder.layer_norm");
  }
  if (c.layernorm_placement == LayerNormPlacement::post) {
    h = norm(ad::add(tape, h, taped_attention(tape, h, attn_w, c.n_heads, q_adapter, v_adapter)), p + "layer_norm");
    h = norm(ad::add(tape, h, ffn(h)), p + "final_layer_norm");
  } else {
    h = ad::add(tape, h, taped_attention(tape, norm(h, p + "layer_norm"), attn_w, c.n_heads, q_adapter, v_adapter));
    h = ad::add(tape, h, ffn(norm(h, p + "final_layer_norm")));
    if (block + 1 == c.n_transformer_layers) h = norm(h, "encoder.layer_norm");
  }
  return h;
}

}  // namespace xmodal::encoder
