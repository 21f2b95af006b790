#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/kernels.hpp"
#include "xmodal/numkit/rng.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::lora {

enum class Projection { q, v };

inline const char* projection_name(Projection p) { return p == Projection::q ? "q" : "v"; }

inline Projection parse_projection(const std::string& s) {
  if (s == "q" || s == "Q") return Projection::q;
  if (s == "v" || s == "V") return Projection::v;
  throw ConfigError("unknown LoRA target projection '" + s + "' (expected q or v)");
}

// Low-rank update on one attention projection: W x + (alpha / r) · B (A x).
// `layer` is the 1-based transformer layer (hidden-state index) it adapts.
template <typename T>
struct LoraAdapter {
  std::size_t layer = 1;
  Projection projection = Projection::q;
  Tensor<T> a;  // [r × d_in]
  Tensor<T> b;  // [d_out × r]
  double alpha = 16.0;

  std::size_t rank() const { return a.dim(0); }
  std::size_t d_in() const { return a.dim(1); }
  std::size_t d_out() const { return b.dim(0); }
  T scaling() const { return static_cast<T>(alpha / double(rank())); }
  std::size_t parameter_count() const { return a.size() + b.size(); }

  void validate() const {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("LoRA factors must be matrices");
    if (b.dim(1) != a.dim(0)) {
      throw ShapeError("LoRA factor ranks differ: A " + shape_string(a.shape()) + ", B " + shape_string(b.shape()));
    }
    const std::size_t r = rank();
    if (r < 1 || r > std::min(d_in(), d_out())) {
      throw ConfigError("LoRA rank " + std::to_string(r) + " outside [1, min(d_in, d_out)]");
    }
  }
};

// Fresh adapter: A ~ N(0, 0.02²) from `seed`, B = 0 so the adapted projection
// starts out identical to the base one.
template <typename T>
LoraAdapter<T> make_adapter(std::size_t layer, Projection projection, std::size_t d_in, std::size_t d_out,
                            std::size_t rank, double alpha, std::uint64_t seed, double init_std = 0.02) {
  LoraAdapter<T> adapter{layer, projection, Tensor<T>({rank, d_in}), Tensor<T>({d_out, rank}), alpha};
  numkit::Rng rng(seed);
  for (auto& v : adapter.a.values()) v = static_cast<T>(rng.normal(0.0, init_std));
  adapter.validate();
  return adapter;
}

// Closed-form parameter count of one adapted projection.
constexpr std::size_t adapter_parameter_count(std::size_t rank, std::size_t d_in, std::size_t d_out) {
  return rank * (d_in + d_out);
}

// Row form of y = W x + (alpha / r) B A x for a batch x [N × d_in].
template <typename T>
Tensor<T> adapted_forward(const Tensor<T>& x, const Tensor<T>& weight, const LoraAdapter<T>& adapter,
                          const Tensor<T>* bias = nullptr) {
  adapter.validate();
  if (weight.rank() != 2 || weight.dim(0) != adapter.d_out() || weight.dim(1) != adapter.d_in()) {
    throw ShapeError("LoRA adapter " + shape_string(adapter.b.shape()) + "·" + shape_string(adapter.a.shape()) +
                     " does not fit weight " + shape_string(weight.shape()));
  }
  Tensor<T> y = numkit::linear(x, weight, bias);
  const Tensor<T> low = numkit::matmul_nt(numkit::matmul_nt(x, adapter.a), adapter.b);
  const T s = adapter.scaling();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * low[i];
  return y;
}

// W' = W + (alpha / r) B A
template <typename T>
Tensor<T> merge(const Tensor<T>& weight, const LoraAdapter<T>& adapter) {
  adapter.validate();
  if (weight.rank() != 2 || weight.dim(0) != adapter.d_out() || weight.dim(1) != adapter.d_in()) {
    throw ShapeError("cannot merge adapter into weight " + shape_string(weight.shape()));
  }
  const Tensor<T> delta = numkit::matmul(adapter.b, adapter.a);
  Tensor<T> merged = weight;
  const T s = adapter.scaling();
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += s * delta[i];
  return merged;
}

template <typename T>
using AdapterSet = std::vector<LoraAdapter<T>>;

template <typename T>
const LoraAdapter<T>* find_adapter(const AdapterSet<T>* adapters, std::size_t layer, Projection projection) {
  if (!adapters) return nullptr;
  for (const auto& a : *adapters) {
    if (a.layer == layer && a.projection == projection) return &a;
  }
  return nullptr;
}

}  // namespace xmodal::lora
