#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <string>

#include "xmodal/encoder/config.hpp"
#include "xmodal/numkit/rng.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::encoder {

// Named tensor map for one encoder. Immutable once constructed; copies share
// nothing, so a loaded set can be handed to many readers.
template <typename T>
class EncoderWeights {
 public:
  using TensorMap = std::map<std::string, Tensor<T>>;

  EncoderWeights() = default;
  explicit EncoderWeights(TensorMap tensors) : tensors_(std::move(tensors)) {}

  const Tensor<T>& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw MissingWeightError("missing weight tensor '" + name + "'");
    return it->second;
  }
  const Tensor<T>* find(const std::string& name) const {
    auto it = tensors_.find(name);
    return it == tensors_.end() ? nullptr : &it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const TensorMap& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }

  template <typename U>
  EncoderWeights<U> cast() const {
    typename EncoderWeights<U>::TensorMap out;
    for (const auto& [name, t] : tensors_) out.emplace(name, t.template cast<U>());
    return EncoderWeights<U>(std::move(out));
  }

  // Checks every tensor the config requires is present with its exact shape.
  void validate_against(const EncoderConfig& config) const {
    for (const auto& [name, shape] : required_tensors(config)) {
      const Tensor<T>& t = get(name);
      if (t.shape() != shape) {
        throw CorruptCheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                                     ", expected " + shape_string(shape));
      }
    }
  }

  // FNV-1a over names, shapes and value bytes; used to prove weights were not mutated.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, t] : tensors_) {
      mix(name.data(), name.size());
      for (std::size_t d : t.shape()) mix(&d, sizeof d);
      mix(t.data(), t.size() * sizeof(T));
    }
    return h;
  }

 private:
  TensorMap tensors_;
};

// Random weights for a config: matrices and kernels drawn from
// N(0, gain²/fan_in), unit norm gains, zero biases.
template <typename T>
EncoderWeights<T> random_weights(const EncoderConfig& config, std::uint64_t seed, double gain = 1.0) {
  config.validate();
  numkit::Rng rng(seed);
  typename EncoderWeights<T>::TensorMap map;
  for (const auto& [name, shape] : required_tensors(config)) {
    Tensor<T> t(shape);
    const bool is_norm = name.find("norm") != std::string::npos;
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (is_norm && !is_bias) {
      for (auto& v : t.values()) v = T(1);
    } else if (!is_bias) {
      const double fan_in = double(t.size()) / double(shape.front());
      const double stddev = gain / std::sqrt(fan_in);
      for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    }
    map.emplace(name, std::move(t));
  }
  return EncoderWeights<T>(std::move(map));
}

}  // namespace xmodal::encoder
