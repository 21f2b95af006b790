#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::ingest {

// One pre-cut window: data is [channels x samples].
struct WindowRecord {
  Tensord data;
  double sample_rate = 0.0;
  int label = 0;
  std::string subject;

  std::size_t channels() const { return data.rows(); }
  std::size_t samples() const { return data.cols(); }
};

enum class ChannelStrategy { per_axis, magnitude };

inline const char* strategy_name(ChannelStrategy s) { return s == ChannelStrategy::per_axis ? "per-axis" : "magnitude"; }

inline ChannelStrategy parse_strategy(const std::string& s) {
  if (s == "per-axis" || s == "per_axis") return ChannelStrategy::per_axis;
  if (s == "magnitude") return ChannelStrategy::magnitude;
  throw ConfigError("unknown channel strategy '" + s + "' (expected per-axis or magnitude)");
}

inline constexpr double kStandardizeEps = 1e-8;

// Linear interpolation between consecutive samples; the last segment repeats
// the final value. [0, 2] x2 -> [0, 1, 2, 2].
inline WindowRecord upsample(const WindowRecord& w, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample factor must be at least 1");
  if (factor == 1) return w;
  const std::size_t n = w.samples();
  WindowRecord out = w;
  out.sample_rate = w.sample_rate * double(factor);
  out.data = Tensord({w.channels(), n * factor});
  for (std::size_t c = 0; c < w.channels(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = w.data.at(c, i);
      const double x1 = i + 1 < n ? w.data.at(c, i + 1) : x0;
      for (std::size_t j = 0; j < factor; ++j) {
        out.data.at(c, i * factor + j) = x0 + (x1 - x0) * double(j) / double(factor);
      }
    }
  }
  return out;
}

// Per-channel zero mean, unit population variance. Channels with variance
// below kStandardizeEps become all zeros.
inline WindowRecord standardize(const WindowRecord& w) {
  WindowRecord out = w;
  const std::size_t n = w.samples();
  for (std::size_t c = 0; c < w.channels(); ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += w.data.at(c, i);
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = w.data.at(c, i) - mean;
      var += d * d;
    }
    var /= double(n);
    const double inv = var < kStandardizeEps ? 0.0 : 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) out.data.at(c, i) = (w.data.at(c, i) - mean) * inv;
  }
  return out;
}

// Mono waveforms handed to the encoder: one per channel, or a single
// Euclidean magnitude across channels.
inline std::vector<Tensord> channelize(const WindowRecord& w, ChannelStrategy strategy) {
  std::vector<Tensord> out;
  const std::size_t n = w.samples();
  if (strategy == ChannelStrategy::per_axis) {
    for (std::size_t c = 0; c < w.channels(); ++c) {
      const auto row = w.data.row(c);
      out.emplace_back(Shape{n}, std::vector<double>(row.begin(), row.end()));
    }
    return out;
  }
  Tensord mag({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.channels(); ++c) s += w.data.at(c, i) * w.data.at(c, i);
    mag[i] = std::sqrt(s);
  }
  out.push_back(std::move(mag));
  return out;
}

inline std::size_t waveform_count(std::size_t n_channels, ChannelStrategy s) {
  return s == ChannelStrategy::per_axis ? n_channels : 1;
}

}  // namespace xmodal::ingest
