#pragma once

// Hand-engineered window features for the random-forest baseline.
// Order, per channel c:
//   ch<c>.{mean,std,min,max,median,p25,p75,zcr,dominant_hz,spectral_entropy,spectral_energy}
// then corr.<i>.<j> for every channel pair i < j, then mag.mean, mag.std.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/ingest/window.hpp"
#include "xmodal/numkit/fft.hpp"

namespace xmodal::baseline {

inline constexpr const char* kChannelFeatures[] = {"mean",   "std", "min",         "max",
                                                   "median", "p25", "p75",         "zcr",
                                                   "dominant_hz", "spectral_entropy", "spectral_energy"};
inline constexpr std::size_t kPerChannel = std::size(kChannelFeatures);

inline std::vector<std::string> feature_names(std::size_t channels) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c)
    for (const char* f : kChannelFeatures) names.push_back("ch" + std::to_string(c) + "." + f);
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = i + 1; j < channels; ++j) names.push_back("corr." + std::to_string(i) + "." + std::to_string(j));
  names.push_back("mag.mean");
  names.push_back("mag.std");
  return names;
}

inline std::size_t feature_count(std::size_t channels) {
  return channels * kPerChannel + channels * (channels - 1) / 2 + 2;
}

namespace detail {

inline double mean_of(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / double(x.size());
}

// Population standard deviation.
inline double std_of(const std::vector<double>& x, double mean) {
  double s = 0;
  for (double v : x) s += (v - mean) * (v - mean);
  return std::sqrt(s / double(x.size()));
}

// Linear interpolation between order statistics (q in [0, 1]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  // rounding noise of a constant series is not a signal
  const double floor_a = 1e-24 * double(a.size()) * (1.0 + ma * ma);
  const double floor_b = 1e-24 * double(b.size()) * (1.0 + mb * mb);
  if (!(saa > floor_a && sbb > floor_b)) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace detail

// Spectral summary of one channel after removing its mean; uses the
// one-sided bins 0..n/2.
struct Spectrum {
  double dominant_hz = 0.0;
  double entropy = 0.0;  // Shannon entropy (nats) of the normalized power
  double energy = 0.0;   // sum of one-sided power / n
};

inline Spectrum spectrum_of(const std::vector<double>& x, double sample_rate) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) return {};
  const double m = detail::mean_of(x);
  std::vector<double> centered(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) centered[i] = x[i] - m;
  const auto bins = numkit::dft(centered);
  const std::size_t n = x.size(), half = n / 2;
  std::vector<double> power(half + 1);
  double total = 0;
  for (std::size_t k = 0; k <= half; ++k) {
    power[k] = std::norm(bins[k]);
    total += power[k];
  }
  Spectrum s;
  const std::size_t peak = static_cast<std::size_t>(std::max_element(power.begin(), power.end()) - power.begin());
  s.dominant_hz = double(peak) * sample_rate / double(n);
  s.energy = total / double(n);
  if (total > 0) {
    for (double p : power) {
      const double q = p / total;
      if (q > 0) s.entropy -= q * std::log(q);
    }
  }
  return s;
}

inline std::vector<double> engineered_features(const ingest::WindowRecord& w) {
  const std::size_t channels = w.channels(), n = w.samples();
  if (channels == 0 || n < 2) throw InputTooShortError("engineered features need at least 2 samples per window");
  if (!(w.sample_rate > 0)) throw ValidationError("engineered features need a positive sample rate");
  std::vector<std::vector<double>> series(channels);
  for (std::size_t c = 0; c < channels; ++c) series[c].assign(w.data.row(c).begin(), w.data.row(c).end());

  std::vector<double> out;
  out.reserve(feature_count(channels));
  for (const auto& x : series) {
    const double mean = detail::mean_of(x);
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    std::size_t crossings = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) crossings += (x[i] - mean) * (x[i + 1] - mean) < 0;
    const Spectrum s = spectrum_of(x, w.sample_rate);
    const double sd = sorted.front() == sorted.back() ? 0.0 : detail::std_of(x, mean);
    out.insert(out.end(), {mean, sd, sorted.front(), sorted.back(),
                           detail::quantile_sorted(sorted, 0.5), detail::quantile_sorted(sorted, 0.25),
                           detail::quantile_sorted(sorted, 0.75), double(crossings) / double(n - 1), s.dominant_hz,
                           s.entropy, s.energy});
  }
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = i + 1; j < channels; ++j) out.push_back(detail::pearson(series[i], series[j]));
  std::vector<double> mag(n, 0.0);
  for (const auto& x : series)
    for (std::size_t t = 0; t < n; ++t) mag[t] += x[t] * x[t];
  for (auto& v : mag) v = std::sqrt(v);
  const double mm = detail::mean_of(mag);
  out.push_back(mm);
  out.push_back(detail::std_of(mag, mm));
  for (auto& v : out)
    if (!std::isfinite(v)) v = 0.0;
  return out;
}

}  // namespace xmodal::baseline
