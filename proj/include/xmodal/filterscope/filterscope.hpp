#pragma once

// First-layer conv filter inspection: rank by L2 norm, magnitude response,
// coarse band labels, CSV/SVG output.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/numkit/fft.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::filterscope {

enum class Band { lowpass, highpass, bandpass, broadband };

inline const char* band_name(Band b) {
  switch (b) {
    case Band::lowpass: return "lowpass";
    case Band::highpass: return "highpass";
    case Band::bandpass: return "bandpass";
    default: return "broadband";
  }
}

// Positions are fractions of the way from DC to Nyquist; ratios are relative
// to the peak magnitude.
struct Thresholds {
  double low_position = 0.1;
  double high_position = 0.9;
  double tail_ratio = 0.3;
  double edge_ratio = 0.5;

  // "low,high,tail,edge"
  static Thresholds parse(const std::string& text) {
    Thresholds t;
    std::vector<double> v;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("bad threshold value '" + item + "'");
      }
    }
    if (v.size() != 4) throw ConfigError("--thresholds expects low,high,tail,edge (4 numbers)");
    t.low_position = v[0];
    t.high_position = v[1];
    t.tail_ratio = v[2];
    t.edge_ratio = v[3];
    if (!(0 <= t.low_position && t.low_position < t.high_position && t.high_position <= 1)) {
      throw ConfigError("band positions must satisfy 0 <= low < high <= 1");
    }
    return t;
  }

  nlohmann::json to_json() const {
    return {{"low_position", low_position}, {"high_position", high_position}, {"tail_ratio", tail_ratio},
            {"edge_ratio", edge_ratio}};
  }
};

inline double l2_norm(std::span<const double> taps) {
  double s = 0;
  for (double v : taps) s += v * v;
  return std::sqrt(s);
}

// Filters of a [C x 1 x K] (or [C x K]) weight, top_k by norm, descending,
// ties to the lower index.
inline std::vector<std::size_t> select_filters(const Tensord& weights, std::size_t top_k) {
  if (weights.rank() < 2 || (weights.rank() == 3 && weights.dim(1) != 1)) {
    throw ShapeError("expected first-layer conv weights [C x 1 x K], got " + shape_string(weights.shape()));
  }
  const std::size_t c = weights.dim(0), k = weights.size() / c;
  if (top_k > c) throw ValidationError("top-k " + std::to_string(top_k) + " exceeds the " + std::to_string(c) + " filters");
  std::vector<double> norms(c);
  for (std::size_t i = 0; i < c; ++i) norms[i] = l2_norm(std::span<const double>(weights.data() + i * k, k));
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  order.resize(top_k);
  return order;
}

inline std::vector<numkit::Complex> padded_dft(std::span<const double> taps, std::size_t n_fft) {
  if (!numkit::is_power_of_two(n_fft)) throw ConfigError("n_fft must be a power of two, got " + std::to_string(n_fft));
  if (n_fft < taps.size()) {
    throw ConfigError("n_fft " + std::to_string(n_fft) + " is shorter than the " + std::to_string(taps.size()) + " taps");
  }
  std::vector<numkit::Complex> x(n_fft);
  std::copy(taps.begin(), taps.end(), x.begin());
  numkit::fft_pow2(x);
  return x;
}

// |DFT| of the zero-padded taps at bins 0..n_fft/2.
inline std::vector<double> frequency_response(std::span<const double> taps, std::size_t n_fft = 512) {
  const auto x = padded_dft(taps, n_fft);
  std::vector<double> mag(n_fft / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(x[k]);
  return mag;
}

inline Band classify_response(std::span<const double> spectrum, const Thresholds& t = {}) {
  if (spectrum.empty()) throw ValidationError("cannot classify an empty spectrum");
  const std::size_t n = spectrum.size();
  const std::size_t peak_bin = static_cast<std::size_t>(std::max_element(spectrum.begin(), spectrum.end()) - spectrum.begin());
  const double peak = spectrum[peak_bin];
  if (n == 1 || !(peak > 0)) return Band::broadband;
  auto position = [&](std::size_t bin) { return double(bin) / double(n - 1); };
  double low_tail = 0, high_tail = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (position(b) <= t.low_position) low_tail = std::max(low_tail, spectrum[b]);
    if (position(b) >= t.high_position) high_tail = std::max(high_tail, spectrum[b]);
  }
  const double p = position(peak_bin);
  if (p <= t.low_position && high_tail < t.tail_ratio * peak) return Band::lowpass;
  if (p >= t.high_position && low_tail < t.tail_ratio * peak) return Band::highpass;
  if (p > t.low_position && p < t.high_position && low_tail < t.edge_ratio * peak && high_tail < t.edge_ratio * peak) {
    return Band::bandpass;
  }
  return Band::broadband;
}

struct FilterReport {
  std::size_t index = 0;
  double norm = 0.0;
  std::vector<double> taps;
  std::vector<double> response;  // n_fft/2 + 1 bins
  Band band = Band::broadband;

  nlohmann::json to_json() const {
    return {{"filter", index}, {"l2_norm", norm}, {"taps", taps}, {"band", band_name(band)},
            {"peak_frequency", double(std::max_element(response.begin(), response.end()) - response.begin()) /
                                   double(std::max<std::size_t>(response.size() - 1, 1)) * 0.5}};
  }
};

// Reports for `indices` (typically select_filters output, or a manual list).
inline std::vector<FilterReport> analyze_filters(const Tensord& weights, const std::vector<std::size_t>& indices,
                                                 std::size_t n_fft = 512, const Thresholds& t = {}) {
  const std::size_t c = weights.dim(0), k = weights.size() / c;
  std::vector<FilterReport> out;
  for (std::size_t i : indices) {
    if (i >= c) throw ValidationError("filter index " + std::to_string(i) + " out of range (" + std::to_string(c) + " filters)");
    FilterReport r;
    r.index = i;
    r.taps.assign(weights.data() + i * k, weights.data() + (i + 1) * k);
    r.norm = l2_norm(r.taps);
    r.response = frequency_response(r.taps, n_fft);
    r.band = classify_response(r.response, t);
    out.push_back(std::move(r));
  }
  return out;
}

// filter,bin,frequency,magnitude with frequency in cycles/sample (0..0.5).
inline std::string responses_csv(const std::vector<FilterReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "filter,bin,frequency,magnitude\n";
  for (const auto& r : reports) {
    const std::size_t bins = r.response.size();
    for (std::size_t b = 0; b < bins; ++b) {
      out << r.index << ',' << b << ',' << 0.5 * double(b) / double(std::max<std::size_t>(bins - 1, 1)) << ','
          << r.response[b] << '\n';
    }
  }
  return out.str();
}

// One panel of overlaid responses, each scaled to its own peak.
inline std::string responses_svg(const std::vector<FilterReport>& reports, const std::string& title = "") {
  const double w = 640, h = 360, left = 50, right = 150, top = 30, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream out;
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) out << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw, ph);
  out << buf;
  for (int i = 0; i <= 5; ++i) {
    const double x = left + pw * i / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.1f</text>\n", x, top + ph + 15, 0.1 * i);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">frequency (cycles/sample)</text>\n",
                left + pw / 2, h - 8);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"12\" y=\"%.1f\" transform=\"rotate(-90 12 %.1f)\" text-anchor=\"middle\">relative magnitude</text>\n",
                top + ph / 2, top + ph / 2);
  out << buf;
  for (std::size_t f = 0; f < reports.size(); ++f) {
    const auto& r = reports[f];
    const double peak = *std::max_element(r.response.begin(), r.response.end());
    const char* color = colors[f % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t bins = r.response.size();
    for (std::size_t b = 0; b < bins; ++b) {
      const double x = left + pw * double(b) / double(std::max<std::size_t>(bins - 1, 1));
      const double y = top + ph * (1.0 - (peak > 0 ? r.response[b] / peak : 0.0));
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", b ? " " : "", x, y);
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">filter %zu (%s)</text>\n", left + pw + 10,
                  top + 14.0 * double(f + 1), color, r.index, band_name(r.band));
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace xmodal::filterscope
