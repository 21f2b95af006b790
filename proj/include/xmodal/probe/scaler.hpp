#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::probe {

// Per-dimension z-score fitted on a subset of rows. `fitted_on` keeps the
// row indices used, so a report can show the statistics never saw test rows.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / std, or 0 for constant dimensions
  std::vector<std::size_t> fitted_on;

  bool empty() const { return mean.empty(); }

  static FeatureScaler fit(const Tensord& x, std::span<const std::size_t> rows) {
    if (rows.empty()) throw ValidationError("cannot fit a feature scaler on zero rows");
    const std::size_t d = x.cols();
    FeatureScaler s;
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 0.0);
    s.fitted_on.assign(rows.begin(), rows.end());
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.at(r, j);
    for (auto& m : s.mean) m /= double(rows.size());
    std::vector<double> var(d, 0.0);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x.at(r, j) - s.mean[j];
        var[j] += diff * diff;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double v = var[j] / double(rows.size());
      s.scale[j] = v < 1e-12 ? 0.0 : 1.0 / std::sqrt(v);
    }
    return s;
  }

  Tensord transform(const Tensord& x) const {
    if (empty()) return x;
    if (x.cols() != mean.size()) {
      throw ShapeError("scaler fitted on " + std::to_string(mean.size()) + " dims applied to " + std::to_string(x.cols()));
    }
    Tensord out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < x.cols(); ++j) out.at(r, j) = (x.at(r, j) - mean[j]) * scale[j];
    return out;
  }
};

}  // namespace xmodal::probe
