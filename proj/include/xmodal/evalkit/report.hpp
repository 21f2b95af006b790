#pragma once

// Per-fold metrics, fold aggregates (mean and population std over folds) and
// per-layer sweeps, with JSON, CSV and text-table renderings.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace xmodal::evalkit {

struct FoldResult {
  std::string fold;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc;                 // empty when the test fold has one class
  std::vector<std::size_t> scaler_fitted_on;  // rows that fed the feature statistics
  std::string error;                          // non-empty when the cell failed

  bool ok() const { return error.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"fold", fold}, {"n_train", n_train}, {"n_test", n_test}};
    if (!ok()) {
      j["error"] = error;
      return j;
    }
    j["macro_f1"] = macro_f1;
    j["accuracy"] = accuracy;
    j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json();
    j["scaler_fitted_on"] = scaler_fitted_on;
    return j;
  }
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population std over folds
  std::size_t n = 0;

  static std::optional<Aggregate> of(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    Aggregate a;
    a.n = values.size();
    for (double v : values) a.mean += v;
    a.mean /= double(a.n);
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / double(a.n));
    return a;
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}, {"n_folds", n}}; }
};

inline nlohmann::json aggregate_json(const std::optional<Aggregate>& a) { return a ? a->to_json() : nlohmann::json(); }

struct MetricReport {
  nlohmann::json config;  // echo of probe, layer, pooling, strategy, seeds
  std::vector<FoldResult> folds;

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> out;
    for (const auto& f : folds) {
      if (!f.ok()) continue;
      if (metric == "macro_f1") out.push_back(f.macro_f1);
      else if (metric == "accuracy") out.push_back(f.accuracy);
      else if (metric == "auc" && f.auc) out.push_back(*f.auc);
    }
    return out;
  }
  std::optional<Aggregate> aggregate(const std::string& metric) const { return Aggregate::of(values(metric)); }
  std::size_t failed() const {
    std::size_t n = 0;
    for (const auto& f : folds) n += !f.ok();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json fj = nlohmann::json::array();
    for (const auto& f : folds) fj.push_back(f.to_json());
    return {{"config", config},
            {"folds", fj},
            {"aggregate",
             {{"macro_f1", aggregate_json(aggregate("macro_f1"))},
              {"accuracy", aggregate_json(aggregate("accuracy"))},
              {"auc", aggregate_json(aggregate("auc"))}}},
            {"failed_folds", failed()},
            {"conventions",
             {{"std", "population standard deviation over folds"},
              {"auc", "binary: positive-class probability; multiclass: macro one-vs-rest over classes present in the "
                      "test fold; ties count half; folds with one class are skipped"}}}};
  }
};

inline std::string format_cell(const std::optional<Aggregate>& a) {
  if (!a) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", a->mean, a->std);
  return buf;
}

struct SweepReport {
  nlohmann::json config;
  std::map<std::size_t, MetricReport> layers;

  nlohmann::json to_json() const {
    nlohmann::json lj = nlohmann::json::object();
    for (const auto& [l, r] : layers) lj[std::to_string(l)] = r.to_json();
    return {{"config", config}, {"layers", lj}};
  }

  // Plot-ready: one row per layer.
  std::string to_csv() const {
    std::ostringstream out;
    out << "layer,macro_f1_mean,macro_f1_std,auc_mean,auc_std,accuracy_mean,accuracy_std,folds,failed_folds\n";
    out.precision(17);
    for (const auto& [l, r] : layers) {
      out << l;
      for (const char* m : {"macro_f1", "auc", "accuracy"}) {
        const auto a = r.aggregate(m);
        if (a) out << ',' << a->mean << ',' << a->std;
        else out << ",,";
      }
      out << ',' << r.folds.size() << ',' << r.failed() << '\n';
    }
    return out.str();
  }

  std::string to_table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-7s %-16s %-16s %-16s\n", "layer", "macro-F1", "AUC", "accuracy");
    out << line;
    for (const auto& [l, r] : layers) {
      std::snprintf(line, sizeof line, "%-7zu %-17s %-17s %-17s\n", l, format_cell(r.aggregate("macro_f1")).c_str(),
                    format_cell(r.aggregate("auc")).c_str(), format_cell(r.aggregate("accuracy")).c_str());
      out << line;
    }
    return out.str();
  }
};

// Single-row table for one report (evaluate, baseline, LoRA).
inline std::string report_table(const std::string& label, const MetricReport& r) {
  char line[200];
  std::ostringstream out;
  std::snprintf(line, sizeof line, "%-24s %-16s %-16s %-16s\n", "model", "macro-F1", "AUC", "accuracy");
  out << line;
  std::snprintf(line, sizeof line, "%-24s %-17s %-17s %-17s\n", label.c_str(), format_cell(r.aggregate("macro_f1")).c_str(),
                format_cell(r.aggregate("auc")).c_str(), format_cell(r.aggregate("accuracy")).c_str());
  out << line;
  return out.str();
}

}  // namespace xmodal::evalkit
