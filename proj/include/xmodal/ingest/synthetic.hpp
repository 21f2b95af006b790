#pragma once

// Synthetic sinusoid datasets: one class per frequency, Gaussian noise,
// random phase. Used by tests and `xmodal init-toy`.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/ingest/manifest.hpp"
#include "xmodal/numkit/rng.hpp"

namespace xmodal::ingest {

struct SinusoidDatasetSpec {
  std::vector<double> frequencies{5.0, 20.0};
  std::size_t n_windows = 200;
  double sample_rate = 100.0;
  std::size_t window_samples = 200;
  std::size_t n_channels = 1;
  std::size_t n_subjects = 10;
  double noise_std = 0.3;
  std::size_t upsample = 2;
  bool standardize = true;
  ChannelStrategy channel_strategy = ChannelStrategy::per_axis;
  EvalScheme eval_scheme{EvalScheme::Type::kfold, 5};
  std::uint64_t seed = 0;
};

// Window i has class i % n_classes and subject (i / n_classes) % n_subjects.
inline std::vector<WindowRecord> sinusoid_windows(const SinusoidDatasetSpec& spec) {
  numkit::Rng rng(spec.seed);
  std::vector<WindowRecord> out;
  const std::size_t n_classes = spec.frequencies.size();
  for (std::size_t i = 0; i < spec.n_windows; ++i) {
    WindowRecord w;
    w.label = static_cast<int>(i % n_classes);
    w.subject = "s" + std::to_string((i / n_classes) % spec.n_subjects);
    w.sample_rate = spec.sample_rate;
    w.data = Tensord({spec.n_channels, spec.window_samples});
    const double f = spec.frequencies[i % n_classes];
    for (std::size_t c = 0; c < spec.n_channels; ++c) {
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t t = 0; t < spec.window_samples; ++t) {
        const double time = double(t) / spec.sample_rate;
        w.data.at(c, t) = std::sin(2.0 * std::numbers::pi * f * time + phase) + rng.normal(0.0, spec.noise_std);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

// Writes data.f32 (all windows back to back) and manifest.json into `dir`;
// returns the manifest path.
inline std::filesystem::path write_sinusoid_dataset(const std::filesystem::path& dir, const SinusoidDatasetSpec& spec) {
  std::filesystem::create_directories(dir);
  const auto windows = sinusoid_windows(spec);
  weight_io::ByteWriter blob;
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json labels = nlohmann::json::array();
  for (double f : spec.frequencies) {
    std::ostringstream name;
    name << f << "hz";
    labels.push_back(name.str());
  }
  for (const auto& w : windows) {
    records.push_back({{"file", "data.f32"},
                       {"offset", blob.size()},
                       {"label", w.label},
                       {"subject", w.subject}});
    for (double v : w.data.values()) blob.f32(static_cast<float>(v));
  }
  weight_io::write_file_atomic(dir / "data.f32", blob.bytes());
  nlohmann::json manifest{{"name", "synthetic-sinusoids"},
                          {"sample_rate", spec.sample_rate},
                          {"window_samples", spec.window_samples},
                          {"n_channels", spec.n_channels},
                          {"labels", labels},
                          {"eval_scheme", spec.eval_scheme.to_json()},
                          {"preprocess",
                           {{"upsample", spec.upsample},
                            {"standardize", spec.standardize},
                            {"channel_strategy", strategy_name(spec.channel_strategy)}}},
                          {"data_format", "f32"},
                          {"records", records}};
  const auto path = dir / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << "\n";
  return path;
}

}  // namespace xmodal::ingest
