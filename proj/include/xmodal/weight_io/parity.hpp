#pragma once

// Parity fixtures: a reference waveform plus reference hidden states at a
// few taps, stored as a container of kind parity_fixture. Tensors are
// "waveform" [L] and "layer.<i>" [T x d] (f32 or f64); metadata JSON holds
// {"producer": str, "tolerance": number, "taps": [int...]}.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/encoder/encoder.hpp"
#include "xmodal/weight_io/checkpoint.hpp"

namespace xmodal::weight_io {

struct ParityFixture {
  Tensord waveform;
  std::map<std::size_t, Tensord> layers;
  double tolerance = 1e-3;
  std::string producer;
};

struct LayerDeviation {
  std::size_t layer = 0;
  double max_abs_deviation = 0.0;
  bool passed = false;
};

struct ParityReport {
  std::vector<LayerDeviation> layers;
  double tolerance = 0.0;
  std::string producer;
  encoder::Precision precision = encoder::Precision::f32;

  bool passed() const {
    return std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.passed; });
  }
  double max_abs_deviation() const {
    double m = 0.0;
    for (const auto& l : layers) m = std::max(m, l.max_abs_deviation);
    return m;
  }
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["producer"] = producer;
    j["tolerance"] = tolerance;
    j["precision"] = encoder::precision_name(precision);
    j["passed"] = passed();
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
      j["layers"].push_back({{"layer", l.layer}, {"max_abs_deviation", l.max_abs_deviation}, {"passed", l.passed}});
    }
    return j;
  }
};

inline Container fixture_container(const ParityFixture& f, DType dtype = DType::f64) {
  Container c;
  c.kind = ContainerKind::parity_fixture;
  nlohmann::json taps = nlohmann::json::array();
  for (const auto& [layer, h] : f.layers) taps.push_back(layer);
  c.metadata = nlohmann::json{{"producer", f.producer}, {"tolerance", f.tolerance}, {"taps", taps}}.dump();
  auto put = [&](const std::string& name, const Tensord& t) {
    if (dtype == DType::f32) c.add(name, t.cast<float>());
    else c.add(name, t);
  };
  put("waveform", f.waveform.reshaped({f.waveform.size()}));
  for (const auto& [layer, h] : f.layers) put("layer." + std::to_string(layer), h);
  return c;
}

inline void save_fixture(const ParityFixture& f, const std::filesystem::path& path, DType dtype = DType::f64) {
  write_container(path, fixture_container(f, dtype));
}

inline ParityFixture fixture_from_container(const Container& c) {
  if (c.kind != ContainerKind::parity_fixture) throw FormatError("container is not a parity fixture");
  if (!c.config.empty()) throw FormatError("parity fixture has an unexpected config block");
  const auto meta = nlohmann::json::parse(c.metadata, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) throw CorruptCheckpointError("parity fixture metadata is not a JSON object");
  for (const auto& [key, value] : meta.items()) {
    if (key != "producer" && key != "tolerance" && key != "taps") throw FormatError("unknown fixture metadata field '" + key + "'");
  }
  ParityFixture f;
  try {
    f.producer = meta.at("producer").get<std::string>();
    f.tolerance = meta.at("tolerance").get<double>();
    std::set<std::string> expected{"waveform"};
    for (const auto& tap : meta.at("taps")) {
      const std::size_t layer = tap.get<std::size_t>();
      const std::string name = "layer." + std::to_string(layer);
      expected.insert(name);
      const Tensord h = c.get(name).as<double>();
      if (h.shape().size() != 2) throw CorruptCheckpointError("fixture tensor '" + name + "' is not a matrix");
      f.layers.emplace(layer, h);
    }
    for (const auto& t : c.tensors) {
      if (!expected.count(t.name)) throw FormatError("unexpected fixture tensor '" + t.name + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("parity fixture metadata: ") + e.what());
  }
  f.waveform = c.get("waveform").as<double>();
  return f;
}

inline ParityFixture load_fixture(const std::filesystem::path& path) { return fixture_from_container(read_container(path)); }

// Builds a fixture by running this toolkit's own encoder.
inline ParityFixture make_fixture(const encoder::EncoderConfig& config, const encoder::EncoderWeights<float>& weights,
                                  const Tensord& waveform, const std::set<std::size_t>& taps,
                                  encoder::Precision precision, double tolerance, std::string producer) {
  ParityFixture f;
  f.waveform = waveform.reshaped({waveform.size()});
  f.tolerance = tolerance;
  f.producer = std::move(producer);
  for (auto& [layer, h] : encoder::encode_at(precision, f.waveform, weights, nullptr, config, taps)) {
    f.layers.emplace(layer, std::move(h));
  }
  return f;
}

// Re-runs the encoder on the fixture input and compares every stored tap.
// Deviations beyond tolerance are reported, not thrown.
inline ParityReport verify_parity(const encoder::EncoderConfig& config, const encoder::EncoderWeights<float>& weights,
                                  const ParityFixture& fixture, encoder::Precision precision = encoder::Precision::f32) {
  const std::size_t frames = encoder::frame_count(fixture.waveform.size(), config.conv_layers);
  if (frames == 0) {
    throw FixtureIncompatibleError("fixture waveform of " + std::to_string(fixture.waveform.size()) +
                                   " samples yields no frames under this checkpoint's conv spec");
  }
  std::set<std::size_t> taps;
  for (const auto& [layer, h] : fixture.layers) {
    if (layer > config.n_transformer_layers) {
      throw FixtureIncompatibleError("fixture tap " + std::to_string(layer) + " exceeds the checkpoint's " +
                                     std::to_string(config.n_transformer_layers) + " layers");
    }
    if (h.rows() != frames || h.cols() != config.d_model) {
      throw FixtureIncompatibleError("fixture layer " + std::to_string(layer) + " has shape " + shape_string(h.shape()) +
                                     " but the checkpoint produces [" + std::to_string(frames) + "x" +
                                     std::to_string(config.d_model) + "]");
    }
    taps.insert(layer);
  }
  ParityReport report;
  report.tolerance = fixture.tolerance;
  report.producer = fixture.producer;
  report.precision = precision;
  const auto hidden = encoder::encode_at(precision, fixture.waveform, weights, nullptr, config, taps);
  for (const auto& [layer, reference] : fixture.layers) {
    const double dev = max_abs_diff(hidden.at(layer), reference);
    report.layers.push_back({layer, dev, dev <= fixture.tolerance});
  }
  return report;
}

}  // namespace xmodal::weight_io
