#pragma once

// Dataset manifests (JSON). See docs/manifest_format.md for the schema.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/ingest/window.hpp"
#include "xmodal/weight_io/container.hpp"

namespace xmodal::ingest {

enum class DataFormat { f32, csv, inline_values };

struct EvalScheme {
  enum class Type { loso, kfold } type = Type::kfold;
  std::size_t k = 5;

  nlohmann::json to_json() const {
    if (type == Type::loso) return {{"type", "loso"}};
    return {{"type", "kfold"}, {"k", k}};
  }
};

struct Preprocess {
  std::size_t upsample = 1;
  bool standardize = true;
  ChannelStrategy channel_strategy = ChannelStrategy::per_axis;

  nlohmann::json to_json() const {
    return {{"upsample", upsample}, {"standardize", standardize}, {"channel_strategy", strategy_name(channel_strategy)}};
  }
};

struct RecordEntry {
  DataFormat format = DataFormat::f32;
  std::string file;             // resolved path for f32/csv
  std::uint64_t offset = 0;     // byte offset into an f32 blob
  std::optional<Tensord> values;  // inline data [channels x samples]
  int label = 0;
  std::string subject;
};

struct DatasetManifest {
  std::string name;
  double sample_rate = 0.0;
  std::size_t window_samples = 0;
  std::size_t n_channels = 0;
  std::vector<std::string> labels;
  EvalScheme eval_scheme;
  Preprocess preprocess;
  std::vector<RecordEntry> records;
  std::string source;  // raw manifest text, used for fingerprints

  std::size_t size() const { return records.size(); }
  std::string fingerprint() const {
    return weight_io::hex64(weight_io::fnv1a64(
        std::span(reinterpret_cast<const std::uint8_t*>(source.data()), source.size())));
  }
  std::vector<int> label_ids() const {
    std::vector<int> out;
    for (const auto& r : records) out.push_back(r.label);
    return out;
  }
  std::vector<std::string> subjects() const {
    std::vector<std::string> out;
    for (const auto& r : records) out.push_back(r.subject);
    return out;
  }
};

// Thrown when a manifest fails validation; lists every offending record.
class ManifestError : public ValidationError {
 public:
  explicit ManifestError(std::vector<std::string> issues)
      : ValidationError(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = "manifest has " + std::to_string(issues.size()) + " problem(s):";
    for (const auto& i : issues) out += "\n  " + i;
    return out;
  }
  std::vector<std::string> issues_;
};

namespace detail {

inline DataFormat parse_format(const std::string& s) {
  if (s == "f32") return DataFormat::f32;
  if (s == "csv") return DataFormat::csv;
  throw ConfigError("unknown data_format '" + s + "' (expected f32 or csv)");
}

}  // namespace detail

inline DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using nlohmann::json;
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("manifest is not a JSON object");

  static const std::set<std::string> known{"name",        "sample_rate", "window_samples", "n_channels", "labels",
                                           "eval_scheme", "preprocess",  "data_format",    "records"};
  std::vector<std::string> issues;
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) issues.push_back("unknown manifest field '" + key + "'");
  }

  DatasetManifest m;
  m.source = text;
  DataFormat default_format = DataFormat::f32;
  try {
    m.name = j.at("name").get<std::string>();
    m.sample_rate = j.at("sample_rate").get<double>();
    m.window_samples = j.at("window_samples").get<std::size_t>();
    m.n_channels = j.at("n_channels").get<std::size_t>();
    m.labels = j.at("labels").get<std::vector<std::string>>();
    const auto& scheme = j.at("eval_scheme");
    const std::string type = scheme.at("type").get<std::string>();
    if (type == "loso") {
      m.eval_scheme.type = EvalScheme::Type::loso;
    } else if (type == "kfold") {
      m.eval_scheme.type = EvalScheme::Type::kfold;
      m.eval_scheme.k = scheme.value("k", std::size_t{5});
      if (m.eval_scheme.k < 2) issues.push_back("eval_scheme.k must be at least 2");
    } else {
      issues.push_back("unknown eval_scheme type '" + type + "'");
    }
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      m.preprocess.upsample = p.value("upsample", std::size_t{1});
      m.preprocess.standardize = p.value("standardize", true);
      m.preprocess.channel_strategy = parse_strategy(p.value("channel_strategy", std::string("per-axis")));
      if (m.preprocess.upsample == 0) issues.push_back("preprocess.upsample must be at least 1");
    }
    if (j.contains("data_format")) default_format = detail::parse_format(j.at("data_format").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest header: ") + e.what());
  }
  if (!(m.sample_rate > 0)) issues.push_back("sample_rate must be positive");
  if (m.window_samples == 0) issues.push_back("window_samples must be positive");
  if (m.n_channels == 0) issues.push_back("n_channels must be positive");
  if (m.labels.size() < 1) issues.push_back("labels must not be empty");
  if (!j.contains("records") || !j.at("records").is_array()) throw ValidationError("manifest has no records array");

  std::size_t index = 0;
  for (const auto& r : j.at("records")) {
    const std::string where = "record " + std::to_string(index++) + ": ";
    RecordEntry e;
    e.format = default_format;
    if (!r.is_object()) {
      issues.push_back(where + "not an object");
      m.records.push_back(e);
      continue;
    }
    // label: vocabulary string or integer id
    const auto label = r.find("label");
    if (label == r.end()) {
      issues.push_back(where + "missing label");
    } else if (label->is_string()) {
      const auto it = std::find(m.labels.begin(), m.labels.end(), label->get<std::string>());
      if (it == m.labels.end()) issues.push_back(where + "unknown label '" + label->get<std::string>() + "'");
      else e.label = static_cast<int>(it - m.labels.begin());
    } else if (label->is_number_integer()) {
      const long long id = label->get<long long>();
      if (id < 0 || id >= static_cast<long long>(m.labels.size())) {
        issues.push_back(where + "label id " + std::to_string(id) + " outside the vocabulary");
      } else {
        e.label = static_cast<int>(id);
      }
    } else {
      issues.push_back(where + "label must be a string or an integer");
    }
    e.subject = r.contains("subject") && r.at("subject").is_string() ? r.at("subject").get<std::string>() : "";
    if (m.eval_scheme.type == EvalScheme::Type::loso && e.subject.find_first_not_of(" \t") == std::string::npos) {
      issues.push_back(where + "blank subject id under loso evaluation");
    }

    std::optional<std::size_t> channels, samples;
    if (r.contains("data")) {
      e.format = DataFormat::inline_values;
      try {
        const auto rows = r.at("data").get<std::vector<std::vector<double>>>();
        channels = rows.size();
        samples = rows.empty() ? 0 : rows[0].size();
        bool ragged = false;
        for (const auto& row : rows) ragged = ragged || row.size() != *samples;
        bool finite = true;
        for (const auto& row : rows)
          for (double v : row) finite = finite && std::isfinite(v);
        if (ragged) issues.push_back(where + "inline data rows differ in length");
        else if (!finite) issues.push_back(where + "inline data has non-finite values");
        else if (*channels > 0 && *samples > 0) {
          std::vector<double> flat;
          for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
          e.values = Tensord({*channels, *samples}, std::move(flat));
        }
      } catch (const nlohmann::json::exception&) {
        issues.push_back(where + "inline data must be a list of numeric rows");
      }
    } else if (r.contains("file") && r.at("file").is_string()) {
      e.file = (base_dir / r.at("file").get<std::string>()).string();
      if (r.contains("format")) {
        try {
          e.format = detail::parse_format(r.at("format").get<std::string>());
        } catch (const std::exception& ex) {
          issues.push_back(where + ex.what());
        }
      }
      e.offset = r.value("offset", std::uint64_t{0});
      if (r.contains("channels")) channels = r.at("channels").get<std::size_t>();
      if (r.contains("samples")) samples = r.at("samples").get<std::size_t>();
    } else {
      issues.push_back(where + "needs either 'data' or 'file'");
    }
    if (channels && *channels != m.n_channels) {
      issues.push_back(where + "has " + std::to_string(*channels) + " channels, manifest declares " +
                       std::to_string(m.n_channels));
    }
    if (samples && *samples != m.window_samples) {
      issues.push_back(where + "has " + std::to_string(*samples) + " samples, manifest declares " +
                       std::to_string(m.window_samples));
    }
    m.records.push_back(std::move(e));
  }
  if (m.records.empty()) issues.push_back("manifest has no records");
  if (!issues.empty()) throw ManifestError(std::move(issues));
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest '" + path.string() + "'");
  std::stringstream text;
  text << in.rdbuf();
  return parse_manifest(text.str(), path.parent_path());
}

// Reads the raw window for record i (no preprocessing).
inline WindowRecord load_window(const DatasetManifest& m, std::size_t i) {
  const RecordEntry& e = m.records.at(i);
  const std::string where = "record " + std::to_string(i);
  WindowRecord w;
  w.sample_rate = m.sample_rate;
  w.label = e.label;
  w.subject = e.subject;
  const std::size_t c = m.n_channels, s = m.window_samples;
  if (e.format == DataFormat::inline_values) {
    w.data = *e.values;
  } else if (e.format == DataFormat::f32) {
    std::ifstream in(e.file, std::ios::binary);
    if (!in) throw ValidationError(where + ": cannot open '" + e.file + "'");
    in.seekg(static_cast<std::streamoff>(e.offset));
    std::vector<std::uint8_t> bytes(c * s * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw ValidationError(where + ": '" + e.file + "' is too short for " + std::to_string(c) + "x" +
                            std::to_string(s) + " f32 samples at offset " + std::to_string(e.offset));
    }
    weight_io::ByteReader r(bytes);
    w.data = Tensord({c, s});
    for (auto& v : w.data.values()) v = r.f32();
  } else {
    std::ifstream in(e.file);
    if (!in) throw ValidationError(where + ": cannot open '" + e.file + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      bool numeric = true;
      while (std::getline(ss, cell, ',')) {
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
          if (cell.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
        } catch (const std::exception&) {
          numeric = false;
        }
      }
      if (!numeric) {
        if (first) {  // header row
          first = false;
          continue;
        }
        throw ValidationError(where + ": non-numeric CSV row '" + line + "'");
      }
      first = false;
      rows.push_back(std::move(row));
    }
    if (rows.size() != s) {
      throw ValidationError(where + ": CSV has " + std::to_string(rows.size()) + " samples, manifest declares " +
                            std::to_string(s));
    }
    w.data = Tensord({c, s});
    for (std::size_t t = 0; t < s; ++t) {
      if (rows[t].size() != c) {
        throw ValidationError(where + ": CSV row " + std::to_string(t) + " has " + std::to_string(rows[t].size()) +
                              " channels, manifest declares " + std::to_string(c));
      }
      for (std::size_t ch = 0; ch < c; ++ch) w.data.at(ch, t) = rows[t][ch];
    }
  }
  if (w.channels() != c || w.samples() != s) {
    throw ValidationError(where + ": shape " + shape_string(w.data.shape()) + " disagrees with the manifest");
  }
  if (!w.data.all_finite()) throw ValidationError(where + ": non-finite sample values");
  return w;
}

// Upsample then (optionally) standardize, as the manifest's preprocess block says.
inline WindowRecord preprocess(const WindowRecord& w, const Preprocess& p) {
  WindowRecord out = upsample(w, p.upsample);
  if (p.standardize) out = standardize(out);
  return out;
}

}  // namespace xmodal::ingest
