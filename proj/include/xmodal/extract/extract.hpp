#pragma once

// Runs the frozen encoder over a manifest and caches time-pooled embeddings
// per layer. The cache is a container of kind embedding_cache:
//   tensors  layer.<l> [N x dim] f64, computed [N] f32 (0/1), labels [N] f64
//   metadata {"manifest_fingerprint", "checkpoint_fingerprint", "settings",
//             "subjects", "dim", "label_names"}

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/encoder/encoder.hpp"
#include "xmodal/ingest/manifest.hpp"
#include "xmodal/numkit/parallel.hpp"
#include "xmodal/weight_io/checkpoint.hpp"

namespace xmodal::extract {

enum class Pooling { mean, max };

inline const char* pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling '" + s + "' (expected mean or max)");
}

// Collapses frames [T x D] to a [D] vector.
template <typename T>
Tensor<T> pool(const Tensor<T>& frames, Pooling method) {
  if (frames.shape().size() != 2 || frames.rows() == 0) throw EmptySequenceError("cannot pool an empty frame sequence");
  const Tensor<T> row = method == Pooling::mean ? numkit::mean_rows(frames) : numkit::max_rows(frames);
  return row.reshaped({frames.cols()});
}

struct ExtractOptions {
  std::set<std::size_t> layers{0};
  Pooling pooling = Pooling::mean;
  ingest::Preprocess preprocess;  // usually the manifest's own block
  encoder::Precision precision = encoder::Precision::f32;
  std::size_t jobs = 1;
  std::size_t chunk_size = 64;  // records between cache flushes

  nlohmann::json settings() const {
    return {{"layers", std::vector<std::size_t>(layers.begin(), layers.end())},
            {"pooling", pooling_name(pooling)},
            {"preprocess", preprocess.to_json()},
            {"precision", encoder::precision_name(precision)}};
  }
};

struct EmbeddingCache {
  std::string manifest_fingerprint;
  std::string checkpoint_fingerprint;
  nlohmann::json settings;
  std::size_t dim = 0;
  std::vector<std::string> label_names;
  std::vector<int> labels;
  std::vector<std::string> subjects;
  std::vector<bool> computed;
  std::map<std::size_t, Tensord> layers;  // layer -> [N x dim]

  std::size_t size() const { return labels.size(); }
  std::size_t computed_count() const { return static_cast<std::size_t>(std::count(computed.begin(), computed.end(), true)); }
  std::vector<std::size_t> layer_indices() const {
    std::vector<std::size_t> out;
    for (const auto& [l, t] : layers) out.push_back(l);
    return out;
  }
  const Tensord& layer(std::size_t l) const {
    auto it = layers.find(l);
    if (it == layers.end()) throw ValidationError("embedding cache has no layer " + std::to_string(l));
    return it->second;
  }
  // Indices of records whose embeddings were computed.
  std::vector<std::size_t> usable() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < computed.size(); ++i)
      if (computed[i]) out.push_back(i);
    return out;
  }
};

struct RecordFailure {
  std::size_t record = 0;
  std::string error;
};

struct RunReport {
  std::size_t total = 0;
  std::size_t computed = 0;  // newly computed in this run
  std::size_t skipped = 0;   // already present in the cache
  std::vector<RecordFailure> failures;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& x : failures) f.push_back({{"record", x.record}, {"error", x.error}});
    return {{"total", total}, {"computed", computed}, {"skipped", skipped}, {"failed", failures.size()}, {"failures", f}};
  }
};

inline weight_io::Container cache_container(const EmbeddingCache& cache) {
  weight_io::Container c;
  c.kind = weight_io::ContainerKind::embedding_cache;
  c.metadata = nlohmann::json{{"manifest_fingerprint", cache.manifest_fingerprint},
                              {"checkpoint_fingerprint", cache.checkpoint_fingerprint},
                              {"settings", cache.settings},
                              {"subjects", cache.subjects},
                              {"label_names", cache.label_names},
                              {"dim", cache.dim}}
                   .dump();
  const std::size_t n = cache.size();
  Tensorf computed({n});
  Tensord labels({n});
  for (std::size_t i = 0; i < n; ++i) {
    computed[i] = cache.computed[i] ? 1.0f : 0.0f;
    labels[i] = cache.labels[i];
  }
  c.add("computed", computed);
  c.add("labels", labels);
  for (const auto& [l, t] : cache.layers) c.add("layer." + std::to_string(l), t);
  return c;
}

inline EmbeddingCache cache_from_container(const weight_io::Container& c) {
  if (c.kind != weight_io::ContainerKind::embedding_cache) throw FormatError("container is not an embedding cache");
  EmbeddingCache cache;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    cache.manifest_fingerprint = meta.at("manifest_fingerprint").get<std::string>();
    cache.checkpoint_fingerprint = meta.at("checkpoint_fingerprint").get<std::string>();
    cache.settings = meta.at("settings");
    cache.subjects = meta.at("subjects").get<std::vector<std::string>>();
    cache.label_names = meta.at("label_names").get<std::vector<std::string>>();
    cache.dim = meta.at("dim").get<std::size_t>();
    for (std::size_t l : cache.settings.at("layers").get<std::vector<std::size_t>>()) {
      cache.layers.emplace(l, c.get("layer." + std::to_string(l)).as<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("embedding cache metadata: ") + e.what());
  }
  const Tensorf computed = c.get("computed").as<float>();
  const Tensord labels = c.get("labels").as<double>();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cache.labels.push_back(static_cast<int>(labels[i]));
    cache.computed.push_back(computed[i] != 0.0f);
  }
  if (cache.subjects.size() != cache.size() || computed.size() != cache.size()) {
    throw CorruptCheckpointError("embedding cache record counts disagree");
  }
  for (const auto& [l, t] : cache.layers) {
    if (t.rows() != cache.size() || t.cols() != cache.dim) {
      throw CorruptCheckpointError("embedding cache layer " + std::to_string(l) + " has shape " + shape_string(t.shape()));
    }
  }
  return cache;
}

inline void save_cache(const EmbeddingCache& cache, const std::filesystem::path& path) {
  weight_io::write_container(path, cache_container(cache));
}

inline EmbeddingCache load_cache(const std::filesystem::path& path) {
  return cache_from_container(weight_io::read_container(path));
}

// Pooled embedding of one preprocessed window for every requested layer;
// per-axis strategy concatenates channel vectors in channel order.
inline std::map<std::size_t, std::vector<double>> embed_window(const ingest::WindowRecord& window,
                                                               const weight_io::LoadedCheckpoint& ckpt,
                                                               const encoder::EncoderWeights<double>* weights64,
                                                               const ExtractOptions& opts) {
  std::map<std::size_t, std::vector<double>> out;
  for (const Tensord& mono : ingest::channelize(window, opts.preprocess.channel_strategy)) {
    const auto hidden = encoder::encode_at(opts.precision, mono, ckpt.weights, weights64, ckpt.config, opts.layers);
    for (const auto& [layer, frames] : hidden) {
      const Tensord v = pool(frames, opts.pooling);
      auto& dst = out[layer];
      dst.insert(dst.end(), v.values().begin(), v.values().end());
    }
  }
  return out;
}

inline std::size_t embedding_dim(std::size_t d_model, std::size_t n_channels, ingest::ChannelStrategy s) {
  return d_model * ingest::waveform_count(n_channels, s);
}

struct ExtractResult {
  EmbeddingCache cache;
  RunReport report;
};

// Encodes every manifest record not already in the cache at `cache_path`
// (when given) and writes the cache back after each chunk. A cache built
// from a different manifest, checkpoint or settings is rejected.
inline ExtractResult extract_embeddings(const ingest::DatasetManifest& manifest, const weight_io::LoadedCheckpoint& ckpt,
                                        const ExtractOptions& opts,
                                        const std::optional<std::filesystem::path>& cache_path = std::nullopt,
                                        const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  encoder::validate_taps(opts.layers, ckpt.config);
  if (opts.layers.empty()) throw ConfigError("no layers requested");
  const std::size_t n = manifest.size();
  const std::size_t dim = embedding_dim(ckpt.config.d_model, manifest.n_channels, opts.preprocess.channel_strategy);

  ExtractResult result;
  EmbeddingCache& cache = result.cache;
  cache.manifest_fingerprint = manifest.fingerprint();
  cache.checkpoint_fingerprint = ckpt.fingerprint;
  cache.settings = opts.settings();
  cache.dim = dim;
  cache.label_names = manifest.labels;
  cache.labels = manifest.label_ids();
  cache.subjects = manifest.subjects();
  cache.computed.assign(n, false);
  for (std::size_t l : opts.layers) cache.layers.emplace(l, Tensord({n, dim}));

  if (cache_path && std::filesystem::exists(*cache_path)) {
    EmbeddingCache prior = load_cache(*cache_path);
    std::string why;
    if (prior.manifest_fingerprint != cache.manifest_fingerprint) why = "manifest changed";
    else if (prior.checkpoint_fingerprint != cache.checkpoint_fingerprint) why = "checkpoint changed";
    else if (prior.settings != cache.settings) why = "extraction settings changed";
    else if (prior.size() != n || prior.dim != dim) why = "record layout changed";
    if (!why.empty()) {
      throw StaleCacheError("embedding cache '" + cache_path->string() + "' is stale (" + why +
                            "); delete it or choose another cache path");
    }
    cache = std::move(prior);
  }

  std::optional<encoder::EncoderWeights<double>> weights64;
  if (opts.precision == encoder::Precision::f64) weights64 = ckpt.weights.cast<double>();

  RunReport& report = result.report;
  report.total = n;
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < n; ++i) {
    if (cache.computed[i]) ++report.skipped;
    else todo.push_back(i);
  }

  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk_size);
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    const std::size_t count = std::min(chunk, todo.size() - start);
    std::vector<std::map<std::size_t, std::vector<double>>> vectors(count);
    std::vector<std::string> errors(count);
    numkit::parallel_for(count, opts.jobs, [&](std::size_t k) {
      const std::size_t record = todo[start + k];
      try {
        const auto window = ingest::preprocess(ingest::load_window(manifest, record), opts.preprocess);
        vectors[k] = embed_window(window, ckpt, weights64 ? &*weights64 : nullptr, opts);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    });
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t record = todo[start + k];
      if (!errors[k].empty()) {
        report.failures.push_back({record, errors[k]});
        continue;
      }
      for (auto& [layer, v] : vectors[k]) {
        Tensord& dst = cache.layers.at(layer);
        std::copy(v.begin(), v.end(), dst.values().begin() + static_cast<std::ptrdiff_t>(record * dim));
      }
      cache.computed[record] = true;
      ++report.computed;
    }
    if (cache_path) save_cache(cache, *cache_path);
    if (progress) progress(start + count, todo.size());
  }
  if (cache_path && todo.empty() && !std::filesystem::exists(*cache_path)) save_cache(cache, *cache_path);
  return result;
}

}  // namespace xmodal::extract
