#pragma once

// Subcommands of the xmodal binary. Each command has a defaults object (the
// full set of config keys), flag specs for those keys, output flags that are
// kept out of the config, and a run function returning the exit code.

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "xmodal/baseline/features.hpp"
#include "xmodal/baseline/forest.hpp"
#include "xmodal/cli/config.hpp"
#include "xmodal/evalkit/evaluate.hpp"
#include "xmodal/extract/extract.hpp"
#include "xmodal/filterscope/filterscope.hpp"
#include "xmodal/ingest/synthetic.hpp"
#include "xmodal/lora/train.hpp"
#include "xmodal/numkit/rng.hpp"
#include "xmodal/weight_io/checkpoint.hpp"
#include "xmodal/weight_io/parity.hpp"

namespace xmodal::cli {

struct RunContext {
  std::map<std::string, std::string> outputs;  // output flag key -> path
  std::size_t jobs = 1;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;

  std::optional<std::filesystem::path> output(const std::string& key) const {
    auto it = outputs.find(key);
    if (it == outputs.end() || it->second.empty()) return std::nullopt;
    return std::filesystem::path(it->second);
  }
};

struct Command {
  std::string name;
  std::string help;
  nlohmann::json defaults;
  std::vector<OptionSpec> options;
  std::vector<OptionSpec> outputs;
  std::function<int(const nlohmann::json&, const RunContext&)> run;
};

inline std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

namespace detail {

using nlohmann::json;

inline std::vector<OptionSpec> probe_options() {
  return {{"probe", OptType::str, "probe kind: linear or mlp"},
          {"epochs", OptType::uint, "training epochs"},
          {"learning_rate", OptType::real, "optimizer step size"},
          {"batch_size", OptType::uint, "mini-batch size"},
          {"weight_decay", OptType::real, "L2 penalty on weight matrices"},
          {"hidden_dim", OptType::uint, "MLP hidden width"},
          {"patience", OptType::uint, "early-stopping patience in epochs (0 = off)"},
          {"validation_fraction", OptType::real, "held-out share of training rows for early stopping"},
          {"class_weighting", OptType::boolean, "inverse-frequency class weights"},
          {"standardize", OptType::boolean, "z-score features on the training rows"},
          {"optimizer", OptType::str, "adam or sgd"}};
}

inline json probe_defaults() {
  const probe::TrainConfig tc;
  return {{"probe", "mlp"},
          {"epochs", tc.epochs},
          {"learning_rate", tc.learning_rate},
          {"batch_size", tc.batch_size},
          {"weight_decay", tc.weight_decay},
          {"hidden_dim", tc.hidden_dim},
          {"patience", tc.patience},
          {"validation_fraction", tc.validation_fraction},
          {"class_weighting", tc.class_weighting},
          {"standardize", tc.standardize},
          {"optimizer", "adam"}};
}

inline std::vector<OptionSpec> split_options() {
  return {{"scheme", OptType::str, "manifest, kfold or loso"},
          {"k", OptType::uint, "folds for kfold (default: manifest value, else 5)"},
          {"seed", OptType::uint, "seed for splits and training"}};
}

inline json split_defaults() { return {{"scheme", "manifest"}, {"k", nullptr}, {"seed", 0}}; }

inline json merged(std::initializer_list<json> parts) {
  json out = json::object();
  for (const auto& p : parts) out.update(p);
  return out;
}

template <typename... V>
std::vector<OptionSpec> joined(V... lists) {
  std::vector<OptionSpec> out;
  (out.insert(out.end(), lists.begin(), lists.end()), ...);
  return out;
}

inline probe::TrainConfig train_config(const json& c) {
  json j = json::object();
  for (const char* key : {"epochs", "learning_rate", "batch_size", "weight_decay", "hidden_dim", "patience",
                          "validation_fraction", "class_weighting", "standardize", "optimizer", "seed"}) {
    j[key] = c.at(key);
  }
  try {
    auto tc = probe::TrainConfig::from_json(j);
    tc.validate();
    return tc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training options: ") + e.what());
  }
}

inline ingest::EvalScheme eval_scheme(const json& c, const ingest::DatasetManifest* manifest) {
  const auto scheme = get<std::string>(c, "scheme");
  ingest::EvalScheme s;
  if (scheme == "manifest") {
    if (manifest) s = manifest->eval_scheme;
  } else if (scheme == "loso") {
    s.type = ingest::EvalScheme::Type::loso;
  } else if (scheme == "kfold") {
    s.type = ingest::EvalScheme::Type::kfold;
    if (manifest && manifest->eval_scheme.type == ingest::EvalScheme::Type::kfold) s.k = manifest->eval_scheme.k;
  } else {
    throw ConfigError("unknown scheme '" + scheme + "' (expected manifest, kfold or loso)");
  }
  if (has(c, "k")) s.k = get<std::size_t>(c, "k");
  return s;
}

inline std::set<std::size_t> layer_set(const json& c, const std::string& key, std::size_t n_layers) {
  std::set<std::size_t> out;
  const auto& v = c.at(key);
  if (v.is_string() && v.get<std::string>() == "all") {
    for (std::size_t l = 0; l <= n_layers; ++l) out.insert(l);
    return out;
  }
  for (std::size_t l : get<std::vector<std::size_t>>(c, key)) out.insert(l);
  if (out.empty()) throw ConfigError("no layers requested");
  return out;
}

inline std::string cache_dir() {
  const char* env = std::getenv("XMODAL_CACHE_DIR");
  return env && *env ? env : ".xmodal-cache";
}

inline std::filesystem::path default_cache_path(const ingest::DatasetManifest& m, const weight_io::LoadedCheckpoint& ckpt,
                                                const extract::ExtractOptions& o) {
  const std::string key = m.fingerprint() + ckpt.fingerprint + o.settings().dump();
  const auto id = weight_io::hex64(
      weight_io::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(key.data()), key.size())));
  return std::filesystem::path(cache_dir()) / ("embeddings-" + id + ".xmc");
}

inline extract::ExtractOptions extract_options(const json& c, const ingest::DatasetManifest& m,
                                               const weight_io::LoadedCheckpoint& ckpt, std::size_t jobs) {
  extract::ExtractOptions o;
  o.layers = layer_set(c, "layers", ckpt.config.n_transformer_layers);
  encoder::validate_taps(o.layers, ckpt.config);
  o.pooling = extract::parse_pooling(get<std::string>(c, "pooling"));
  o.precision = encoder::parse_precision(get<std::string>(c, "precision"));
  o.preprocess = m.preprocess;
  o.jobs = jobs;
  return o;
}

inline std::string join(const std::set<std::size_t>& s, const char* sep) {
  std::string out;
  for (std::size_t v : s) out += (out.empty() ? "" : sep) + std::to_string(v);
  return out;
}

inline int finish(const json& config, const RunContext& ctx, const std::string& command, json result) {
  if (auto p = ctx.output("out")) write_json(*p, artifact(command, config, std::move(result)));
  return 0;
}

// ---- init-toy ----

inline int run_init_toy(const json& c, const RunContext& ctx) {
  const auto dir = ctx.output("out_dir");
  if (!dir) throw ValidationError("--out-dir is required");
  encoder::EncoderConfig ec;
  ec.conv_layers = encoder::EncoderConfig::default_conv_layers(get<std::size_t>(c, "conv_channels"));
  ec.d_model = get<std::size_t>(c, "d_model");
  ec.n_transformer_layers = get<std::size_t>(c, "n_layers");
  ec.n_heads = get<std::size_t>(c, "n_heads");
  ec.ffn_dim = get<std::size_t>(c, "ffn_dim");
  ec.pos_conv_kernel = 16;
  ec.pos_conv_groups = 4;
  ec.validate();
  const auto seed = get<std::uint64_t>(c, "seed");
  const auto weights = encoder::random_weights<float>(ec, numkit::derive_seed(seed, 100));

  ingest::SinusoidDatasetSpec spec;
  spec.frequencies = get<std::vector<double>>(c, "frequencies");
  spec.n_windows = get<std::size_t>(c, "n_windows");
  spec.n_subjects = get<std::size_t>(c, "n_subjects");
  spec.n_channels = get<std::size_t>(c, "n_channels");
  spec.noise_std = get<double>(c, "noise_std");
  spec.seed = seed;
  if (spec.frequencies.size() < 2) throw ConfigError("need at least two frequencies");

  std::filesystem::create_directories(*dir);
  const auto ckpt_path = *dir / "checkpoint.xmc";
  weight_io::save_checkpoint(ec, weights, ckpt_path, std::string("xmodal init-toy seed ") + std::to_string(seed));
  const auto manifest_path = ingest::write_sinusoid_dataset(*dir / "data", spec);

  numkit::Rng rng(numkit::derive_seed(seed, 101));
  Tensord wave({4000});
  for (auto& v : wave.values()) v = rng.normal(0.0, 1.0);
  std::set<std::size_t> taps;
  for (std::size_t l = 0; l <= ec.n_transformer_layers; ++l) taps.insert(l);
  const auto fixture = weight_io::make_fixture(ec, weights, wave, taps, encoder::Precision::f64, 1e-3, "xmodal init-toy");
  weight_io::save_fixture(fixture, *dir / "fixture.xmc");

  *ctx.out << "checkpoint  " << ckpt_path.string() << "\n"
           << "manifest    " << manifest_path.string() << "\n"
           << "fixture     " << (*dir / "fixture.xmc").string() << "\n";
  write_json(*dir / "init-toy.json",
             artifact("init-toy", c,
                      {{"checkpoint", ckpt_path.string()},
                       {"manifest", manifest_path.string()},
                       {"fixture", (*dir / "fixture.xmc").string()}}));
  return 0;
}

// ---- verify-checkpoint ----

inline int run_verify(const json& c, const RunContext& ctx) {
  const auto path = existing_path(c, "checkpoint");
  const auto ckpt = weight_io::load_checkpoint(path);
  std::size_t params = 0;
  for (const auto& [name, t] : ckpt.weights.tensors()) params += t.size();
  auto& out = *ctx.out;
  out << "checkpoint   " << path.string() << "\n"
      << "fingerprint  " << ckpt.fingerprint << "\n"
      << "layers       " << ckpt.config.n_transformer_layers << " x d_model " << ckpt.config.d_model << ", "
      << ckpt.config.n_heads << " heads, ffn " << ckpt.config.ffn_dim << "\n"
      << "conv         " << ckpt.config.conv_layers.size() << " layers, " << ckpt.config.conv_channels()
      << " channels, receptive field " << encoder::min_input_length(ckpt.config.conv_layers) << " samples\n"
      << "tensors      " << ckpt.weights.size() << " (" << params << " parameters)\n";
  if (ckpt.provenance) out << "provenance   " << *ckpt.provenance << "\n";

  json result{{"fingerprint", ckpt.fingerprint}, {"parameters", params}, {"tensors", ckpt.weights.size()}};
  const auto precision = encoder::parse_precision(get<std::string>(c, "precision"));
  int code = 0;
  if (has(c, "fixture")) {
    const auto report = weight_io::verify_parity(ckpt.config, ckpt.weights, weight_io::load_fixture(existing_path(c, "fixture")),
                                                 precision);
    for (const auto& l : report.layers) {
      char line[128];
      std::snprintf(line, sizeof line, "layer %-3zu max |dev| %.3e  %s\n", l.layer, l.max_abs_deviation,
                    l.passed ? "ok" : "FAIL");
      out << line;
    }
    out << "parity " << (report.passed() ? "passed" : "FAILED") << " (tolerance " << report.tolerance << ")\n";
    result["parity"] = report.to_json();
    if (!report.passed()) code = 2;
  }
  if (auto p = ctx.output("write_fixture")) {
    numkit::Rng rng(get<std::uint64_t>(c, "seed"));
    Tensord wave({get<std::size_t>(c, "fixture_samples")});
    for (auto& v : wave.values()) v = rng.normal(0.0, 1.0);
    std::set<std::size_t> taps;
    for (std::size_t l = 0; l <= ckpt.config.n_transformer_layers; ++l) taps.insert(l);
    weight_io::save_fixture(weight_io::make_fixture(ckpt.config, ckpt.weights, wave, taps, precision,
                                                    get<double>(c, "tolerance"), std::string("xmodal ") + kVersion),
                            *p);
    out << "wrote fixture " << p->string() << "\n";
  }
  finish(c, ctx, "verify-checkpoint", result);
  return code;
}

// ---- extract ----

inline int run_extract(const json& c, const RunContext& ctx) {
  const auto manifest = ingest::load_manifest(existing_path(c, "manifest"));
  const auto ckpt = weight_io::load_checkpoint(existing_path(c, "checkpoint"));
  const auto opts = extract_options(c, manifest, ckpt, ctx.jobs);
  const auto cache_path = ctx.output("cache").value_or(default_cache_path(manifest, ckpt, opts));
  if (cache_path.has_parent_path()) std::filesystem::create_directories(cache_path.parent_path());
  const auto result = extract::extract_embeddings(manifest, ckpt, opts, cache_path);
  const auto& r = result.report;
  *ctx.out << r.total << " records: " << r.computed << " computed, " << r.skipped << " cached, " << r.failures.size()
           << " failed\n";
  for (const auto& f : r.failures) *ctx.err << "record " << f.record << ": " << f.error << "\n";
  *ctx.out << "cache " << cache_path.string() << "\n";
  auto j = r.to_json();
  j["cache"] = cache_path.string();
  if (auto p = ctx.output("report")) write_json(*p, artifact("extract", c, j));
  return r.failures.empty() ? 0 : 2;
}

// ---- evaluate / sweep ----

inline int run_evaluate(const json& c, const RunContext& ctx, const std::string& command) {
  std::optional<ingest::DatasetManifest> manifest;
  if (has(c, "manifest")) manifest = ingest::load_manifest(existing_path(c, "manifest"));
  extract::EmbeddingCache cache;
  std::set<std::size_t> layers;
  if (has(c, "cache")) {
    cache = extract::load_cache(existing_path(c, "cache"));
    const auto available = cache.layer_indices();
    if (c.at("layers").is_string() && c.at("layers").get<std::string>() == "all") {
      layers = {available.begin(), available.end()};
    } else {
      layers = layer_set(c, "layers", 0);
      for (std::size_t l : layers) cache.layer(l);
    }
    if (manifest && manifest->fingerprint() != cache.manifest_fingerprint) {
      throw ValidationError("cache was built from a different manifest");
    }
  } else {
    if (!manifest) throw ValidationError("evaluate needs --cache or --manifest with --checkpoint");
    const auto ckpt = weight_io::load_checkpoint(existing_path(c, "checkpoint"));
    const auto opts = extract_options(c, *manifest, ckpt, ctx.jobs);
    layers = opts.layers;
    auto result = extract::extract_embeddings(*manifest, ckpt, opts);
    for (const auto& f : result.report.failures) *ctx.err << "record " << f.record << ": " << f.error << "\n";
    cache = std::move(result.cache);
  }
  const auto kind = probe::parse_kind(get<std::string>(c, "probe"));
  const auto tc = train_config(c);
  const auto scheme = eval_scheme(c, manifest ? &*manifest : nullptr);
  const auto plan = evalkit::make_splits(scheme, cache.labels, cache.subjects, tc.seed, cache.usable(), cache.label_names);

  const auto sweep = evalkit::run_layer_sweep(cache, layers, plan, tc, kind, ctx.jobs);
  *ctx.out << sweep.to_table();
  std::size_t failed = 0;
  for (const auto& [l, r] : sweep.layers) {
    for (const auto& f : r.folds)
      if (!f.ok()) *ctx.err << "layer " << l << " " << f.fold << ": " << f.error << "\n";
    failed += r.failed();
  }
  auto result = sweep.to_json();
  result.erase("config");
  result["splits"] = plan.to_json();
  if (auto p = ctx.output("csv")) write_text(*p, sweep.to_csv());
  finish(c, ctx, command, result);
  return failed ? 2 : 0;
}

// ---- baseline ----

inline int run_baseline(const json& c, const RunContext& ctx) {
  const auto manifest = ingest::load_manifest(existing_path(c, "manifest"));
  baseline::ForestConfig fc;
  fc.n_trees = get<std::size_t>(c, "n_trees");
  fc.max_depth = get<std::size_t>(c, "max_depth");
  fc.min_samples_leaf = get<std::size_t>(c, "min_samples_leaf");
  fc.max_features = get<std::size_t>(c, "max_features");
  fc.bootstrap = get<bool>(c, "bootstrap");
  fc.seed = get<std::uint64_t>(c, "seed");
  fc.jobs = ctx.jobs;

  // Raw windows, no resampling or standardization.
  const std::size_t n = manifest.size(), f = baseline::feature_count(manifest.n_channels);
  Tensord features({n, f});
  numkit::parallel_for(n, ctx.jobs, [&](std::size_t i) {
    const auto v = baseline::engineered_features(ingest::load_window(manifest, i));
    std::copy(v.begin(), v.end(), features.values().begin() + static_cast<std::ptrdiff_t>(i * f));
  });
  const auto labels = manifest.label_ids();
  const auto plan = evalkit::make_splits(eval_scheme(c, &manifest), labels, manifest.subjects(), fc.seed, {}, manifest.labels);
  const auto report = evalkit::evaluate_forest(features, labels, manifest.labels.size(), plan, fc);
  *ctx.out << evalkit::report_table("random forest", report);
  for (const auto& fold : report.folds)
    if (!fold.ok()) *ctx.err << fold.fold << ": " << fold.error << "\n";
  auto result = report.to_json();
  result.erase("config");
  result["features"] = baseline::feature_names(manifest.n_channels);
  result["splits"] = plan.to_json();
  finish(c, ctx, "baseline", result);
  return report.failed() ? 2 : 0;
}

// ---- train-lora ----

inline bool all_b_zero(const lora::AdapterSet<double>& adapters) {
  for (const auto& a : adapters)
    for (double v : a.b.values())
      if (v != 0.0) return false;
  return true;
}

inline int run_train_lora(const json& c, const RunContext& ctx) {
  const auto manifest = ingest::load_manifest(existing_path(c, "manifest"));
  const auto ckpt = weight_io::load_checkpoint(existing_path(c, "checkpoint"));
  lora::LoraConfig base;
  base.rank = get<std::size_t>(c, "rank");
  base.alpha = get<double>(c, "alpha");
  base.init_std = get<double>(c, "init_std");
  base.gradient_check = get<bool>(c, "gradient_check");
  base.projections.clear();
  for (const auto& p : get<std::vector<std::string>>(c, "projections")) base.projections.insert(lora::parse_projection(p));
  base.train = train_config(c);
  const auto kind = probe::parse_kind(get<std::string>(c, "probe"));

  std::vector<std::set<std::size_t>> plans;
  if (has(c, "lora_layers")) {
    const auto l = get<std::vector<std::size_t>>(c, "lora_layers");
    plans.push_back({l.begin(), l.end()});
  } else {
    plans = lora::layer_plans(lora::parse_layer_mode(get<std::string>(c, "layer_mode")), ckpt.config.n_transformer_layers);
  }
  for (const auto& p : plans) {
    auto cfg = base;
    cfg.layers = p;
    cfg.validate(ckpt.config);
  }

  const auto task = lora::load_task(manifest, manifest.preprocess);
  const auto plan = evalkit::make_splits(eval_scheme(c, &manifest), task.labels, task.subjects, base.train.seed, {},
                                         manifest.labels);
  std::vector<std::size_t> all(task.size());
  std::iota(all.begin(), all.end(), 0);
  const auto adapters_dir = ctx.output("adapters_dir");

  json results = json::array();
  std::size_t failed = 0;
  for (const auto& layers : plans) {
    auto cfg = base;
    cfg.layers = layers;
    const std::string label = "lora layers " + join(layers, ",");
    const auto report = evalkit::evaluate_lora(task, ckpt, plan, cfg, kind, ctx.jobs);
    *ctx.out << evalkit::report_table(label, report);
    for (const auto& fold : report.folds)
      if (!fold.ok()) *ctx.err << label << " " << fold.fold << ": " << fold.error << "\n";
    failed += report.failed();

    const auto full = lora::train_adapters(task, all, ckpt, cfg, kind);
    const bool identity = all_b_zero(full.adapters);
    if (identity) *ctx.out << label << ": adapters equal their initialization (B = 0), encoder outputs unchanged\n";
    auto r = report.to_json();
    r.erase("config");
    r["layers"] = std::vector<std::size_t>(layers.begin(), layers.end());
    r["identity"] = identity;
    r["final_fit"] = {{"initial_loss", full.initial_loss}, {"final_loss", full.final_loss}, {"loss_curve", full.loss_curve}};
    if (adapters_dir) {
      const auto path = *adapters_dir / ("lora-layers-" + join(layers, "_") + ".xmc");
      std::filesystem::create_directories(*adapters_dir);
      weight_io::write_container(path, lora::lora_container(full.adapters, full.probe, cfg, ckpt.fingerprint));
      r["adapters"] = path.filename().string();
    }
    results.push_back(std::move(r));
  }
  finish(c, ctx, "train-lora", {{"plans", results}, {"splits", plan.to_json()}});
  return failed ? 2 : 0;
}

// ---- viz ----

inline constexpr const char* kFirstConvWeight = "feature_extractor.conv.0.weight";

inline int run_viz(const json& c, const RunContext& ctx) {
  const auto dir = ctx.output("out_dir");
  if (!dir) throw ValidationError("--out-dir is required");
  const auto ckpt = weight_io::load_checkpoint(existing_path(c, "checkpoint"));
  const Tensord w = ckpt.weights.get(kFirstConvWeight).cast<double>();
  const auto thresholds = filterscope::Thresholds::parse(get<std::string>(c, "thresholds"));
  const auto n_fft = get<std::size_t>(c, "n_fft");
  std::vector<std::size_t> picked = has(c, "filters") ? get<std::vector<std::size_t>>(c, "filters")
                                                     : filterscope::select_filters(w, get<std::size_t>(c, "top_k"));
  const auto reports = filterscope::analyze_filters(w, picked, n_fft, thresholds);

  std::filesystem::create_directories(*dir);
  write_text(*dir / "filters.csv", filterscope::responses_csv(reports));
  write_text(*dir / "filters.svg", filterscope::responses_svg(reports, "first conv layer"));
  json filters = json::array();
  for (const auto& r : reports) {
    filters.push_back(r.to_json());
    char line[96];
    std::snprintf(line, sizeof line, "filter %-4zu norm %.4f  %s\n", r.index, r.norm, filterscope::band_name(r.band));
    *ctx.out << line;
  }
  write_json(*dir / "filters.json",
             artifact("viz", c, {{"filters", filters}, {"thresholds", thresholds.to_json()}, {"weight", kFirstConvWeight}}));
  *ctx.out << "wrote " << (*dir / "filters.csv").string() << ", filters.svg, filters.json\n";
  return 0;
}

}  // namespace detail

inline const std::vector<Command>& commands() {
  using detail::joined;
  using detail::merged;
  using nlohmann::json;
  static const std::vector<Command> all = [] {
    std::vector<Command> v;
    const std::vector<OptionSpec> out_json{{"out", OptType::str, "write the JSON artifact here"}};
    const std::vector<OptionSpec> embed_opts{{"layers", OptType::layers, "comma-separated layer indices or 'all'"},
                                             {"pooling", OptType::str, "mean or max"},
                                             {"precision", OptType::str, "f32 or f64"}};

    v.push_back({"init-toy", "write a small random checkpoint, a synthetic sinusoid dataset and a parity fixture",
                 {{"seed", 0},
                  {"conv_channels", 128},
                  {"d_model", 64},
                  {"n_layers", 2},
                  {"n_heads", 4},
                  {"ffn_dim", 128},
                  {"n_windows", 200},
                  {"n_subjects", 10},
                  {"n_channels", 1},
                  {"noise_std", 0.3},
                  {"frequencies", {5.0, 20.0}}},
                 {{"seed", OptType::uint, "seed for weights and data"},
                  {"conv_channels", OptType::uint, "conv feature channels"},
                  {"d_model", OptType::uint, "transformer width"},
                  {"n_layers", OptType::uint, "transformer layers"},
                  {"n_heads", OptType::uint, "attention heads"},
                  {"ffn_dim", OptType::uint, "feed-forward width"},
                  {"n_windows", OptType::uint, "dataset windows"},
                  {"n_subjects", OptType::uint, "distinct subjects"},
                  {"n_channels", OptType::uint, "channels per window"},
                  {"noise_std", OptType::real, "Gaussian noise level"},
                  {"frequencies", OptType::real_list, "one class per frequency (Hz)"}},
                 {{"out_dir", OptType::str, "output directory"}},
                 detail::run_init_toy});

    v.push_back({"verify-checkpoint", "print a checkpoint summary and check it against a parity fixture",
                 {{"checkpoint", nullptr}, {"fixture", nullptr}, {"precision", "f32"}, {"seed", 0},
                  {"fixture_samples", 16000}, {"tolerance", 1e-3}},
                 {{"checkpoint", OptType::str, "checkpoint container"},
                  {"fixture", OptType::str, "parity fixture to verify against"},
                  {"precision", OptType::str, "f32 or f64 encoder path"},
                  {"seed", OptType::uint, "seed of the waveform for --write-fixture"},
                  {"fixture_samples", OptType::uint, "waveform length for --write-fixture"},
                  {"tolerance", OptType::real, "tolerance stored by --write-fixture"}},
                 joined(out_json, std::vector<OptionSpec>{{"write_fixture", OptType::str, "record a fixture from this encoder"}}),
                 detail::run_verify});

    v.push_back({"extract", "encode a manifest and cache pooled per-layer embeddings",
                 {{"manifest", nullptr}, {"checkpoint", nullptr}, {"layers", "all"}, {"pooling", "mean"}, {"precision", "f32"}},
                 joined(std::vector<OptionSpec>{{"manifest", OptType::str, "dataset manifest"},
                                                {"checkpoint", OptType::str, "encoder checkpoint"}},
                        embed_opts),
                 {{"cache", OptType::str, "cache file (default: $XMODAL_CACHE_DIR or ./.xmodal-cache)"},
                  {"report", OptType::str, "write the run report here"}},
                 detail::run_extract});

    auto eval_defaults = merged({{{"cache", nullptr}, {"manifest", nullptr}, {"checkpoint", nullptr}, {"layers", {0}},
                                  {"pooling", "mean"}, {"precision", "f32"}},
                                 detail::split_defaults(), detail::probe_defaults()});
    auto eval_opts = joined(std::vector<OptionSpec>{{"cache", OptType::str, "embedding cache from extract"},
                                                    {"manifest", OptType::str, "dataset manifest"},
                                                    {"checkpoint", OptType::str, "encoder checkpoint (without --cache)"}},
                            embed_opts, detail::split_options(), detail::probe_options());
    auto eval_outputs = joined(out_json, std::vector<OptionSpec>{{"csv", OptType::str, "per-layer CSV"}});
    v.push_back({"evaluate", "cross-validated probes on frozen embeddings", eval_defaults, eval_opts, eval_outputs,
                 [](const json& c, const RunContext& ctx) { return detail::run_evaluate(c, ctx, "evaluate"); }});
    eval_defaults["layers"] = "all";
    v.push_back({"sweep", "evaluate every layer (or --layers) and tabulate", eval_defaults, eval_opts, eval_outputs,
                 [](const json& c, const RunContext& ctx) { return detail::run_evaluate(c, ctx, "sweep"); }});

    const baseline::ForestConfig fc;
    v.push_back({"baseline", "random forest on engineered window features",
                 merged({{{"manifest", nullptr},
                          {"n_trees", fc.n_trees},
                          {"max_depth", fc.max_depth},
                          {"min_samples_leaf", fc.min_samples_leaf},
                          {"max_features", fc.max_features},
                          {"bootstrap", fc.bootstrap}},
                         detail::split_defaults()}),
                 joined(std::vector<OptionSpec>{{"manifest", OptType::str, "dataset manifest"},
                                                {"n_trees", OptType::uint, "trees in the forest"},
                                                {"max_depth", OptType::uint, "depth limit (0 = none)"},
                                                {"min_samples_leaf", OptType::uint, "minimum rows per leaf"},
                                                {"max_features", OptType::uint, "features tried per split (0 = sqrt)"},
                                                {"bootstrap", OptType::boolean, "bootstrap rows per tree"}},
                        detail::split_options()),
                 out_json, detail::run_baseline});

    v.push_back({"train-lora", "train low-rank adapters with a probe on the final layer",
                 merged({{{"manifest", nullptr},
                          {"checkpoint", nullptr},
                          {"layer_mode", "one-at-a-time"},
                          {"lora_layers", nullptr},
                          {"rank", 8},
                          {"alpha", 16.0},
                          {"projections", {"q", "v"}},
                          {"init_std", 0.02},
                          {"gradient_check", false}},
                         detail::split_defaults(), detail::probe_defaults()}),
                 joined(std::vector<OptionSpec>{{"manifest", OptType::str, "dataset manifest"},
                                                {"checkpoint", OptType::str, "encoder checkpoint"},
                                                {"layer_mode", OptType::str, "one-at-a-time or all"},
                                                {"lora_layers", OptType::uint_list, "explicit 1-based layers (one plan)"},
                                                {"rank", OptType::uint, "adapter rank"},
                                                {"alpha", OptType::real, "adapter scale numerator"},
                                                {"projections", OptType::str_list, "target projections (q,v)"},
                                                {"init_std", OptType::real, "std of the A factor at init"},
                                                {"gradient_check", OptType::boolean, "check gradients on the first batch"}},
                        detail::split_options(), detail::probe_options()),
                 joined(out_json, std::vector<OptionSpec>{{"adapters_dir", OptType::str, "save adapters trained on all rows"}}),
                 detail::run_train_lora});

    v.push_back({"viz", "frequency responses of the first conv layer's filters",
                 {{"checkpoint", nullptr}, {"top_k", 8}, {"n_fft", 512}, {"thresholds", "0.1,0.9,0.3,0.5"}, {"filters", nullptr}},
                 {{"checkpoint", OptType::str, "encoder checkpoint"},
                  {"top_k", OptType::uint, "filters with the largest L2 norm"},
                  {"n_fft", OptType::uint, "zero-padded DFT length (power of two)"},
                  {"thresholds", OptType::str, "band thresholds low,high,tail,edge"},
                  {"filters", OptType::uint_list, "explicit filter indices instead of --top-k"}},
                 {{"out_dir", OptType::str, "output directory"}},
                 detail::run_viz});
    return v;
  }();
  return all;
}

inline const Command& find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw ConfigError("unknown command '" + name + "'");
}

// Resolves the config and runs; errors propagate to the caller.
inline int run_command(const Command& cmd, const std::optional<std::filesystem::path>& config_file,
                       const nlohmann::json& flags, const RunContext& ctx) {
  const auto file_config = config_file ? config_from_file(*config_file, cmd.name) : nlohmann::json::object();
  return cmd.run(effective_config(cmd.defaults, file_config, flags), ctx);
}

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::validation: return 1;
    case ErrorCategory::divergence: return 3;
    default: return 2;
  }
}

}  // namespace xmodal::cli
