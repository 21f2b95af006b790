#pragma once

// Joint training of LoRA adapters and a probe on top of a frozen encoder.
// Hidden states below the first adapted layer never change, so they are
// computed once; every batch replays only the adapted part of the stack on a
// tape, mean-pools the final layer and feeds the probe loss.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/encoder/taped.hpp"
#include "xmodal/ingest/manifest.hpp"
#include "xmodal/lora/adapter.hpp"
#include "xmodal/numkit/gradcheck.hpp"
#include "xmodal/probe/probe.hpp"
#include "xmodal/weight_io/checkpoint.hpp"

namespace xmodal::lora {

enum class LayerMode { one_at_a_time, all };

inline const char* layer_mode_name(LayerMode m) { return m == LayerMode::all ? "all" : "one-at-a-time"; }

inline LayerMode parse_layer_mode(const std::string& s) {
  if (s == "all") return LayerMode::all;
  if (s == "one-at-a-time") return LayerMode::one_at_a_time;
  throw ConfigError("unknown --lora-layers value '" + s + "' (expected one-at-a-time or all)");
}

// Layer sets to train: {1}, {2}, ... or a single {1..L}.
inline std::vector<std::set<std::size_t>> layer_plans(LayerMode mode, std::size_t n_layers) {
  std::vector<std::set<std::size_t>> plans;
  if (mode == LayerMode::all) {
    std::set<std::size_t> all;
    for (std::size_t l = 1; l <= n_layers; ++l) all.insert(l);
    plans.push_back(all);
  } else {
    for (std::size_t l = 1; l <= n_layers; ++l) plans.push_back({l});
  }
  return plans;
}

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  std::set<Projection> projections{Projection::q, Projection::v};
  std::set<std::size_t> layers;  // 1-based; empty means every layer
  double init_std = 0.02;
  probe::TrainConfig train;
  bool gradient_check = false;  // verify adapter gradients on the first batch

  std::set<std::size_t> resolved_layers(const encoder::EncoderConfig& c) const {
    if (!layers.empty()) return layers;
    std::set<std::size_t> all;
    for (std::size_t l = 1; l <= c.n_transformer_layers; ++l) all.insert(l);
    return all;
  }

  void validate(const encoder::EncoderConfig& c) const {
    train.validate();
    if (projections.empty()) throw ConfigError("LoRA needs at least one target projection");
    if (rank < 1 || rank > c.d_model) {
      throw ConfigError("LoRA rank " + std::to_string(rank) + " outside [1, " + std::to_string(c.d_model) + "]");
    }
    for (std::size_t l : layers) {
      if (l < 1 || l > c.n_transformer_layers) {
        throw ConfigError("LoRA layer " + std::to_string(l) + " outside 1.." + std::to_string(c.n_transformer_layers));
      }
    }
  }

  nlohmann::json to_json() const {
    std::vector<std::string> proj;
    for (auto p : projections) proj.push_back(projection_name(p));
    return {{"rank", rank},
            {"alpha", alpha},
            {"projections", proj},
            {"layers", std::vector<std::size_t>(layers.begin(), layers.end())},
            {"init_std", init_std},
            {"train", train.to_json()}};
  }
};

// Preprocessed, channelized waveforms per record.
struct LoraTask {
  std::vector<std::vector<Tensord>> waveforms;  // record -> channel waveforms
  std::vector<int> labels;
  std::vector<std::string> subjects;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
};

inline LoraTask load_task(const ingest::DatasetManifest& m, const ingest::Preprocess& p) {
  LoraTask task;
  task.labels = m.label_ids();
  task.subjects = m.subjects();
  task.n_classes = m.labels.size();
  for (std::size_t i = 0; i < m.size(); ++i) {
    task.waveforms.push_back(ingest::channelize(ingest::preprocess(ingest::load_window(m, i), p), p.channel_strategy));
  }
  return task;
}

inline std::string param_name(const LoraAdapter<double>& a, char factor) {
  return "adapter." + std::to_string(a.layer) + "." + projection_name(a.projection) + "." + factor;
}

// Mean-pooled final-layer embeddings [rows x dim] through the plain 64-bit
// path with the adapters applied.
inline Tensord adapted_embeddings(const LoraTask& task, std::span<const std::size_t> rows,
                                  const encoder::EncoderWeights<double>& w, const encoder::EncoderConfig& c,
                                  const AdapterSet<double>& adapters) {
  const std::size_t top = c.n_transformer_layers;
  std::vector<std::vector<double>> vecs;
  for (std::size_t r : rows) {
    std::vector<double> v;
    for (const Tensord& mono : task.waveforms.at(r)) {
      const Tensord pooled = numkit::mean_rows(encoder::encode(mono, w, c, {top}, &adapters).at(top));
      v.insert(v.end(), pooled.values().begin(), pooled.values().end());
    }
    vecs.push_back(std::move(v));
  }
  const std::size_t dim = vecs.empty() ? 0 : vecs[0].size();
  Tensord out({rows.size(), dim});
  for (std::size_t i = 0; i < vecs.size(); ++i) std::copy(vecs[i].begin(), vecs[i].end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * dim));
  return out;
}

struct LoraTrainResult {
  AdapterSet<double> adapters;
  probe::ProbeModel probe;
  std::vector<double> loss_curve;  // mean training loss per epoch
  double initial_loss = 0.0;       // full training-set loss before any step
  double final_loss = 0.0;         // same, after training
  std::uint64_t base_checksum_before = 0;
  std::uint64_t base_checksum_after = 0;
};

inline double adapted_loss(const LoraTask& task, std::span<const std::size_t> rows, const encoder::EncoderWeights<double>& w,
                           const encoder::EncoderConfig& c, const AdapterSet<double>& adapters,
                           const probe::ProbeModel& model, const std::vector<double>& class_weights = {}) {
  std::vector<int> y;
  for (std::size_t r : rows) y.push_back(task.labels[r]);
  return probe::probe_loss(model, adapted_embeddings(task, rows, w, c, adapters), y, class_weights);
}

// Trains adapters on `config.layers` and a fresh probe on `rows` of the task.
inline LoraTrainResult train_adapters(const LoraTask& task, std::span<const std::size_t> rows,
                                      const weight_io::LoadedCheckpoint& ckpt, const LoraConfig& config,
                                      probe::ProbeKind kind) {
  const encoder::EncoderConfig& c = ckpt.config;
  config.validate(c);
  const probe::TrainConfig& tc = config.train;
  const std::set<std::size_t> layers = config.resolved_layers(c);
  if (rows.empty()) throw ValidationError("LoRA training needs at least one record");
  std::vector<int> y;
  for (std::size_t r : rows) y.push_back(task.labels.at(r));
  if (std::set<int>(y.begin(), y.end()).size() < 2) {
    throw DegenerateLabelsError("LoRA training needs at least 2 classes in the training rows");
  }

  LoraTrainResult result;
  result.base_checksum_before = ckpt.weights.checksum();
  const auto w = ckpt.weights.cast<double>();
  const std::size_t d = c.d_model;

  numkit::Rng init(numkit::derive_seed(tc.seed, 3));
  for (std::size_t l : layers)
    for (Projection p : config.projections)
      result.adapters.push_back(make_adapter<double>(l, p, d, d, config.rank, config.alpha, init.next(), config.init_std));

  // Frozen hidden states feeding the first adapted block.
  const std::size_t first = *layers.begin();
  const std::size_t top = c.n_transformer_layers;
  std::vector<std::vector<Tensord>> prefix(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const Tensord& mono : task.waveforms.at(rows[i]))
      prefix[i].push_back(encoder::encode(mono, w, c, {first - 1}).at(first - 1));

  // Scaler is fixed from the untouched embeddings and stays fixed.
  const Tensord initial = adapted_embeddings(task, rows, w, c, result.adapters);
  probe::ProbeModel& model = result.probe;
  model = probe::init_probe(kind, initial.cols(), task.n_classes, tc.hidden_dim, tc.seed);
  if (tc.standardize) {
    std::vector<std::size_t> local(rows.size());
    std::iota(local.begin(), local.end(), 0);
    model.scaler = probe::FeatureScaler::fit(initial, local);
    model.scaler.fitted_on.assign(rows.begin(), rows.end());
  }
  std::vector<double> shift(initial.cols(), 0.0), scale(initial.cols(), 1.0);
  if (!model.scaler.empty()) {
    scale = model.scaler.scale;
    for (std::size_t j = 0; j < shift.size(); ++j) shift[j] = -model.scaler.mean[j] * scale[j];
  }
  const std::vector<double> class_weights =
      tc.class_weighting ? probe::inverse_frequency_weights(y, task.n_classes) : std::vector<double>{};
  result.initial_loss = probe::probe_loss(model, initial, y, class_weights);

  probe::ParamMap params = model.params;
  for (const auto& a : result.adapters) {
    params[param_name(a, 'a')] = a.a;
    params[param_name(a, 'b')] = a.b;
  }

  auto batch_loss = [&](ad::Tape& tape, const std::map<std::string, ad::Var>& vars, std::span<const std::size_t> batch) {
    std::vector<encoder::TapedAdapter> taped;
    for (const auto& a : result.adapters) {
      taped.push_back({a.layer, a.projection, vars.at(param_name(a, 'a')), vars.at(param_name(a, 'b')),
                       double(a.scaling())});
    }
    std::vector<ad::Var> batch_rows;
    std::vector<int> yb;
    for (std::size_t i : batch) {
      std::vector<ad::Var> channels;
      for (const Tensord& start : prefix[i]) {
        ad::Var h = tape.constant_ref(start);
        for (std::size_t block = first - 1; block < top; ++block) h = encoder::taped_transformer_block(tape, h, w, c, block, &taped);
        channels.push_back(ad::mean_rows(tape, h));
      }
      batch_rows.push_back(channels.size() == 1 ? channels[0] : ad::concat_cols(tape, channels));
      yb.push_back(y[i]);
    }
    ad::Var x = ad::affine_cols(tape, ad::concat_rows(tape, batch_rows), scale, shift);
    std::map<std::string, ad::Var> probe_vars;
    for (const auto& [name, t] : model.params) probe_vars[name] = vars.at(name);
    return probe::taped_loss(tape, kind, probe_vars, x, yb, class_weights);
  };

  probe::AdamState opt(tc);
  numkit::Rng shuffle(numkit::derive_seed(tc.seed, 1));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  bool checked = !config.gradient_check;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t count = std::min(tc.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      if (!checked) {
        for (const auto& a : result.adapters) {
          for (char f : {'a', 'b'}) {
            const std::string target = param_name(a, f);
            const numkit::TapedFunction fn = [&](ad::Tape& tape, ad::Var p) {
              std::map<std::string, ad::Var> vars;
              for (const auto& [name, t] : params) vars[name] = name == target ? p : tape.constant_ref(t);
              return batch_loss(tape, vars, batch);
            };
            const double err = numkit::finite_difference_check(fn, params.at(target), 1e-5);
            if (!(err < 1e-4)) {
              throw NumericInstabilityError("LoRA gradient check failed for " + target + " (relative error " +
                                            std::to_string(err) + ")");
            }
          }
        }
        checked = true;
      }
      ad::Tape tape;
      std::map<std::string, ad::Var> vars;
      for (const auto& [name, t] : params) vars[name] = tape.variable(t);
      const ad::Var loss = batch_loss(tape, vars, batch);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw DivergenceError("LoRA training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      const ad::Gradients g = tape.backward(loss);
      std::map<std::string, Tensord> grads;
      for (const auto& [name, v] : vars) grads[name] = g[v];
      opt.step(params, grads);
      total += value * double(count);
    }
    for (const auto& [name, p] : params) {
      if (!p.all_finite()) {
        throw DivergenceError("LoRA training diverged at epoch " + std::to_string(epoch) + " (non-finite " + name + ")");
      }
    }
    result.loss_curve.push_back(total / double(order.size()));
  }

  for (auto& a : result.adapters) {
    a.a = params.at(param_name(a, 'a'));
    a.b = params.at(param_name(a, 'b'));
  }
  for (auto& [name, t] : model.params) t = params.at(name);
  model.epochs_run = tc.epochs;
  result.final_loss = adapted_loss(task, rows, w, c, result.adapters, model, class_weights);
  model.final_loss = result.loss_curve.empty() ? result.final_loss : result.loss_curve.back();

  result.base_checksum_after = ckpt.weights.checksum();
  if (result.base_checksum_after != result.base_checksum_before) {
    throw Error("base encoder weights changed during LoRA training");
  }
  return result;
}

// Kind-lora container: adapter.<layer>.<q|v>.{a,b} plus the probe's tensors
// under "probe." and its metadata under "probe".
inline weight_io::Container lora_container(const AdapterSet<double>& adapters, const probe::ProbeModel& model,
                                           const LoraConfig& config, const std::string& checkpoint_fingerprint = "") {
  const auto pc = probe::probe_container(model, config.train);
  weight_io::Container c;
  c.kind = weight_io::ContainerKind::lora;
  nlohmann::json listed = nlohmann::json::array();
  for (const auto& a : adapters) listed.push_back({{"layer", a.layer}, {"projection", projection_name(a.projection)}});
  c.metadata = nlohmann::json{{"lora", config.to_json()},
                              {"adapters", listed},
                              {"checkpoint_fingerprint", checkpoint_fingerprint},
                              {"probe", nlohmann::json::parse(pc.metadata)}}
                   .dump();
  for (const auto& a : adapters) {
    c.add(param_name(a, 'a'), a.a);
    c.add(param_name(a, 'b'), a.b);
  }
  for (const auto& t : pc.tensors) c.tensors.push_back({"probe." + t.name, t.data});
  return c;
}

struct LoadedLora {
  AdapterSet<double> adapters;
  probe::ProbeModel probe;
  nlohmann::json metadata;
};

inline LoadedLora lora_from_container(const weight_io::Container& c) {
  if (c.kind != weight_io::ContainerKind::lora) throw FormatError("container is not a LoRA adapter set");
  LoadedLora out;
  weight_io::Container pc;
  pc.kind = weight_io::ContainerKind::probe;
  try {
    out.metadata = nlohmann::json::parse(c.metadata);
    const double alpha = out.metadata.at("lora").at("alpha").get<double>();
    for (const auto& entry : out.metadata.at("adapters")) {
      LoraAdapter<double> a;
      a.layer = entry.at("layer").get<std::size_t>();
      a.projection = parse_projection(entry.at("projection").get<std::string>());
      a.alpha = alpha;
      a.a = c.get(param_name(a, 'a')).as<double>();
      a.b = c.get(param_name(a, 'b')).as<double>();
      a.validate();
      out.adapters.push_back(std::move(a));
    }
    pc.metadata = out.metadata.at("probe").dump();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("LoRA metadata: ") + e.what());
  }
  for (const auto& t : c.tensors)
    if (t.name.rfind("probe.", 0) == 0) pc.tensors.push_back({t.name.substr(6), t.data});
  out.probe = probe::probe_from_container(pc);
  return out;
}

}  // namespace xmodal::lora
