#pragma once

// Linear and one-hidden-layer MLP probes on pooled embeddings, trained with
// mini-batch Adam (or SGD) on mean softmax cross-entropy.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/numkit/autodiff.hpp"
#include "xmodal/numkit/kernels.hpp"
#include "xmodal/numkit/rng.hpp"
#include "xmodal/probe/scaler.hpp"
#include "xmodal/weight_io/container.hpp"

namespace xmodal::probe {

enum class ProbeKind { linear, mlp };
enum class Optimizer { adam, sgd };

inline const char* kind_name(ProbeKind k) { return k == ProbeKind::linear ? "linear" : "mlp"; }

inline ProbeKind parse_kind(const std::string& s) {
  if (s == "linear") return ProbeKind::linear;
  if (s == "mlp") return ProbeKind::mlp;
  throw ConfigError("unknown probe kind '" + s + "' (expected linear or mlp)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double weight_decay = 1e-5;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 0;  // 0 disables early stopping
  double validation_fraction = 0.1;
  bool class_weighting = false;
  bool standardize = true;
  std::size_t hidden_dim = 512;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
    if (patience > 0 && !(validation_fraction > 0 && validation_fraction < 1)) {
      throw ConfigError("validation_fraction must lie in (0, 1) when early stopping is on");
    }
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"weight_decay", weight_decay},
            {"optimizer", optimizer == Optimizer::adam ? "adam" : "sgd"},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"patience", patience},
            {"validation_fraction", validation_fraction},
            {"class_weighting", class_weighting},
            {"standardize", standardize},
            {"hidden_dim", hidden_dim}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt != "adam" && opt != "sgd") throw ConfigError("unknown optimizer '" + opt + "'");
    c.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.patience = j.value("patience", c.patience);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.class_weighting = j.value("class_weighting", c.class_weighting);
    c.standardize = j.value("standardize", c.standardize);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    return c;
  }
};

using ParamMap = std::map<std::string, Tensord>;

struct ProbeModel {
  ProbeKind kind = ProbeKind::linear;
  std::size_t input_dim = 0;
  std::size_t n_classes = 0;
  std::size_t hidden_dim = 0;
  ParamMap params;  // linear: W [C x D], b [C]; mlp: W1 [H x D], b1 [H], W2 [C x H], b2 [C]
  FeatureScaler scaler;
  std::uint64_t seed = 0;
  std::size_t epochs_run = 0;
  double final_loss = std::nan("");
};

inline ProbeModel init_probe(ProbeKind kind, std::size_t input_dim, std::size_t n_classes, std::size_t hidden_dim,
                             std::uint64_t seed) {
  if (input_dim == 0 || n_classes < 2) throw ConfigError("probe needs input_dim >= 1 and at least 2 classes");
  ProbeModel m;
  m.kind = kind;
  m.input_dim = input_dim;
  m.n_classes = n_classes;
  m.hidden_dim = kind == ProbeKind::mlp ? hidden_dim : 0;
  m.seed = seed;
  numkit::Rng rng(numkit::derive_seed(seed, 0));
  auto dense = [&](std::size_t out, std::size_t in) {
    Tensord w({out, in});
    const double stddev = 1.0 / std::sqrt(double(in));
    for (auto& v : w.values()) v = rng.normal(0.0, stddev);
    return w;
  };
  if (kind == ProbeKind::linear) {
    m.params["W"] = dense(n_classes, input_dim);
    m.params["b"] = Tensord({n_classes});
  } else {
    m.params["W1"] = dense(hidden_dim, input_dim);
    m.params["b1"] = Tensord({hidden_dim});
    m.params["W2"] = dense(n_classes, hidden_dim);
    m.params["b2"] = Tensord({n_classes});
  }
  return m;
}

// Logits for already-scaled inputs x [N x D].
inline Tensord logits_scaled(const ProbeModel& m, const Tensord& x) {
  if (x.cols() != m.input_dim) {
    throw ShapeError("probe expects " + std::to_string(m.input_dim) + " features, got " + std::to_string(x.cols()));
  }
  if (m.kind == ProbeKind::linear) return numkit::linear(x, m.params.at("W"), &m.params.at("b"));
  const Tensord h = numkit::gelu(numkit::linear(x, m.params.at("W1"), &m.params.at("b1")));
  return numkit::linear(h, m.params.at("W2"), &m.params.at("b2"));
}

// Class probabilities [N x C] for raw embeddings (the model's scaler is applied).
inline Tensord predict_proba(const ProbeModel& m, const Tensord& x) {
  return numkit::softmax(logits_scaled(m, m.scaler.transform(x)));
}

inline std::vector<double> predict(const ProbeModel& m, std::span<const double> embedding) {
  const Tensord p = predict_proba(m, Tensord({1, embedding.size()}, std::vector<double>(embedding.begin(), embedding.end())));
  return std::vector<double>(p.values().begin(), p.values().end());
}

inline std::vector<int> argmax_rows(const Tensord& p) {
  std::vector<int> out;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto row = p.row(r);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

// Taped loss for gradient checks and training: params are looked up by name.
inline ad::Var taped_loss(ad::Tape& tape, ProbeKind kind, const std::map<std::string, ad::Var>& p, ad::Var x,
                          const std::vector<int>& labels, const std::vector<double>& class_weights = {}) {
  ad::Var logits;
  if (kind == ProbeKind::linear) {
    logits = ad::linear(tape, x, p.at("W"), p.at("b"));
  } else {
    ad::Var h = ad::gelu(tape, ad::linear(tape, x, p.at("W1"), p.at("b1")));
    logits = ad::linear(tape, h, p.at("W2"), p.at("b2"));
  }
  return ad::softmax_cross_entropy(tape, logits, labels, class_weights);
}

// Mean cross-entropy of the model on raw embeddings.
inline double probe_loss(const ProbeModel& m, const Tensord& x, const std::vector<int>& labels,
                         const std::vector<double>& class_weights = {}) {
  const Tensord logits = logits_scaled(m, m.scaler.transform(x));
  return numkit::softmax_cross_entropy<double>(logits, labels, class_weights).loss;
}

// w_c = n / (classes_present * n_c); absent classes get weight 0.
inline std::vector<double> inverse_frequency_weights(const std::vector<int>& labels, std::size_t n_classes) {
  std::vector<double> counts(n_classes, 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  const double present = double(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }));
  std::vector<double> w(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c)
    if (counts[c] > 0) w[c] = double(labels.size()) / (present * counts[c]);
  return w;
}

struct TrainResult {
  ProbeModel model;
  std::vector<double> loss_curve;        // mean training loss per epoch
  std::vector<double> validation_curve;  // only with early stopping
};

namespace detail {

inline Tensord gather_rows(const Tensord& x, std::span<const std::size_t> rows) {
  Tensord out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * x.cols()));
  }
  return out;
}

inline bool is_weight(const std::string& name) { return name[0] == 'W'; }

}  // namespace detail

// Adam with L2 weight decay folded into the gradient.
class AdamState {
 public:
  AdamState(const TrainConfig& c) : c_(c) {}

  void step(ParamMap& params, const std::map<std::string, Tensord>& grads) {
    ++t_;
    for (auto& [name, p] : params) {
      Tensord g = grads.at(name);
      if (detail::is_weight(name) && c_.weight_decay > 0) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c_.weight_decay * p[i];
      }
      if (c_.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= c_.learning_rate * g[i];
        continue;
      }
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m = Tensord(p.shape());
        v = Tensord(p.shape());
      }
      const double bc1 = 1.0 - std::pow(c_.beta1, double(t_));
      const double bc2 = 1.0 - std::pow(c_.beta2, double(t_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = c_.beta1 * m[i] + (1.0 - c_.beta1) * g[i];
        v[i] = c_.beta2 * v[i] + (1.0 - c_.beta2) * g[i] * g[i];
        p[i] -= c_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c_.epsilon);
      }
    }
  }

 private:
  TrainConfig c_;
  std::size_t t_ = 0;
  std::map<std::string, Tensord> m_, v_;
};

// One optimizer step on a batch of scaled inputs; returns the batch loss
// before the step.
inline double train_step(ProbeModel& model, AdamState& opt, const Tensord& xb, const std::vector<int>& yb,
                         const std::vector<double>& class_weights) {
  ad::Tape tape;
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, p] : model.params) vars[name] = tape.variable(p);
  const ad::Var loss = taped_loss(tape, model.kind, vars, tape.constant(xb), yb, class_weights);
  const double value = tape.value(loss)[0];
  const ad::Gradients g = tape.backward(loss);
  std::map<std::string, Tensord> grads;
  for (const auto& [name, v] : vars) grads[name] = g[v];
  opt.step(model.params, grads);
  return value;
}

// Trains a probe on raw embeddings x [N x D] with integer labels in
// [0, n_classes). `source_rows` names the rows of x in the caller's index
// space (recorded as scaler provenance); defaults to 0..N-1.
inline TrainResult train_probe(const Tensord& x, const std::vector<int>& y, std::size_t n_classes,
                               const TrainConfig& config, ProbeKind kind,
                               std::span<const std::size_t> source_rows = {}) {
  config.validate();
  if (x.rows() != y.size()) throw ShapeError("probe training: " + std::to_string(y.size()) + " labels for " +
                                             std::to_string(x.rows()) + " rows");
  const std::set<int> present(y.begin(), y.end());
  if (present.size() < 2) {
    throw DegenerateLabelsError("probe training needs at least 2 classes, got " + std::to_string(present.size()));
  }
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw ValidationError("label " + std::to_string(label) + " outside " + std::to_string(n_classes) + " classes");
    }
  }
  std::vector<std::size_t> ids(x.rows());
  std::iota(ids.begin(), ids.end(), 0);

  // Optional held-out split for early stopping.
  std::vector<std::size_t> train_rows = ids, val_rows;
  if (config.patience > 0) {
    numkit::Rng split(numkit::derive_seed(config.seed, 2));
    split.shuffle(train_rows);
    const std::size_t n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::round(config.validation_fraction * double(x.rows()))), 1, x.rows() - 1);
    val_rows.assign(train_rows.end() - static_cast<std::ptrdiff_t>(n_val), train_rows.end());
    train_rows.resize(train_rows.size() - n_val);
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());
  }

  TrainResult result;
  ProbeModel& model = result.model;
  model = init_probe(kind, x.cols(), n_classes, config.hidden_dim, config.seed);
  if (config.standardize) {
    model.scaler = FeatureScaler::fit(x, train_rows);
    if (!source_rows.empty()) {
      for (auto& r : model.scaler.fitted_on) r = source_rows[r];
    }
  }
  const Tensord xs = model.scaler.transform(x);
  std::vector<int> train_y;
  for (std::size_t r : train_rows) train_y.push_back(y[r]);
  const std::vector<double> weights =
      config.class_weighting ? inverse_frequency_weights(train_y, n_classes) : std::vector<double>{};
  const Tensord x_val = val_rows.empty() ? Tensord() : detail::gather_rows(xs, val_rows);
  std::vector<int> y_val;
  for (std::size_t r : val_rows) y_val.push_back(y[r]);

  AdamState opt(config);
  numkit::Rng shuffle(numkit::derive_seed(config.seed, 1));
  double best_val = std::numeric_limits<double>::infinity();
  ParamMap best_params = model.params;
  std::size_t since_best = 0;
  std::vector<std::size_t> order = train_rows;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      std::vector<int> yb;
      for (std::size_t r : batch) yb.push_back(y[r]);
      const double loss = train_step(model, opt, detail::gather_rows(xs, batch), yb, weights);
      if (!std::isfinite(loss)) {
        throw DivergenceError("probe training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      total += loss * double(count);
    }
    result.loss_curve.push_back(total / double(order.size()));
    model.epochs_run = epoch;
    model.final_loss = result.loss_curve.back();
    for (const auto& [name, p] : model.params) {
      if (!p.all_finite()) {
        throw DivergenceError("probe training diverged at epoch " + std::to_string(epoch) + " (non-finite " + name + ")");
      }
    }
    if (config.patience > 0) {
      const double val = numkit::softmax_cross_entropy<double>(logits_scaled(model, x_val), y_val).loss;
      result.validation_curve.push_back(val);
      if (val < best_val) {
        best_val = val;
        best_params = model.params;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  if (config.patience > 0 && !result.validation_curve.empty()) model.params = best_params;
  return result;
}

inline weight_io::Container probe_container(const ProbeModel& m, const TrainConfig& config) {
  weight_io::Container c;
  c.kind = weight_io::ContainerKind::probe;
  c.metadata = nlohmann::json{{"kind", kind_name(m.kind)},
                              {"input_dim", m.input_dim},
                              {"n_classes", m.n_classes},
                              {"hidden_dim", m.hidden_dim},
                              {"seed", m.seed},
                              {"epochs_run", m.epochs_run},
                              {"final_loss", std::isfinite(m.final_loss) ? nlohmann::json(m.final_loss) : nlohmann::json()},
                              {"scaler_fitted_on", m.scaler.fitted_on},
                              {"train_config", config.to_json()}}
                   .dump();
  for (const auto& [name, t] : m.params) c.add(name, t);
  if (!m.scaler.empty()) {
    c.add("scaler.mean", Tensord({m.scaler.mean.size()}, m.scaler.mean));
    c.add("scaler.scale", Tensord({m.scaler.scale.size()}, m.scaler.scale));
  }
  return c;
}

inline ProbeModel probe_from_container(const weight_io::Container& c) {
  if (c.kind != weight_io::ContainerKind::probe) throw FormatError("container is not a probe");
  ProbeModel m;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    m.kind = parse_kind(meta.at("kind").get<std::string>());
    m.input_dim = meta.at("input_dim").get<std::size_t>();
    m.n_classes = meta.at("n_classes").get<std::size_t>();
    m.hidden_dim = meta.at("hidden_dim").get<std::size_t>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.epochs_run = meta.at("epochs_run").get<std::size_t>();
    m.final_loss = meta.at("final_loss").is_null() ? std::nan("") : meta.at("final_loss").get<double>();
    m.scaler.fitted_on = meta.at("scaler_fitted_on").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("probe metadata: ") + e.what());
  }
  const auto reference = init_probe(m.kind, m.input_dim, m.n_classes, std::max<std::size_t>(m.hidden_dim, 1), 0);
  for (const auto& [name, t] : reference.params) {
    const Tensord p = c.get(name).as<double>();
    if (p.shape() != t.shape()) throw CorruptCheckpointError("probe tensor '" + name + "' has shape " + shape_string(p.shape()));
    m.params[name] = p;
  }
  if (const auto* mean = c.find("scaler.mean")) {
    const Tensord mu = mean->as<double>(), sc = c.get("scaler.scale").as<double>();
    m.scaler.mean.assign(mu.values().begin(), mu.values().end());
    m.scaler.scale.assign(sc.values().begin(), sc.values().end());
  }
  return m;
}

}  // namespace xmodal::probe
