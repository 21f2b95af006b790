#pragma once

// Fold-by-fold evaluation of probes on cached embeddings, of the engineered
// feature forest, and of LoRA-adapted encoders.

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/baseline/forest.hpp"
#include "xmodal/evalkit/metrics.hpp"
#include "xmodal/evalkit/report.hpp"
#include "xmodal/evalkit/splits.hpp"
#include "xmodal/extract/extract.hpp"
#include "xmodal/lora/train.hpp"
#include "xmodal/numkit/parallel.hpp"
#include "xmodal/probe/probe.hpp"

namespace xmodal::evalkit {

namespace detail {

inline std::vector<int> pick(const std::vector<int>& labels, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

inline void score(FoldResult& r, const std::vector<int>& y_test, const Tensord& probs, std::size_t n_classes) {
  const auto pred = probe::argmax_rows(probs);
  r.macro_f1 = macro_f1(y_test, pred, n_classes);
  r.accuracy = accuracy(y_test, pred);
  r.auc = try_auc(y_test, probs);
}

}  // namespace detail

// Trains one probe on the fold's train rows of x and scores its test rows.
inline FoldResult probe_fold(const Tensord& x, const std::vector<int>& labels, std::size_t n_classes, const Fold& fold,
                             const probe::TrainConfig& config, probe::ProbeKind kind) {
  FoldResult r;
  r.fold = fold.name;
  r.n_train = fold.train.size();
  r.n_test = fold.test.size();
  try {
    const auto trained = probe::train_probe(probe::detail::gather_rows(x, fold.train), detail::pick(labels, fold.train),
                                            n_classes, config, kind, fold.train);
    r.scaler_fitted_on = trained.model.scaler.fitted_on;
    const auto probs = probe::predict_proba(trained.model, probe::detail::gather_rows(x, fold.test));
    detail::score(r, detail::pick(labels, fold.test), probs, n_classes);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

inline MetricReport evaluate_probe(const Tensord& x, const std::vector<int>& labels, std::size_t n_classes,
                                   const SplitPlan& plan, const probe::TrainConfig& config, probe::ProbeKind kind,
                                   std::size_t jobs = 1, nlohmann::json echo = {}) {
  MetricReport report;
  report.config = std::move(echo);
  report.folds.resize(plan.folds.size());
  numkit::parallel_for(plan.folds.size(), jobs, [&](std::size_t i) {
    report.folds[i] = probe_fold(x, labels, n_classes, plan.folds[i], config, kind);
  });
  return report;
}

// One probe per (layer, fold) cell, cells run in parallel; a failing cell is
// recorded in its fold entry and the rest of the sweep still completes.
inline SweepReport run_layer_sweep(const extract::EmbeddingCache& cache, const std::set<std::size_t>& layers,
                                   const SplitPlan& plan, const probe::TrainConfig& config, probe::ProbeKind kind,
                                   std::size_t jobs = 1, nlohmann::json echo = {}) {
  for (std::size_t l : layers) cache.layer(l);
  SweepReport sweep;
  sweep.config = std::move(echo);
  const std::vector<std::size_t> order(layers.begin(), layers.end());
  const std::size_t n_folds = plan.folds.size();
  std::vector<FoldResult> cells(order.size() * n_folds);
  const std::size_t n_classes = cache.label_names.size();
  numkit::parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const std::size_t layer = order[i / n_folds];
    cells[i] = probe_fold(cache.layer(layer), cache.labels, n_classes, plan.folds[i % n_folds], config, kind);
  });
  for (std::size_t li = 0; li < order.size(); ++li) {
    MetricReport& r = sweep.layers[order[li]];
    r.config = {{"layer", order[li]}};
    r.folds.assign(cells.begin() + static_cast<std::ptrdiff_t>(li * n_folds),
                   cells.begin() + static_cast<std::ptrdiff_t>((li + 1) * n_folds));
  }
  return sweep;
}

inline MetricReport evaluate_forest(const Tensord& features, const std::vector<int>& labels, std::size_t n_classes,
                                    const SplitPlan& plan, const baseline::ForestConfig& config, nlohmann::json echo = {}) {
  MetricReport report;
  report.config = std::move(echo);
  for (const auto& fold : plan.folds) {
    FoldResult r;
    r.fold = fold.name;
    r.n_train = fold.train.size();
    r.n_test = fold.test.size();
    try {
      const auto forest = baseline::train_forest(probe::detail::gather_rows(features, fold.train),
                                                 detail::pick(labels, fold.train), n_classes, config);
      const auto probs = baseline::forest_predict_proba(forest, probe::detail::gather_rows(features, fold.test), config.jobs);
      detail::score(r, detail::pick(labels, fold.test), probs, n_classes);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    report.folds.push_back(std::move(r));
  }
  return report;
}

// Adapters and probe trained per fold on the train rows, scored on the test rows.
inline MetricReport evaluate_lora(const lora::LoraTask& task, const weight_io::LoadedCheckpoint& ckpt,
                                  const SplitPlan& plan, const lora::LoraConfig& config, probe::ProbeKind kind,
                                  std::size_t jobs = 1, nlohmann::json echo = {}) {
  MetricReport report;
  report.config = std::move(echo);
  report.folds.resize(plan.folds.size());
  const auto w64 = ckpt.weights.cast<double>();
  numkit::parallel_for(plan.folds.size(), jobs, [&](std::size_t i) {
    const Fold& fold = plan.folds[i];
    FoldResult& r = report.folds[i];
    r.fold = fold.name;
    r.n_train = fold.train.size();
    r.n_test = fold.test.size();
    try {
      const auto trained = lora::train_adapters(task, fold.train, ckpt, config, kind);
      r.scaler_fitted_on = trained.probe.scaler.fitted_on;
      const auto x = lora::adapted_embeddings(task, fold.test, w64, ckpt.config, trained.adapters);
      detail::score(r, detail::pick(task.labels, fold.test), probe::predict_proba(trained.probe, x), task.n_classes);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  });
  return report;
}

}  // namespace xmodal::evalkit
