#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::evalkit {

namespace detail {

inline void check_labels(std::span<const int> labels, std::size_t n_classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw ValidationError(std::string(what) + " label " + std::to_string(y) + " outside " + std::to_string(n_classes) +
                            " classes");
    }
  }
}

}  // namespace detail

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw ShapeError("accuracy: label vectors differ in length");
  if (y_true.empty()) throw ValidationError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hits += y_true[i] == y_pred[i];
  return double(hits) / double(y_true.size());
}

// Unweighted mean of per-class F1 over all n_classes; a class with no true
// and no predicted members scores 0.
inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw ShapeError("macro_f1: label vectors differ in length");
  if (n_classes == 0) throw ValidationError("macro_f1 needs at least one class");
  detail::check_labels(y_true, n_classes, "true");
  detail::check_labels(y_pred, n_classes, "predicted");
  std::vector<double> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = static_cast<std::size_t>(y_true[i]), p = static_cast<std::size_t>(y_pred[i]);
    if (t == p) {
      tp[t] += 1;
    } else {
      fp[p] += 1;
      fn[t] += 1;
    }
  }
  double total = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    total += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return total / double(n_classes);
}

// (concordant + 0.5 * tied) / (positives * negatives).
inline double binary_auc(std::span<const int> positive, std::span<const double> scores) {
  if (positive.size() != scores.size()) throw ShapeError("auc: labels and scores differ in length");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (positive[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) throw UndefinedAucError("AUC is undefined when only one class is present");
  std::sort(neg.begin(), neg.end());
  double credit = 0;
  for (double s : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), s);
    credit += double(lo - neg.begin()) + 0.5 * double(hi - lo);
  }
  return credit / (double(pos.size()) * double(neg.size()));
}

// Binary when probs has 2 columns (column 1 is the positive class), otherwise
// macro one-vs-rest over the classes present in y_true.
inline double auc(std::span<const int> y_true, const Tensord& probs) {
  if (probs.rank() != 2 || probs.rows() != y_true.size()) throw ShapeError("auc: probability matrix does not match labels");
  const std::size_t classes = probs.cols();
  detail::check_labels(y_true, classes, "true");
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < classes; ++c)
    if (std::find(y_true.begin(), y_true.end(), static_cast<int>(c)) != y_true.end()) present.push_back(c);
  if (present.size() < 2) throw UndefinedAucError("AUC is undefined when only one class is present");
  auto one_vs_rest = [&](std::size_t c) {
    std::vector<int> positive(y_true.size());
    std::vector<double> scores(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      positive[i] = y_true[i] == static_cast<int>(c);
      scores[i] = probs.at(i, c);
    }
    return binary_auc(positive, scores);
  };
  if (classes == 2) return one_vs_rest(1);
  double total = 0;
  for (std::size_t c : present) total += one_vs_rest(c);
  return total / double(present.size());
}

inline std::optional<double> try_auc(std::span<const int> y_true, const Tensord& probs) {
  try {
    return auc(y_true, probs);
  } catch (const UndefinedAucError&) {
    return std::nullopt;
  }
}

}  // namespace xmodal::evalkit
