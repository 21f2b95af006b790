#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/ingest/manifest.hpp"
#include "xmodal/numkit/rng.hpp"

namespace xmodal::evalkit {

struct Fold {
  std::string name;  // subject id for LOSO, "fold<i>" for k-fold
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct SplitPlan {
  std::string scheme;  // "loso" or "kfold"
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& fold : folds) f.push_back({{"name", fold.name}, {"train", fold.train}, {"test", fold.test}});
    return {{"scheme", scheme}, {"k", k}, {"seed", seed}, {"folds", f}};
  }
};

namespace detail {

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace detail

// One fold per subject. `rows` limits the plan to those records (e.g. the
// ones whose embeddings exist); empty means all.
inline SplitPlan make_loso_splits(std::span<const std::string> subjects, std::vector<std::size_t> rows = {}) {
  if (rows.empty()) rows = detail::all_rows(subjects.size());
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t r : rows) by_subject[subjects[r]].push_back(r);
  if (by_subject.size() < 2) {
    throw ValidationError("leave-one-subject-out needs at least 2 subjects, got " + std::to_string(by_subject.size()));
  }
  SplitPlan plan;
  plan.scheme = "loso";
  plan.k = by_subject.size();
  for (const auto& [subject, test] : by_subject) {
    Fold f{subject, {}, test};
    for (std::size_t r : rows)
      if (subjects[r] != subject) f.train.push_back(r);
    std::sort(f.train.begin(), f.train.end());
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

// Stratified k-fold: each class is shuffled with the seed and dealt
// round-robin; the dealing position carries over from one class to the next
// so overall fold sizes also differ by at most one.
inline SplitPlan make_kfold_splits(std::span<const int> labels, std::size_t k, std::uint64_t seed,
                                   std::vector<std::size_t> rows = {}, std::span<const std::string> label_names = {}) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2, got " + std::to_string(k));
  if (rows.empty()) rows = detail::all_rows(labels.size());
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r : rows) by_class[labels[r]].push_back(r);
  for (const auto& [label, members] : by_class) {
    if (members.size() < k) {
      const std::string name = label >= 0 && static_cast<std::size_t>(label) < label_names.size()
                                   ? "'" + label_names[static_cast<std::size_t>(label)] + "'"
                                   : std::to_string(label);
      throw StratificationError("class " + name + " has " + std::to_string(members.size()) + " records, fewer than k=" +
                                std::to_string(k));
    }
  }
  numkit::Rng rng(seed);
  std::vector<std::vector<std::size_t>> test(k);
  std::size_t offset = 0;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j) test[(offset + j) % k].push_back(members[j]);
    offset = (offset + members.size()) % k;
  }
  SplitPlan plan;
  plan.scheme = "kfold";
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < k; ++i) {
    std::sort(test[i].begin(), test[i].end());
    Fold f{"fold" + std::to_string(i), {}, test[i]};
    for (std::size_t r : rows)
      if (!std::binary_search(test[i].begin(), test[i].end(), r)) f.train.push_back(r);
    std::sort(f.train.begin(), f.train.end());
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

inline SplitPlan make_splits(const ingest::EvalScheme& scheme, std::span<const int> labels,
                             std::span<const std::string> subjects, std::uint64_t seed, std::vector<std::size_t> rows = {},
                             std::span<const std::string> label_names = {}) {
  if (scheme.type == ingest::EvalScheme::Type::loso) return make_loso_splits(subjects, std::move(rows));
  return make_kfold_splits(labels, scheme.k, seed, std::move(rows), label_names);
}

// Checks the plan invariants; returns a description of the first violation
// or an empty string.
inline std::string check_plan(const SplitPlan& plan, std::span<const std::string> subjects, std::vector<std::size_t> rows) {
  std::sort(rows.begin(), rows.end());
  std::vector<std::size_t> seen;
  for (const auto& f : plan.folds) {
    std::set<std::size_t> train(f.train.begin(), f.train.end());
    for (std::size_t r : f.test) {
      if (train.count(r)) return f.name + ": record " + std::to_string(r) + " in train and test";
      seen.push_back(r);
    }
    std::vector<std::size_t> both(f.train);
    both.insert(both.end(), f.test.begin(), f.test.end());
    std::sort(both.begin(), both.end());
    if (both != rows) return f.name + ": train and test do not partition the records";
    if (plan.scheme == "loso") {
      std::set<std::string> test_subjects;
      for (std::size_t r : f.test) test_subjects.insert(subjects[r]);
      for (std::size_t r : f.train)
        if (test_subjects.count(subjects[r])) return f.name + ": subject " + subjects[r] + " on both sides";
    }
  }
  std::sort(seen.begin(), seen.end());
  if (seen != rows) return "test sets do not cover every record exactly once";
  return {};
}

}  // namespace xmodal::evalkit
