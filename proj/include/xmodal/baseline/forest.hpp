#pragma once

// CART random forest (Gini splits) with a JSON text form; see
// docs/forest_format.md for the layout.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/numkit/parallel.hpp"
#include "xmodal/numkit/rng.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::baseline {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;  // 0 = unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0 = floor(sqrt(F))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const {
    if (n_trees < 1) throw ConfigError("forest needs at least one tree");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be at least 1");
  }

  std::size_t features_per_split(std::size_t n_features) const {
    if (max_features > 0) return std::min(max_features, n_features);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(double(n_features)))));
  }

  // jobs is deliberately absent: it never changes the result.
  nlohmann::json to_json() const {
    return {{"n_trees", n_trees},     {"max_depth", max_depth}, {"min_samples_leaf", min_samples_leaf},
            {"max_features", max_features}, {"bootstrap", bootstrap}, {"seed", seed}};
  }
  static ForestConfig from_json(const nlohmann::json& j) {
    ForestConfig c;
    c.n_trees = j.value("n_trees", c.n_trees);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
    c.max_features = j.value("max_features", c.max_features);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  std::size_t left = 0, right = 0;
  std::vector<double> distribution;  // leaves only; class fractions

  bool leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const std::vector<double>& leaf_for(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].leaf()) i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].distribution;
  }
  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      best = std::max(best, d[i]);
      if (!nodes[i].leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
  }
};

struct Forest {
  ForestConfig config;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<std::string> feature_names;
  std::vector<Tree> trees;
};

// Rows drawn (with replacement when bootstrapping) for tree `index`.
inline std::vector<std::size_t> tree_sample(std::size_t n, const ForestConfig& config, std::size_t index) {
  std::vector<std::size_t> rows(n);
  if (!config.bootstrap) {
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  numkit::Rng rng(numkit::derive_seed(numkit::derive_seed(config.seed, index), 0));
  for (auto& r : rows) r = rng.below(n);
  return rows;
}

namespace detail {

inline double gini(const std::vector<double>& counts, double total) {
  if (total <= 0) return 0.0;
  double s = 1.0;
  for (double c : counts) s -= (c / total) * (c / total);
  return s;
}

class TreeBuilder {
 public:
  TreeBuilder(const Tensord& x, const std::vector<int>& y, std::size_t n_classes, const ForestConfig& config,
              std::size_t index)
      : x_(x), y_(y), classes_(n_classes), config_(config),
        rng_(numkit::derive_seed(numkit::derive_seed(config.seed, index), 1)) {}

  Tree build(std::vector<std::size_t> rows) {
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::size_t make_leaf(const std::vector<std::size_t>& rows) {
    TreeNode node;
    node.distribution.assign(classes_, 0.0);
    for (std::size_t r : rows) node.distribution[static_cast<std::size_t>(y_[r])] += 1.0;
    for (auto& v : node.distribution) v /= double(rows.size());
    tree_.nodes.push_back(std::move(node));
    return tree_.nodes.size() - 1;
  }

  std::size_t grow(std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t n = rows.size();
    bool pure = true;
    for (std::size_t r : rows) pure &= y_[r] == y_[rows[0]];
    const bool depth_capped = config_.max_depth > 0 && depth >= config_.max_depth;
    if (pure || depth_capped || n < 2 * config_.min_samples_leaf) return make_leaf(rows);

    // Features in random order; the first `k` are always examined, later ones
    // only until some valid split turns up.
    const std::size_t f_count = x_.cols();
    std::vector<std::size_t> features(f_count);
    std::iota(features.begin(), features.end(), 0);
    rng_.shuffle(features);
    const std::size_t k = config_.features_per_split(f_count);

    std::vector<double> total(classes_, 0.0);
    for (std::size_t r : rows) total[static_cast<std::size_t>(y_[r])] += 1.0;
    const double parent = gini(total, double(n));

    int best_feature = -1;
    double best_threshold = 0.0, best_score = parent;
    std::vector<std::pair<double, int>> column(n);
    for (std::size_t fi = 0; fi < f_count; ++fi) {
      if (fi >= k && best_feature >= 0) break;
      const std::size_t f = features[fi];
      for (std::size_t i = 0; i < n; ++i) column[i] = {x_.at(rows[i], f), y_[rows[i]]};
      std::sort(column.begin(), column.end());
      std::vector<double> left(classes_, 0.0);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left[static_cast<std::size_t>(column[i].second)] += 1.0;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1, nr = n - nl;
        if (nl < config_.min_samples_leaf || nr < config_.min_samples_leaf) continue;
        std::vector<double> right(classes_);
        for (std::size_t c = 0; c < classes_; ++c) right[c] = total[c] - left[c];
        const double score = (double(nl) * gini(left, double(nl)) + double(nr) * gini(right, double(nr))) / double(n);
        if (score < best_score - 1e-15 || (best_feature < 0 && score <= best_score)) {
          best_score = score;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (column[i].first + column[i + 1].first);
          if (best_threshold == column[i + 1].first) best_threshold = column[i].first;
        }
      }
    }
    if (best_feature < 0) return make_leaf(rows);

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) (x_.at(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? lrows : rrows).push_back(r);
    const std::size_t id = tree_.nodes.size();
    tree_.nodes.push_back({best_feature, best_threshold, 0, 0, {}});
    rows.clear();
    rows.shrink_to_fit();
    const std::size_t l = grow(lrows, depth + 1);
    const std::size_t r = grow(rrows, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const Tensord& x_;
  const std::vector<int>& y_;
  std::size_t classes_;
  const ForestConfig& config_;
  numkit::Rng rng_;
  Tree tree_;
};

}  // namespace detail

inline Forest train_forest(const Tensord& x, const std::vector<int>& y, std::size_t n_classes, const ForestConfig& config,
                           std::vector<std::string> feature_names = {}) {
  config.validate();
  if (x.rank() != 2 || x.rows() != y.size()) throw ShapeError("forest: feature rows and labels disagree");
  if (x.rows() == 0) throw ValidationError("forest: no training rows");
  const std::set<int> present(y.begin(), y.end());
  if (present.size() < 2) {
    throw DegenerateLabelsError("forest training needs at least 2 classes, got " + std::to_string(present.size()));
  }
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) throw ValidationError("forest: label out of range");
  if (!x.all_finite()) throw ValidationError("forest: non-finite feature value");

  Forest forest;
  forest.config = config;
  forest.n_features = x.cols();
  forest.n_classes = n_classes;
  forest.feature_names = std::move(feature_names);
  forest.trees.resize(config.n_trees);
  numkit::parallel_for(config.n_trees, config.jobs, [&](std::size_t t) {
    forest.trees[t] = detail::TreeBuilder(x, y, n_classes, config, t).build(tree_sample(x.rows(), config, t));
  });
  return forest;
}

// Mean of the leaf distributions reached in every tree.
inline std::vector<double> forest_predict(const Forest& forest, std::span<const double> features) {
  if (features.size() != forest.n_features) {
    throw ShapeError("forest expects " + std::to_string(forest.n_features) + " features, got " +
                     std::to_string(features.size()));
  }
  std::vector<double> p(forest.n_classes, 0.0);
  for (const auto& tree : forest.trees) {
    const auto& d = tree.leaf_for(features);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += d[c];
  }
  for (auto& v : p) v /= double(forest.trees.size());
  return p;
}

inline Tensord forest_predict_proba(const Forest& forest, const Tensord& x, std::size_t jobs = 1) {
  Tensord out({x.rows(), forest.n_classes});
  numkit::parallel_for(x.rows(), jobs, [&](std::size_t r) {
    const auto p = forest_predict(forest, x.row(r));
    std::copy(p.begin(), p.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * forest.n_classes));
  });
  return out;
}

// Lowest index among maxima.
inline int argmax_class(std::span<const double> p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline nlohmann::json forest_to_json(const Forest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.leaf()) nodes.push_back({{"p", n.distribution}});
      else nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
    }
    trees.push_back({{"nodes", nodes}});
  }
  return {{"format", "xmodal-forest"}, {"version", 1},           {"config", f.config.to_json()},
          {"n_features", f.n_features}, {"n_classes", f.n_classes}, {"feature_names", f.feature_names},
          {"trees", trees}};
}

inline Forest forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "xmodal-forest") throw FormatError("not a forest document");
    if (j.at("version") != 1) throw FormatError("unsupported forest version " + j.at("version").dump());
    Forest f;
    f.config = ForestConfig::from_json(j.at("config"));
    f.n_features = j.at("n_features").get<std::size_t>();
    f.n_classes = j.at("n_classes").get<std::size_t>();
    f.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        if (jn.contains("p")) {
          n.distribution = jn.at("p").get<std::vector<double>>();
          if (n.distribution.size() != f.n_classes) throw FormatError("forest leaf has wrong class count");
        } else {
          n.feature = jn.at("f").get<int>();
          n.threshold = jn.at("t").get<double>();
          n.left = jn.at("l").get<std::size_t>();
          n.right = jn.at("r").get<std::size_t>();
        }
        t.nodes.push_back(std::move(n));
      }
      // children always come after their parent, which also rules out cycles
      for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.leaf()) continue;
        if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= f.n_features || n.left >= t.nodes.size() ||
            n.right >= t.nodes.size() || n.left <= i || n.right <= i) {
          throw FormatError("forest node references out of range");
        }
      }
      if (t.nodes.empty()) throw FormatError("forest tree has no nodes");
      f.trees.push_back(std::move(t));
    }
    if (f.trees.empty()) throw FormatError("forest has no trees");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("forest document: ") + e.what());
  }
}

}  // namespace xmodal::baseline
