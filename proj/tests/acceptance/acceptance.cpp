// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/baseline/features.hpp"
#include "xmodal/baseline/forest.hpp"
#include "xmodal/encoder/encoder.hpp"
#include "xmodal/encoder/taped.hpp"
#include "xmodal/evalkit/evaluate.hpp"
#include "xmodal/filterscope/filterscope.hpp"
#include "xmodal/ingest/synthetic.hpp"
#include "xmodal/lora/adapter.hpp"
#include "xmodal/numkit/gradcheck.hpp"
#include "xmodal/probe/probe.hpp"
#include "xmodal/weight_io/checkpoint.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensord randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  numkit::Rng rng(seed);
  Tensord t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(XMODAL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

struct Scratch {
  fs::path path;
  Scratch() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("xmodal_accept_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

encoder::EncoderConfig small_encoder() {
  encoder::EncoderConfig c;
  c.conv_layers = {{6, 10, 5}, {6, 3, 2}, {6, 3, 2}};
  c.d_model = 8;
  c.n_transformer_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.pos_conv_kernel = 4;
  c.pos_conv_groups = 2;
  return c;
}

encoder::EncoderWeights<double> weights_with_biases(const encoder::EncoderConfig& c, std::uint64_t seed) {
  auto map = encoder::random_weights<double>(c, seed).tensors();
  numkit::Rng rng(seed + 1);
  for (auto& [name, t] : map) {
    const bool bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (bias) {
      for (auto& v : t.values()) v = rng.normal(0.0, 0.1);
    } else if (name.find("norm") != std::string::npos) {
      for (auto& v : t.values()) v = 1.0 + rng.normal(0.0, 0.1);
    }
  }
  return encoder::EncoderWeights<double>(std::move(map));
}

// ---- criteria ----

Outcome frame_counts() {
  const auto conv = encoder::EncoderConfig::default_conv_layers();
  // independent fold of L -> floor((L - k) / s) + 1
  auto folded = [&](long length) {
    for (const auto& l : conv) {
      if (length < long(l.kernel)) return 0L;
      length = (length - long(l.kernel)) / long(l.stride) + 1;
    }
    return length;
  };
  bool ok = true;
  std::string detail;
  for (auto [len, expect] : std::vector<std::pair<std::size_t, std::size_t>>{{400, 1}, {1000, 2}, {16000, 49}}) {
    const std::size_t got = encoder::frame_count(len, conv);
    ok &= got == expect && long(got) == folded(long(len));
    detail += std::to_string(len) + "->" + std::to_string(got) + " ";
  }
  for (std::size_t len = 0; len < 20000; len += 7) ok &= long(encoder::frame_count(len, conv)) == folded(long(len));
  return {ok, detail + "(oracle agrees on 0..20000)"};
}

Outcome gradient_suite() {
  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, const numkit::TapedFunction& f, const Tensord& at) {
    const double e = numkit::finite_difference_check(f, at, h);
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  };

  // probes
  for (auto kind : {probe::ProbeKind::linear, probe::ProbeKind::mlp}) {
    const auto model = probe::init_probe(kind, 5, 3, 7, 3);
    const auto x = randn({6, 5}, 8);
    const std::vector<int> y{0, 1, 2, 2, 1, 0};
    for (const auto& [target, value] : model.params) {
      check(std::string(probe::kind_name(kind)) + " probe " + target,
            [&, target = target](ad::Tape& t, ad::Var p) {
              std::map<std::string, ad::Var> vars;
              for (const auto& [name, v] : model.params) vars[name] = name == target ? p : t.constant(v);
              return probe::taped_loss(t, kind, vars, t.constant(x), y, {});
            },
            value);
    }
  }
  // softmax cross-entropy
  const std::vector<int> labels{0, 2, 1, 2};
  check("softmax-cross-entropy", [&](ad::Tape& t, ad::Var x) { return ad::softmax_cross_entropy(t, x, labels); },
        randn({4, 3}, 9));
  // layer_norm: input, gain, bias
  const auto point = randn({3, 6}, 15), gain = randn({6}, 13), bias = randn({6}, 14), mix = randn({3, 6}, 12);
  check("layer_norm x", [&](ad::Tape& t, ad::Var x) {
    return ad::mul_const(t, ad::layer_norm(t, x, t.constant(gain), t.constant(bias), 1e-5), mix);
  }, point);
  check("layer_norm gain", [&](ad::Tape& t, ad::Var g) {
    return ad::mul_const(t, ad::layer_norm(t, t.constant(point), g, t.constant(bias), 1e-5), mix);
  }, gain);
  check("layer_norm bias", [&](ad::Tape& t, ad::Var b) {
    return ad::mul_const(t, ad::layer_norm(t, t.constant(point), t.constant(gain), b, 1e-5), mix);
  }, bias);
  // attention and transformer blocks
  for (auto placement : {encoder::LayerNormPlacement::post, encoder::LayerNormPlacement::pre}) {
    auto c = small_encoder();
    c.layernorm_placement = placement;
    const auto w = weights_with_biases(c, 41);
    const auto aw = encoder::AttentionWeights<double>::from(w, 0);
    check("attention", [&](ad::Tape& t, ad::Var x) {
      return ad::mul_const(t, encoder::taped_attention(t, x, aw, c.n_heads), randn({4, 8}, 78));
    }, randn({4, 8}, 3));
    for (std::size_t block = 0; block < 2; ++block) {
      check("transformer block", [&](ad::Tape& t, ad::Var x) {
        return ad::mul_const(t, encoder::taped_transformer_block(t, x, w, c, block), randn({3, 8}, 77));
      }, randn({3, 8}, block + 1));
    }
  }
  // LoRA factors through two blocks
  const auto c = small_encoder();
  const auto w = encoder::random_weights<double>(c, 7);
  const auto input = randn({5, c.d_model}, 8), head = randn({1, c.d_model}, 9);
  for (auto proj : {lora::Projection::q, lora::Projection::v}) {
    const lora::LoraAdapter<double> base{1, proj, randn({2, c.d_model}, 10), randn({c.d_model, 2}, 11), 16.0};
    for (bool wrt_a : {true, false}) {
      check(std::string("lora ") + lora::projection_name(proj) + (wrt_a ? ".A" : ".B"), [&](ad::Tape& t, ad::Var p) {
        std::vector<encoder::TapedAdapter> adapters{
            {1, proj, wrt_a ? p : t.constant(base.a), wrt_a ? t.constant(base.b) : p, base.scaling()}};
        ad::Var hs = encoder::taped_transformer_block(t, t.constant(input), w, c, 0, &adapters);
        hs = encoder::taped_transformer_block(t, hs, w, c, 1, &adapters);
        return ad::sum(t, ad::mul_const(t, ad::mean_rows(t, hs), head));
      }, wrt_a ? base.a : base.b);
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " (" + worst_name + "), h=1e-5"};
}

Outcome lora_merge() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = randn({6, 5}, seed, 0.5);
    const std::size_t r = 1 + seed % 4;
    const lora::LoraAdapter<double> a{1, lora::Projection::q, randn({r, 5}, seed + 20), randn({6, r}, seed + 21), 16.0};
    const auto x = randn({100, 5}, seed + 40);
    worst = std::max(worst, max_abs_diff(lora::adapted_forward(x, w, a), numkit::linear(x, lora::merge(w, a))));
  }
  // B = 0 leaves the projection and the whole encoder bit-identical
  bool identity = true;
  const auto c = small_encoder();
  const auto w = encoder::random_weights<double>(c, 5);
  lora::AdapterSet<double> fresh;
  for (std::size_t l = 1; l <= 2; ++l)
    for (auto p : {lora::Projection::q, lora::Projection::v})
      fresh.push_back(lora::make_adapter<double>(l, p, c.d_model, c.d_model, 4, 16.0, l * 10 + std::size_t(p)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto wave = randn({200 + 13 * seed}, seed);
    identity &= encoder::encode(wave, w, c, {0, 1, 2}) == encoder::encode(wave, w, c, {0, 1, 2}, &fresh);
    const auto x = randn({7, 8}, seed + 100);
    const auto& q = w.get("encoder.layers.0.attention.q_proj.weight");
    identity &= lora::adapted_forward(x, q, fresh[0]) == numkit::linear(x, q);
  }
  return {worst < 1e-10 && identity, "max |adapted - merged| " + fmt("%.2e", worst) + ", B=0 identity " +
                                         (identity ? "exact" : "BROKEN")};
}

double oracle_macro_f1(const std::vector<int>& t, const std::vector<int>& p, std::size_t classes) {
  std::vector<std::vector<double>> cm(classes, std::vector<double>(classes, 0));
  for (std::size_t i = 0; i < t.size(); ++i) cm[t[i]][p[i]] += 1;
  double total = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    double col = 0, row = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      col += cm[o][c];
      row += cm[c][o];
    }
    const double prec = col > 0 ? cm[c][c] / col : 0.0, rec = row > 0 ? cm[c][c] / row : 0.0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return total / double(classes);
}

double oracle_binary_auc(const std::vector<int>& pos, const std::vector<double>& s) {
  double credit = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1;
      credit += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return credit / pairs;
}

void enumerate(std::size_t n, std::size_t base, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> v(n, 0);
  while (true) {
    f(v);
    std::size_t i = 0;
    while (i < n && ++v[i] == static_cast<int>(base)) v[i++] = 0;
    if (i == n) return;
  }
}

Outcome metric_oracles() {
  std::size_t cases = 0, mismatches = 0;
  for (std::size_t classes = 1; classes <= 3; ++classes)
    for (std::size_t n = 1; n <= 6; ++n)
      enumerate(2 * n, classes, [&](const std::vector<int>& v) {
        const std::vector<int> t(v.begin(), v.begin() + n), p(v.begin() + n, v.end());
        mismatches += evalkit::macro_f1(t, p, classes) != oracle_macro_f1(t, p, classes);
        ++cases;
      });
  // AUC: every label vector over 2 or 3 classes, scores on a coarse grid (ties included)
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t n = 2; n <= 6; ++n)
    enumerate(n, 2, [&](const std::vector<int>& y) {
      if (std::set<int>(y.begin(), y.end()).size() < 2) return;
      enumerate(n, grid.size(), [&](const std::vector<int>& idx) {
        std::vector<double> s;
        Tensord probs({n, 2});
        for (std::size_t i = 0; i < n; ++i) {
          s.push_back(grid[idx[i]]);
          probs.at(i, 1) = s[i];
          probs.at(i, 0) = 1 - s[i];
        }
        mismatches += evalkit::auc(y, probs) != oracle_binary_auc(y, s);
        ++cases;
      });
    });
  std::vector<Tensord> score_sets;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto t = randn({6, 3}, seed);
    for (auto& v : t.values()) v = std::round(v * 2) / 2;
    score_sets.push_back(t);
  }
  for (std::size_t n = 2; n <= 6; ++n)
    enumerate(n, 3, [&](const std::vector<int>& y) {
      const std::set<int> present(y.begin(), y.end());
      if (present.size() < 2) return;
      for (const auto& full : score_sets) {
        Tensord probs({n, 3});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < 3; ++c) probs.at(i, c) = full.at(i, c);
        double total = 0;
        for (int c : present) {
          std::vector<int> pos;
          std::vector<double> s;
          for (std::size_t i = 0; i < n; ++i) {
            pos.push_back(y[i] == c);
            s.push_back(probs.at(i, std::size_t(c)));
          }
          total += oracle_binary_auc(pos, s);
        }
        mismatches += evalkit::auc(y, probs) != total / double(present.size());
        ++cases;
      }
    });
  const double f1 = evalkit::macro_f1(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 1, 1}, 2);
  const double a = evalkit::binary_auc(std::vector<int>{0, 0, 1, 1}, std::vector<double>{0.1, 0.4, 0.35, 0.8});
  const bool worked = std::abs(f1 - (2.0 / 3 + 4.0 / 5) / 2) < 1e-15 && a == 0.75;
  return {mismatches == 0 && worked, std::to_string(cases) + " cases, " + std::to_string(mismatches) +
                                         " mismatches; worked examples " + fmt("%.4f", f1) + ", " + fmt("%.2f", a)};
}

Outcome split_integrity() {
  numkit::Rng rng(2024);
  std::size_t violations = 0, kfold_plans = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(4), classes = 2 + rng.below(3), n_subjects = 2 + rng.below(5);
    std::vector<int> labels;
    std::vector<std::string> subjects;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0, count = k + rng.below(12); i < count; ++i) labels.push_back(int(c));
    for (std::size_t i = 0; i < labels.size(); ++i)
      subjects.push_back("s" + std::to_string(i < n_subjects ? i : rng.below(n_subjects)));
    std::vector<std::size_t> rows;
    std::map<int, std::size_t> kept;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (rng.below(10) == 0 && i >= n_subjects) continue;
      rows.push_back(i);
      ++kept[labels[i]];
    }
    // LOSO: each fold's test set is exactly one subject, never in train; rows covered once
    const auto loso = evalkit::make_loso_splits(subjects, rows);
    std::vector<std::size_t> seen;
    for (const auto& f : loso.folds) {
      std::set<std::string> test_subjects, train_subjects;
      for (auto r : f.test) test_subjects.insert(subjects[r]);
      for (auto r : f.train) train_subjects.insert(subjects[r]);
      violations += test_subjects.size() != 1;
      for (const auto& s : test_subjects) violations += train_subjects.count(s);
      violations += f.test.size() + f.train.size() != rows.size();
      seen.insert(seen.end(), f.test.begin(), f.test.end());
    }
    std::sort(seen.begin(), seen.end());
    violations += seen != rows;
    violations += !evalkit::check_plan(loso, subjects, rows).empty();

    const bool stratifiable = std::all_of(kept.begin(), kept.end(), [&](const auto& kv) { return kv.second >= k; });
    if (!stratifiable) {
      try {
        evalkit::make_kfold_splits(labels, k, trial, rows);
        ++violations;
      } catch (const StratificationError&) {
      }
      continue;
    }
    ++kfold_plans;
    const auto plan = evalkit::make_kfold_splits(labels, k, trial, rows);
    violations += plan.folds.size() != k;
    seen.clear();
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::size_t> per;
      for (const auto& f : plan.folds)
        per.push_back(std::size_t(std::count_if(f.test.begin(), f.test.end(), [&](auto r) { return labels[r] == int(c); })));
      violations += *std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()) > 1;
    }
    for (const auto& f : plan.folds) {
      std::set<std::size_t> test(f.test.begin(), f.test.end());
      for (auto r : f.train) violations += test.count(r);
      violations += f.test.size() + f.train.size() != rows.size();
      seen.insert(seen.end(), f.test.begin(), f.test.end());
    }
    std::sort(seen.begin(), seen.end());
    violations += seen != rows;
  }
  return {violations == 0, "1000 manifests (" + std::to_string(kfold_plans) + " stratifiable), " +
                               std::to_string(violations) + " violations"};
}

Outcome end_to_end(const fs::path& scratch) {
  const auto toy = scratch / "e2e";
  if (run_cli("init-toy --out-dir " + toy.string(), scratch / "init.log") != 0) return {false, "init-toy failed"};
  const auto manifest = ingest::load_manifest(toy / "data" / "manifest.json");
  const auto ckpt = weight_io::load_checkpoint(toy / "checkpoint.xmc");
  const bool task_ok = manifest.size() == 200 && manifest.sample_rate == 100 && manifest.window_samples == 200 &&
                       manifest.preprocess.upsample == 2 && ckpt.config.n_transformer_layers == 2 &&
                       ckpt.config.d_model == 64;
  const auto labels = manifest.label_ids();
  const auto plan = evalkit::make_kfold_splits(labels, 5, 0, {}, manifest.labels);

  // engineered-feature forest first
  const std::size_t nf = baseline::feature_count(manifest.n_channels);
  Tensord feats({manifest.size(), nf});
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto f = baseline::engineered_features(ingest::load_window(manifest, i));
    std::copy(f.begin(), f.end(), feats.values().begin() + std::ptrdiff_t(i * nf));
  }
  const auto forest = evalkit::evaluate_forest(feats, labels, 2, plan, baseline::ForestConfig{});
  const double forest_f1 = forest.aggregate("macro_f1")->mean;

  extract::ExtractOptions opts;
  opts.layers = {0};
  opts.preprocess = manifest.preprocess;
  const auto cache = extract::extract_embeddings(manifest, ckpt, opts).cache;
  const auto mlp = evalkit::evaluate_probe(cache.layer(0), cache.labels, 2, plan, probe::TrainConfig{}, probe::ProbeKind::mlp);
  const auto agg = mlp.aggregate("macro_f1");
  const double f1 = agg ? agg->mean : 0.0;
  return {task_ok && forest_f1 >= 0.95 && f1 >= 0.90 && mlp.failed() == 0,
          "forest macro-F1 " + fmt("%.3f", forest_f1) + " (>= 0.95), layer-0 MLP macro-F1 " + fmt("%.3f", f1) +
              " (>= 0.90)"};
}

Outcome baseline_sanity() {
  std::size_t checked = 0, off = 0;
  double worst_bins = 0;
  for (double fs_hz : {50.0, 100.0, 128.0})
    for (std::size_t n : {64u, 200u, 257u, 1000u})
      for (double frac : {0.03, 0.1, 0.17, 0.25, 0.31, 0.44}) {
        const double f = frac * fs_hz;
        ingest::WindowRecord w;
        w.sample_rate = fs_hz;
        w.data = Tensord({1, n});
        for (std::size_t t = 0; t < n; ++t) w.data.at(0, t) = std::sin(2 * std::numbers::pi * f * double(t) / fs_hz + 0.3);
        const auto feats = baseline::engineered_features(w);
        const auto names = baseline::feature_names(1);
        const double dom = feats[std::size_t(std::find(names.begin(), names.end(), "ch0.dominant_hz") - names.begin())];
        const double bins = std::abs(dom - f) / (fs_hz / double(n));
        worst_bins = std::max(worst_bins, bins);
        off += bins > 1.0;
        ++checked;
      }
  // seeded forest determinism, including across worker counts
  numkit::Rng rng(3);
  Tensord x({150, 6});
  std::vector<int> y;
  for (std::size_t i = 0; i < 150; ++i) {
    y.push_back(int(i % 3));
    for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = rng.normal(j < 2 ? double(y.back()) : 0.0, 1.0);
  }
  baseline::ForestConfig cfg;
  cfg.n_trees = 40;
  cfg.seed = 17;
  const auto p1 = baseline::forest_predict_proba(baseline::train_forest(x, y, 3, cfg), x);
  const auto p2 = baseline::forest_predict_proba(baseline::train_forest(x, y, 3, cfg), x);
  cfg.jobs = 4;
  const auto p3 = baseline::forest_predict_proba(baseline::train_forest(x, y, 3, cfg), x, 4);
  const bool det = p1 == p2 && p1 == p3;
  return {off == 0 && det, std::to_string(checked) + " sinusoids, worst " + fmt("%.2f", worst_bins) +
                               " bins off; forest predictions " + (det ? "bit-identical" : "DIFFER")};
}

Outcome filterscope_checks(const fs::path& scratch) {
  using namespace filterscope;
  const auto ma = classify_response(frequency_response(std::vector<double>{0.25, 0.25, 0.25, 0.25}));
  const auto diff = classify_response(frequency_response(std::vector<double>{1.0, -1.0}));
  const auto imp = classify_response(frequency_response(std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0}));
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto t = randn({1 + seed % 40}, seed);
    const std::vector<double> taps(t.values().begin(), t.values().end());
    const auto X = padded_dft(taps, 64);
    double e = 0, s = 0;
    for (double v : taps) e += v * v;
    for (const auto& z : X) s += std::norm(z);
    worst = std::max(worst, std::abs(s / 64.0 - e));
  }
  const auto toy = scratch / "viz-toy", out = scratch / "viz";
  bool files = run_cli("init-toy --n-windows 4 --out-dir " + toy.string(), scratch / "vinit.log") == 0 &&
               run_cli("viz --checkpoint " + (toy / "checkpoint.xmc").string() + " --top-k 8 --out-dir " + out.string(),
                       scratch / "viz.log") == 0;
  files = files && count_of(slurp(out / "filters.csv"), "\n") == 1 + 8 * 257 &&
          count_of(slurp(out / "filters.svg"), "<polyline") == 8;
  const bool ok = ma == Band::lowpass && diff == Band::highpass && imp == Band::broadband && worst < 1e-9 && files;
  return {ok, std::string(band_name(ma)) + "/" + band_name(diff) + "/" + band_name(imp) + ", Parseval " +
                  fmt("%.1e", worst) + ", CSV+SVG " + (files ? "written" : "MISSING")};
}

Outcome reproducibility(const fs::path& scratch) {
  const auto toy = scratch / "repro";
  if (run_cli("init-toy --n-windows 60 --out-dir " + toy.string(), scratch / "rinit.log") != 0) return {false, "init-toy failed"};
  const std::string inputs = " --manifest " + (toy / "data" / "manifest.json").string() + " --checkpoint " +
                             (toy / "checkpoint.xmc").string();
  const auto cache = (scratch / "repro.xmc").string();
  if (run_cli("extract" + inputs + " --cache " + cache, scratch / "rext.log") != 0) return {false, "extract failed"};
  struct Case {
    std::string name, args;
  };
  const std::vector<Case> cases{
      {"evaluate", "evaluate" + inputs + " --layers 1 --epochs 10 --seed 3"},
      {"evaluate", "evaluate --cache " + cache + " --scheme loso --probe linear --epochs 10"},
      {"sweep", "sweep --cache " + cache + " --scheme kfold --k 3 --epochs 10 --seed 9"},
      {"sweep", "sweep" + inputs + " --layers 0,2 --epochs 5 --patience 2"}};
  std::size_t identical = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto first = scratch / ("a" + std::to_string(i) + ".json"), again = scratch / ("b" + std::to_string(i) + ".json");
    if (run_cli(cases[i].args + " --out " + first.string(), scratch / "r1.log") != 0) continue;
    if (run_cli(cases[i].name + " --jobs 2 --config " + first.string() + " --out " + again.string(), scratch / "r2.log") != 0)
      continue;
    const auto a = slurp(first);
    identical += !a.empty() && a == slurp(again);
  }
  return {identical == cases.size(),
          std::to_string(identical) + "/" + std::to_string(cases.size()) + " evaluate/sweep artifacts bit-identical on rerun"};
}

}  // namespace

int main() {
  Scratch scratch;
  struct Criterion {
    std::string name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"frame-count oracle", 1, frame_counts},
      {"gradient suite", 30, gradient_suite},
      {"LoRA merge equivalence", 0, lora_merge},
      {"metric oracles", 0, metric_oracles},
      {"split integrity", 0, split_integrity},
      {"end-to-end synthetic pipeline", 300, [&] { return end_to_end(scratch.path); }},
      {"baseline sanity", 0, baseline_sanity},
      {"filterscope", 0, [&] { return filterscope_checks(scratch.path); }},
      {"reproducibility", 0, [&] { return reproducibility(scratch.path); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2f s", secs);
    if (c.budget_s > 0) {
      timing += fmt(" (limit %.0f s)", c.budget_s);
      if (secs >= c.budget_s) {
        o.pass = false;
        o.detail += "; over time";
      }
    }
    std::printf("%s  %-30s %s  [%s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - std::size_t(failed), criteria.size());
  return failed ? 1 : 0;
}
