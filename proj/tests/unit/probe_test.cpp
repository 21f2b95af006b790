#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "xmodal/numkit/gradcheck.hpp"
#include "xmodal/probe/probe.hpp"

using namespace xmodal;
using namespace xmodal::probe;
using testing_support::random_tensor;

namespace {

// Two 2-D clusters split by the sign of x0 with margin >= 1.
void separable_set(std::size_t n, std::uint64_t seed, Tensord& x, std::vector<int>& y) {
  numkit::Rng rng(seed);
  x = Tensord({n, 2});
  y.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    x.at(i, 0) = (label ? 1.0 : -1.0) * rng.uniform(1.0, 3.0);
    x.at(i, 1) = rng.normal(0.0, 2.0);
    y.push_back(label);
  }
}

void noisy_set(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed, Tensord& x, std::vector<int>& y) {
  x = random_tensor({n, d}, seed);
  y.clear();
  for (std::size_t i = 0; i < n; ++i) {
    y.push_back(static_cast<int>(i % classes));
    x.at(i, 0) += 0.7 * double(i % classes);
  }
}

double accuracy(const ProbeModel& m, const Tensord& x, const std::vector<int>& y) {
  const auto pred = argmax_rows(predict_proba(m, x));
  double hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
  return hits / double(y.size());
}

}  // namespace

TEST(Probe, LinearlySeparableReachesPerfectAccuracy) {
  Tensord x;
  std::vector<int> y;
  separable_set(80, 1, x, y);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 16;
  for (auto kind : {ProbeKind::linear, ProbeKind::mlp}) {
    cfg.hidden_dim = 16;
    const auto r = train_probe(x, y, 2, cfg, kind);
    EXPECT_EQ(accuracy(r.model, x, y), 1.0) << kind_name(kind);
    EXPECT_EQ(r.loss_curve.size(), 60u);
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
  }
}

TEST(Probe, SingleClassIsDegenerate) {
  const auto x = random_tensor({10, 3}, 1);
  EXPECT_THROW(train_probe(x, std::vector<int>(10, 1), 2, TrainConfig{}, ProbeKind::linear), DegenerateLabelsError);
}

TEST(Probe, ZeroEpochsReturnsInitialModel) {
  Tensord x;
  std::vector<int> y;
  separable_set(10, 2, x, y);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 9;
  const auto r = train_probe(x, y, 2, cfg, ProbeKind::mlp);
  EXPECT_TRUE(r.loss_curve.empty());
  EXPECT_EQ(r.model.epochs_run, 0u);
  EXPECT_EQ(r.model.params, init_probe(ProbeKind::mlp, 2, 2, cfg.hidden_dim, 9).params);
}

TEST(Predict, ZeroWeightsGiveUniform) {
  auto m = init_probe(ProbeKind::linear, 4, 5, 0, 1);
  for (auto& [name, p] : m.params) p = Tensord(p.shape());
  for (double v : predict(m, std::vector<double>{1, -2, 3, 4})) EXPECT_DOUBLE_EQ(v, 0.2);
  auto mlp = init_probe(ProbeKind::mlp, 4, 3, 8, 1);
  for (auto& [name, p] : mlp.params) p = Tensord(p.shape());
  for (double v : predict(mlp, std::vector<double>{1, -2, 3, 4})) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Predict, HandSetWeightsFollowSignOfFeatureZero) {
  auto m = init_probe(ProbeKind::linear, 3, 2, 0, 1);
  m.params["W"] = Tensord::matrix({{-1, 0, 0}, {1, 0, 0}});
  m.params["b"] = Tensord({2});
  numkit::Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> e{rng.normal(0, 1), rng.normal(0, 5), rng.normal(0, 5)};
    const auto p = predict(m, e);
    EXPECT_EQ(p[1] > p[0], e[0] > 0);
    // logits (-x0, x0): p1 = 1 / (1 + exp(-2 x0))
    EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(-2.0 * e[0])), 1e-12);
  }
}

TEST(Predict, ProbabilitiesSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto m = init_probe(seed % 2 ? ProbeKind::mlp : ProbeKind::linear, 6, 4, 10, seed);
    const auto x = random_tensor({7, 6}, seed + 100, 3.0);
    const auto p = predict_proba(m, x);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0;
      for (double v : p.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    auto shifted = m;
    auto& bias = shifted.params[m.kind == ProbeKind::linear ? "b" : "b2"];
    for (auto& v : bias.values()) v += 123.0;
    EXPECT_EQ(argmax_rows(predict_proba(shifted, x)), argmax_rows(p));
  }
  auto m = init_probe(ProbeKind::linear, 3, 2, 0, 1);
  EXPECT_THROW(predict(m, std::vector<double>{1, 2}), ShapeError);
}

TEST(ProbeGradients, FullLossMatchesFiniteDifferences) {
  for (auto kind : {ProbeKind::linear, ProbeKind::mlp}) {
    const auto model = init_probe(kind, 5, 3, 7, 3);
    const auto x = random_tensor({6, 5}, 8);
    const std::vector<int> y{0, 1, 2, 2, 1, 0};
    for (bool weighted : {false, true}) {
      const std::vector<double> w = weighted ? std::vector<double>{0.5, 2.0, 1.25} : std::vector<double>{};
      for (const auto& [target, value] : model.params) {
        const numkit::TapedFunction op = [&, target = target](ad::Tape& tape, ad::Var p) {
          std::map<std::string, ad::Var> vars;
          for (const auto& [name, t] : model.params) vars[name] = name == target ? p : tape.constant(t);
          return taped_loss(tape, kind, vars, tape.constant(x), y, w);
        };
        EXPECT_LT(numkit::finite_difference_check(op, value, 1e-5), 1e-6) << kind_name(kind) << " " << target;
      }
    }
  }
}

TEST(ProbeTraining, SmallStepDecreasesLoss) {
  Tensord x;
  std::vector<int> y;
  noisy_set(40, 5, 3, 2, x, y);
  for (auto kind : {ProbeKind::linear, ProbeKind::mlp}) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.weight_decay = 0.0;
    cfg.standardize = false;
    cfg.hidden_dim = 16;
    auto model = init_probe(kind, 5, 3, 16, 0);
    AdamState opt(cfg);
    const double before = probe_loss(model, x, y);
    const double reported = train_step(model, opt, x, y, {});
    EXPECT_DOUBLE_EQ(reported, before);
    EXPECT_LT(probe_loss(model, x, y), before);
  }
}

TEST(ProbeTraining, SameSeedIsBitIdentical) {
  Tensord x;
  std::vector<int> y;
  noisy_set(70, 6, 3, 5, x, y);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden_dim = 32;
  cfg.seed = 77;
  cfg.class_weighting = true;
  const auto a = train_probe(x, y, 3, cfg, ProbeKind::mlp);
  const auto b = train_probe(x, y, 3, cfg, ProbeKind::mlp);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  cfg.seed = 78;
  EXPECT_NE(train_probe(x, y, 3, cfg, ProbeKind::mlp).model.params, a.model.params);
}

TEST(ProbeTraining, DivergenceNamesEpoch) {
  Tensord x;
  std::vector<int> y;
  noisy_set(20, 3, 2, 5, x, y);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e306;
  cfg.epochs = 10;
  try {
    train_probe(x, y, 2, cfg, ProbeKind::linear);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(ProbeTraining, EarlyStoppingUsesHeldOutLoss) {
  Tensord x;
  std::vector<int> y;
  noisy_set(60, 20, 2, 9, x, y);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.patience = 3;
  cfg.learning_rate = 1e-2;
  cfg.hidden_dim = 64;
  const auto r = train_probe(x, y, 2, cfg, ProbeKind::mlp);
  EXPECT_LT(r.model.epochs_run, 400u);
  EXPECT_EQ(r.validation_curve.size(), r.model.epochs_run);
  // The scaler only saw the training part.
  EXPECT_EQ(r.model.scaler.fitted_on.size(), 54u);
}

TEST(ProbeTraining, ScalerRecordsCallerRowIds) {
  Tensord x;
  std::vector<int> y;
  separable_set(6, 3, x, y);
  const std::vector<std::size_t> rows{10, 11, 14, 20, 21, 30};
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train_probe(x, y, 2, cfg, ProbeKind::linear, rows);
  EXPECT_EQ(r.model.scaler.fitted_on, rows);
}

TEST(ProbeTraining, InverseFrequencyWeights) {
  const auto w = inverse_frequency_weights({0, 0, 0, 1}, 3);
  EXPECT_DOUBLE_EQ(w[0], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
  EXPECT_DOUBLE_EQ(w[2], 0.0);
}

TEST(ProbeSerialization, RoundTrip) {
  Tensord x;
  std::vector<int> y;
  noisy_set(30, 4, 3, 1, x, y);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_dim = 8;
  const auto r = train_probe(x, y, 3, cfg, ProbeKind::mlp);
  const auto back = probe_from_container(weight_io::parse(weight_io::serialize(probe_container(r.model, cfg))));
  EXPECT_EQ(back.params, r.model.params);
  EXPECT_EQ(back.scaler.mean, r.model.scaler.mean);
  EXPECT_EQ(back.scaler.fitted_on, r.model.scaler.fitted_on);
  EXPECT_EQ(predict_proba(back, x), predict_proba(r.model, x));
}
