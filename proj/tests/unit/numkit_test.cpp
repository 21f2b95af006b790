#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "xmodal/numkit/autodiff.hpp"
#include "xmodal/numkit/fft.hpp"
#include "xmodal/numkit/gradcheck.hpp"
#include "xmodal/numkit/kernels.hpp"
#include "xmodal/numkit/parallel.hpp"
#include "xmodal/numkit/rng.hpp"

using namespace xmodal;
namespace nk = xmodal::numkit;

namespace {

Tensord random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  nk::Rng rng(seed);
  Tensord t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST(Matmul, IdentityAndHandExpansion) {
  const auto id = Tensord::matrix({{1, 0}, {0, 1}});
  const auto a = Tensord::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(nk::matmul(id, a), a);
  const auto c = nk::matmul(a, Tensord::matrix({{5}, {6}}));
  EXPECT_EQ(c, Tensord::matrix({{17}, {39}}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  const Tensord a({2, 3}), b({2, 3});
  try {
    nk::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3] x [2x3]"), std::string::npos) << what;
  }
}

TEST(Matmul, AssociativityOnRandomChains) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = random_tensor({3, 3}, seed * 3 + 1);
    const auto b = random_tensor({3, 3}, seed * 3 + 2);
    const auto c = random_tensor({3, 3}, seed * 3 + 3);
    EXPECT_LT(max_abs_diff(nk::matmul(nk::matmul(a, b), c), nk::matmul(a, nk::matmul(b, c))), 1e-10);
  }
}

TEST(Conv1d, HandEvaluatedStride2) {
  const auto signal = Tensord::matrix({{1, 2, 3, 4}});
  const Tensord kernel({1, 1, 2}, std::vector<double>{1, 0});
  EXPECT_EQ(nk::conv1d(signal, kernel, 2), Tensord::matrix({{1, 3}}));
}

TEST(Conv1d, LengthEqualToKernelGivesOneFrame) {
  const auto signal = random_tensor({1, 7}, 3);
  const auto kernel = random_tensor({4, 1, 7}, 4);
  for (std::size_t stride : {1u, 2u, 5u}) EXPECT_EQ(nk::conv1d(signal, kernel, stride).dim(1), 1u);
}

TEST(Conv1d, TooShortCarriesLengths) {
  const Tensord signal({1, 4});
  const Tensord kernel({1, 1, 5});
  try {
    nk::conv1d(signal, kernel, 1);
    FAIL() << "expected InputTooShortError";
  } catch (const InputTooShortError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("4"), std::string::npos);
    EXPECT_NE(what.find("5"), std::string::npos);
  }
}

TEST(Conv1d, OneHotKernelReproducesSlice) {
  const auto signal = random_tensor({1, 20}, 11);
  for (std::size_t hot = 0; hot < 4; ++hot) {
    Tensord kernel({1, 1, 4});
    kernel[hot] = 1.0;
    const auto out = nk::conv1d(signal, kernel, 1);
    ASSERT_EQ(out.dim(1), 17u);
    for (std::size_t t = 0; t < 17; ++t) EXPECT_EQ(out[t], signal[t + hot]);
  }
}

TEST(Conv1d, GroupedMatchesPerGroupConvolution) {
  const auto signal = random_tensor({4, 12}, 21);
  const auto kernels = random_tensor({4, 2, 3}, 22);
  const auto grouped = nk::conv1d(signal, kernels, 1, 2);
  for (std::size_t g = 0; g < 2; ++g) {
    Tensord part_signal({2, 12}), part_kernels({2, 2, 3});
    std::copy_n(signal.data() + g * 24, 24, part_signal.data());
    std::copy_n(kernels.data() + g * 12, 12, part_kernels.data());
    const auto part = nk::conv1d(part_signal, part_kernels, 1);
    for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(part[i], grouped[g * part.size() + i]);
  }
}

TEST(LayerNorm, Examples) {
  const Tensord ones({2}, 1.0), zeros({2}, 0.0);
  const auto constant = nk::layer_norm(Tensord::matrix({{3, 3}}), ones, zeros, 1e-5);
  EXPECT_EQ(constant, Tensord::matrix({{0, 0}}));
  const auto y = nk::layer_norm(Tensord::matrix({{1, 3}}), ones, zeros, 1e-300);
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
  const auto b = Tensord::vector({0.5, -2.0});
  const auto shifted = nk::layer_norm(Tensord::matrix({{1, 7}}), zeros, b, 1e-5);
  EXPECT_EQ(shifted, Tensord::matrix({{0.5, -2.0}}));
}

TEST(LayerNorm, NormalizedMoments) {
  const Tensord ones({16}, 1.0), zeros({16}, 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = random_tensor({5, 16}, seed, 10.0);
    const auto y = nk::layer_norm(x, ones, zeros, 1e-5);
    for (std::size_t r = 0; r < 5; ++r) {
      double mean = 0, var = 0;
      for (double v : y.row(r)) mean += v;
      mean /= 16;
      for (double v : y.row(r)) var += (v - mean) * (v - mean);
      var /= 16;
      EXPECT_LT(std::abs(mean), 1e-9);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, Examples) {
  const auto half = nk::softmax(Tensord::matrix({{0, 0}}));
  EXPECT_EQ(half, Tensord::matrix({{0.5, 0.5}}));
  const auto quarter = nk::softmax(Tensord::matrix({{std::log(1.0), std::log(3.0)}}));
  EXPECT_NEAR(quarter[0], 0.25, 1e-15);
  EXPECT_NEAR(quarter[1], 0.75, 1e-15);
  const auto big = nk::softmax(Tensord::matrix({{1000, 0}}));
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto y = nk::softmax(random_tensor({4, 9}, seed, 10.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (double v : y.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Gelu, TanhApproximationTracksErfForm) {
  for (double x = -5; x <= 5; x += 0.25) {
    EXPECT_NEAR(nk::gelu_scalar(x, nk::GeluVariant::tanh), nk::gelu_scalar(x, nk::GeluVariant::erf), 1e-3);
  }
}

TEST(Tape, BackwardRunsInReverseAndEmptiesTape) {
  ad::Tape tape;
  auto x = tape.variable(random_tensor({2, 3}, 1));
  auto w = tape.variable(random_tensor({4, 3}, 2));
  auto y = ad::linear(tape, x, w);
  auto z = ad::gelu(tape, y);
  auto s = ad::sum(tape, z);
  std::vector<std::size_t> order;
  auto grads = tape.backward(s, &order);
  EXPECT_EQ(order, (std::vector<std::size_t>{s.index, z.index, y.index}));
  EXPECT_TRUE(tape.empty());
  EXPECT_EQ(grads[x].shape(), (Shape{2, 3}));
  EXPECT_EQ(grads[w].shape(), (Shape{4, 3}));
}

TEST(GradCheck, LinearFunctionIsExact) {
  // Central differences are exact for linear maps; what remains is rounding
  // in f, kept small relative to the gradient by O(1) weights.
  nk::Rng rng(7);
  Tensord w({3, 5});
  for (auto& v : w.values()) v = rng.uniform(0.5, 1.5);
  auto op = [&](ad::Tape& t, ad::Var x) { return ad::linear(t, x, t.constant(w)); };
  EXPECT_LT(nk::finite_difference_check(op, random_tensor({2, 5}, 8), 1e-5), 1e-10);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  const std::vector<int> labels{0, 2, 1, 2};
  auto op = [&](ad::Tape& t, ad::Var x) { return ad::softmax_cross_entropy(t, x, labels); };
  EXPECT_LT(nk::finite_difference_check(op, random_tensor({4, 3}, 9), 1e-5), 1e-6);
  auto weighted = [&](ad::Tape& t, ad::Var x) { return ad::softmax_cross_entropy(t, x, labels, {0.5, 2.0, 1.0}); };
  EXPECT_LT(nk::finite_difference_check(weighted, random_tensor({4, 3}, 10), 1e-5), 1e-6);
}

TEST(GradCheck, PrimitiveBackwardKernels) {
  const auto weights = random_tensor({3, 6}, 12);
  auto weighted_sum = [&](ad::Tape& t, ad::Var y) { return ad::mul_const(t, y, weights); };
  const auto gain = random_tensor({6}, 13);
  const auto bias = random_tensor({6}, 14);
  const double h = 1e-5;
  const auto point = random_tensor({3, 6}, 15);

  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var x) {
                  return weighted_sum(t, ad::layer_norm(t, x, t.constant(gain), t.constant(bias), 1e-5));
                },
                point, h),
            1e-6);
  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var x) { return weighted_sum(t, ad::softmax(t, x)); }, point, h),
            1e-6);
  for (auto variant : {nk::GeluVariant::tanh, nk::GeluVariant::erf}) {
    EXPECT_LT(nk::finite_difference_check(
                  [&](ad::Tape& t, ad::Var x) { return weighted_sum(t, ad::gelu(t, x, variant)); }, point, h),
              1e-6);
  }
  // Gain and bias gradients of layer_norm.
  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var g) {
                  return weighted_sum(t, ad::layer_norm(t, t.constant(point), g, t.constant(bias), 1e-5));
                },
                gain, h),
            1e-6);
  const auto conv_kernels = random_tensor({4, 1, 3}, 16);
  const auto conv_weights = random_tensor({4, 2}, 17);
  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var x) {
                  auto y = ad::conv1d(t, x, t.constant(conv_kernels), 2, 2);
                  return ad::mul_const(t, y, conv_weights);
                },
                random_tensor({2, 6}, 18), h),
            1e-6);
  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var k) {
                  auto y = ad::conv1d(t, t.constant(random_tensor({2, 6}, 18)), k, 2, 2);
                  return ad::mul_const(t, y, conv_weights);
                },
                conv_kernels, h),
            1e-6);
  EXPECT_LT(nk::finite_difference_check(
                [&](ad::Tape& t, ad::Var x) {
                  auto parts = std::vector<ad::Var>{ad::slice_cols(t, x, 0, 2), ad::slice_cols(t, x, 3, 3)};
                  auto joined = ad::concat_cols(t, parts);
                  auto stacked = ad::concat_rows(t, {joined, ad::pad_cols(t, ad::slice_cols(t, x, 1, 4), 1, 0)});
                  return ad::mul_const(t, ad::mean_rows(t, ad::transpose(t, ad::transpose(t, stacked))),
                                       random_tensor({1, 5}, 19));
                },
                point, h),
            1e-8);
}

TEST(GradCheck, NonFiniteIsNumericInstability) {
  auto op = [](ad::Tape& t, ad::Var x) { return ad::scale(t, x, std::numeric_limits<double>::infinity()); };
  EXPECT_THROW(nk::finite_difference_check(op, Tensord({2}, 1.0), 1e-5), NumericInstabilityError);
}

TEST(Fft, MatchesNaiveDft) {
  for (std::size_t n : {1u, 2u, 8u, 12u, 200u, 257u}) {
    nk::Rng rng(n);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto fast = nk::dft(x);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> ref = 0;
      for (std::size_t t = 0; t < n; ++t) {
        ref += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
      }
      EXPECT_LT(std::abs(fast[k] - ref), 1e-9) << "n=" << n << " k=" << k;
    }
  }
}

TEST(Rng, SeededStreamsAreReproducible) {
  nk::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_NE(nk::derive_seed(1, 0), nk::derive_seed(1, 1));
}

TEST(Parallel, EveryIndexRunsOnceAndErrorsPropagate) {
  std::vector<int> hits(100, 0);
  nk::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(nk::parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw Error("boom"); }), Error);
}
