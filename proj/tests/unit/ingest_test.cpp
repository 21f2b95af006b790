#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"
#include "xmodal/encoder/config.hpp"
#include "xmodal/ingest/manifest.hpp"
#include "xmodal/ingest/synthetic.hpp"

using namespace xmodal;
using namespace xmodal::ingest;
using testing_support::TempDir;

namespace {

WindowRecord window_of(std::initializer_list<std::initializer_list<double>> rows, double rate = 50.0) {
  WindowRecord w;
  w.data = Tensord::matrix(rows);
  w.sample_rate = rate;
  return w;
}

const char* kToyManifest = R"({
  "name": "toy", "sample_rate": 4, "window_samples": 2, "n_channels": 1,
  "labels": ["a", "b"], "eval_scheme": {"type": "loso"},
  "records": [
    {"data": [[1, 2]], "label": "a", "subject": "s1"},
    {"data": [[3, 4]], "label": 1, "subject": "s2"}
  ]
})";

}  // namespace

TEST(Upsample, FactorOneIsIdentity) {
  const auto w = window_of({{1, 5, -2}});
  const auto out = upsample(w, 1);
  EXPECT_EQ(out.data, w.data);
  EXPECT_EQ(out.sample_rate, w.sample_rate);
}

TEST(Upsample, LinearWithEndRepeat) {
  const auto out = upsample(window_of({{0, 2}}), 2);
  EXPECT_EQ(out.data, Tensord::matrix({{0, 1, 2, 2}}));
  EXPECT_EQ(out.sample_rate, 100.0);
  const auto three = upsample(window_of({{0, 3}, {6, 0}}), 3);
  EXPECT_EQ(three.data, Tensord::matrix({{0, 1, 2, 3, 3, 3}, {6, 4, 2, 0, 0, 0}}));
}

TEST(Upsample, TwoSecondWindowReachesEncoderMinimum) {
  const auto out = upsample(WindowRecord{Tensord({3, 200}), 100.0, 0, ""}, 2);
  EXPECT_EQ(out.samples(), 400u);
  const auto conv = encoder::EncoderConfig::default_conv_layers();
  EXPECT_EQ(out.samples(), encoder::min_input_length(conv));
  EXPECT_EQ(encoder::frame_count(out.samples(), conv), 1u);
}

TEST(Upsample, ComposedFactorsMultiplyLengths) {
  numkit::Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(50), a = 1 + rng.below(4), b = 1 + rng.below(4);
    const WindowRecord w{testing_support::random_tensor({2, n}, trial), 10.0, 0, ""};
    EXPECT_EQ(upsample(upsample(w, a), b).samples(), upsample(w, a * b).samples());
    EXPECT_EQ(upsample(w, a).samples(), a * n);
  }
}

TEST(Standardize, ExamplesAndGuard) {
  const auto out = standardize(window_of({{1, 3}, {7, 7}}));
  EXPECT_EQ(out.data, Tensord::matrix({{-1, 1}, {0, 0}}));
}

TEST(Standardize, IdempotentOnRandomWindows) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const WindowRecord w{testing_support::random_tensor({3, 5 + seed % 40}, seed, 1.0 + double(seed)), 1.0, 0, ""};
    const auto once = standardize(w);
    EXPECT_LT(max_abs_diff(standardize(once).data, once.data), 1e-9);
  }
}

TEST(Channelize, Examples) {
  const auto ecg = window_of({{0.1, 0.2, 0.3}});
  const auto mono = channelize(ecg, ChannelStrategy::per_axis);
  ASSERT_EQ(mono.size(), 1u);
  EXPECT_EQ(mono[0], Tensord({3}, std::vector<double>{0.1, 0.2, 0.3}));

  const auto accel = window_of({{3, 3, 3, 3}, {4, 4, 4, 4}, {0, 0, 0, 0}});
  const auto mag = channelize(accel, ChannelStrategy::magnitude);
  ASSERT_EQ(mag.size(), 1u);
  EXPECT_EQ(mag[0], Tensord({4}, 5.0));

  const auto axes = channelize(accel, ChannelStrategy::per_axis);
  ASSERT_EQ(axes.size(), 3u);
  for (const auto& a : axes) EXPECT_EQ(a.size(), 4u);
}

TEST(Manifest, ToyManifestLoads) {
  const auto m = parse_manifest(kToyManifest);
  EXPECT_EQ(m.name, "toy");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.label_ids(), (std::vector<int>{0, 1}));
  EXPECT_EQ(load_window(m, 1).data, Tensord::matrix({{3, 4}}));
  EXPECT_EQ(m.eval_scheme.type, EvalScheme::Type::loso);
  EXPECT_TRUE(m.preprocess.standardize);
  EXPECT_EQ(m.preprocess.channel_strategy, ChannelStrategy::per_axis);
}

TEST(Manifest, BlankSubjectUnderLosoRejected) {
  std::string text = kToyManifest;
  text.replace(text.find("\"s2\""), 4, "\"  \"");
  EXPECT_THROW(parse_manifest(text), ValidationError);
}

TEST(Manifest, ChannelMismatchRejected) {
  const char* text = R"({
    "name": "x", "sample_rate": 4, "window_samples": 2, "n_channels": 3,
    "labels": ["a"], "eval_scheme": {"type": "kfold", "k": 2},
    "records": [{"data": [[1, 2], [3, 4]], "label": "a"}]
  })";
  EXPECT_THROW(parse_manifest(text), ValidationError);
}

TEST(Manifest, ReportsEveryOffendingRecordAndOnlyThose) {
  numkit::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    nlohmann::json records = nlohmann::json::array();
    std::vector<std::size_t> bad;
    const std::size_t n = 1 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json r{{"data", {{1.0, 2.0}}}, {"label", "a"}, {"subject", "s"}};
      switch (rng.below(5)) {
        case 0: r["label"] = "zzz"; bad.push_back(i); break;
        case 1: r["subject"] = ""; bad.push_back(i); break;
        case 2: r["data"] = {{1.0, 2.0}, {3.0, 4.0}}; bad.push_back(i); break;
        default: break;
      }
      records.push_back(r);
    }
    const nlohmann::json j{{"name", "p"},      {"sample_rate", 2},       {"window_samples", 2},
                           {"n_channels", 1},  {"labels", {"a", "b"}},   {"eval_scheme", {{"type", "loso"}}},
                           {"records", records}};
    if (bad.empty()) {
      EXPECT_NO_THROW(parse_manifest(j.dump()));
      continue;
    }
    try {
      parse_manifest(j.dump());
      FAIL();
    } catch (const ManifestError& e) {
      ASSERT_EQ(e.issues().size(), bad.size());
      for (std::size_t k = 0; k < bad.size(); ++k) {
        EXPECT_EQ(e.issues()[k].rfind("record " + std::to_string(bad[k]) + ":", 0), 0u) << e.issues()[k];
      }
    }
  }
}

TEST(Manifest, BinaryAndCsvRecords) {
  TempDir dir;
  weight_io::ByteWriter blob;
  for (float v : {9.0f, 9.0f, 1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) blob.f32(v);
  weight_io::write_file_atomic(dir / "d.f32", blob.bytes());
  std::ofstream(dir / "r.csv") << "x,y\n1,4\n2,5\n3,6\n";
  const char* text = R"({
    "name": "files", "sample_rate": 10, "window_samples": 3, "n_channels": 2,
    "labels": ["a"], "eval_scheme": {"type": "kfold", "k": 2},
    "records": [
      {"file": "d.f32", "offset": 8, "label": "a"},
      {"file": "r.csv", "format": "csv", "label": "a"},
      {"file": "d.f32", "offset": 16, "label": "a"}
    ]
  })";
  std::ofstream(dir / "m.json") << text;
  const auto m = load_manifest(dir / "m.json");
  const auto expected = Tensord::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(load_window(m, 0).data, expected);
  EXPECT_EQ(load_window(m, 1).data, expected);
  EXPECT_THROW(load_window(m, 2), ValidationError);
}

TEST(Synthetic, WritesLoadableDataset) {
  TempDir dir;
  SinusoidDatasetSpec spec;
  spec.n_windows = 10;
  spec.n_channels = 3;
  const auto path = write_sinusoid_dataset(dir.path(), spec);
  const auto m = load_manifest(path);
  ASSERT_EQ(m.size(), 10u);
  EXPECT_EQ(m.n_channels, 3u);
  EXPECT_EQ(m.preprocess.upsample, 2u);
  const auto windows = sinusoid_windows(spec);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto w = load_window(m, i);
    EXPECT_EQ(w.label, windows[i].label);
    EXPECT_LT(max_abs_diff(w.data, windows[i].data), 1e-6);
    EXPECT_EQ(preprocess(w, m.preprocess).samples(), 400u);
  }
}
