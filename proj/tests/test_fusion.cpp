#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "fusedet/checkpoint.hpp"
#include "fusedet/errors.hpp"
#include "fusedet/fusion.hpp"
#include "fusedet/image.hpp"
#include "fusedet/net.hpp"
#include "test_util.hpp"

using namespace fusedet;

namespace {

const std::filesystem::path kGolden = FUSEDET_GOLDEN;
const std::filesystem::path kFixtures = FUSEDET_FIXTURES;

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in) << p;
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct RandomSet {
  std::vector<FramePrediction> predictions;
  std::vector<std::string> models;
  std::vector<std::string> videos;
};

// Dyadic probabilities k/1024 keep every partial sum exact, so the two
// aggregation orders must agree bit for bit.
RandomSet random_set(Rng& rng, bool dyadic) {
  RandomSet s;
  const std::size_t M = 1 + rng.below(4), V = 1 + rng.below(6);
  for (std::size_t m = 0; m < M; ++m) s.models.push_back("m" + std::to_string(m));
  for (std::size_t v = 0; v < V; ++v) {
    s.videos.push_back("v" + std::to_string(v));
    const std::size_t F = 1 + rng.below(8);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t f = 0; f < F; ++f) {
        const double p = dyadic ? double(rng.below(1025)) / 1024.0 : rng.uniform();
        s.predictions.push_back({s.models[m], s.videos[v], f, p});
      }
  }
  return s;
}

double brute_force_grand_mean(const std::vector<FramePrediction>& preds, const std::string& video) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : preds)
    if (p.video_id == video) sum += p.p_fake, ++n;
  return sum / double(n);
}

VideoVerdict verdict(const std::string& id, double p) { return {id, p, decide(p), {}}; }

// Six videos enumerated by hand.
//   v1 fake 0.90 -> TP   v4 real 0.10 -> TN
//   v2 fake 0.50 -> TP   v5 real 0.70 -> FP
//   v3 fake 0.20 -> FN   v6 real 0.49 -> TN
std::vector<VideoVerdict> six_verdicts() {
  return {verdict("v1", 0.9), verdict("v2", 0.5),  verdict("v3", 0.2),
          verdict("v4", 0.1), verdict("v5", 0.7), verdict("v6", 0.49)};
}

std::map<std::string, VideoTruth> six_truth() {
  return {{"v1", {Label::fake, Resolution::low}}, {"v2", {Label::fake, Resolution::low}},
          {"v3", {Label::fake, Resolution::low}}, {"v4", {Label::real, Resolution::high}},
          {"v5", {Label::real, Resolution::high}}, {"v6", {Label::real, Resolution::high}}};
}

MetricsReport row(const std::string& name, double acc, double loss) {
  MetricsReport r;
  r.name = name;
  r.overall.accuracy = acc;
  r.overall.log_loss = loss;
  return r;
}

MetricsReport row2(const std::string& name, double acc, double low, double high) {
  MetricsReport r = row(name, acc, std::nan(""));
  r.by_resolution["low"].accuracy = low;
  r.by_resolution["high"].accuracy = high;
  return r;
}

}  // namespace

TEST(Fuse, SingleModelSingleFrame) {
  const auto v = fuse({{"a", "v", 0, 0.9}}, {"a"}, {"v"});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].p_fake_fused, 0.9);
  EXPECT_EQ(v[0].predicted_label, Label::fake);
  EXPECT_EQ(v[0].per_model_p_fake.at("a"), 0.9);
}

TEST(Fuse, ThreeModelMean) {
  const auto v = fuse({{"a", "v", 0, 0.9}, {"b", "v", 0, 0.8}, {"c", "v", 0, 0.1}}, {"a", "b", "c"}, {"v"});
  EXPECT_NEAR(v[0].p_fake_fused, 0.6, 1e-15);
  EXPECT_EQ(v[0].predicted_label, Label::fake);
}

TEST(Fuse, TieGoesToFake) {
  const auto v = fuse({{"a", "v", 0, 0.4}, {"b", "v", 0, 0.6}}, {"a", "b"}, {"v"});
  EXPECT_EQ(v[0].p_fake_fused, 0.5);
  EXPECT_EQ(v[0].predicted_label, Label::fake);
  EXPECT_EQ(decide(0.5), Label::fake);
  EXPECT_EQ(decide(std::nextafter(0.5, 0.0)), Label::real);
}

TEST(Fuse, EqualsBruteForceGrandMeanExactly) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const RandomSet s = random_set(rng, true);
    const auto verdicts = fuse(s.predictions, s.models, s.videos);
    ASSERT_EQ(verdicts.size(), s.videos.size());
    for (const auto& v : verdicts) {
      const double oracle = brute_force_grand_mean(s.predictions, v.video_id);
      EXPECT_EQ(v.p_fake_fused, oracle) << trial;
      EXPECT_EQ(v.predicted_label, oracle >= 0.5 ? Label::fake : Label::real);
    }
  }
}

TEST(Fuse, MatchesGrandMeanOnArbitraryDoubles) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const RandomSet s = random_set(rng, false);
    for (const auto& v : fuse(s.predictions, s.models, s.videos))
      EXPECT_NEAR(v.p_fake_fused, brute_force_grand_mean(s.predictions, v.video_id), 1e-15);
  }
}

TEST(Fuse, PermutationInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    RandomSet s = random_set(rng, true);
    const auto a = fuse(s.predictions, s.models, s.videos);
    rng.shuffle(s.predictions);
    const auto b = fuse(s.predictions, s.models, s.videos);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].p_fake_fused, b[i].p_fake_fused);
      EXPECT_EQ(a[i].per_model_p_fake, b[i].per_model_p_fake);
    }
  }
}

TEST(Fuse, MonotoneInEachPrediction) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    RandomSet s = random_set(rng, false);
    const auto before = fuse(s.predictions, s.models, s.videos);
    FramePrediction& p = s.predictions[rng.below(s.predictions.size())];
    p.p_fake = std::min(1.0, p.p_fake + rng.uniform(0.0, 0.5));
    const auto after = fuse(s.predictions, s.models, s.videos);
    for (std::size_t i = 0; i < before.size(); ++i)
      EXPECT_GE(after[i].p_fake_fused, before[i].p_fake_fused);
  }
}

TEST(Fuse, SingleModelIsPerVideoMean) {
  const auto v = fuse({{"a", "v", 0, 0.25}, {"a", "v", 1, 0.5}, {"a", "w", 0, 0.125}}, {"a"}, {"v", "w"});
  EXPECT_EQ(v[0].p_fake_fused, 0.375);
  EXPECT_EQ(v[0].per_model_p_fake.at("a"), 0.375);
  EXPECT_EQ(v[1].p_fake_fused, 0.125);
}

TEST(Fuse, RejectsIncompleteCoverage) {
  EXPECT_THROW(fuse({{"a", "v", 0, 0.5}}, {"a", "b"}, {"v"}), DataError);
  EXPECT_THROW(fuse({{"a", "v", 0, 0.5}, {"b", "v", 1, 0.5}}, {"a", "b"}, {"v"}), DataError);
  EXPECT_THROW(fuse({{"a", "v", 0, 0.5}}, {"a"}, {"v", "w"}), DataError);
}

TEST(LogLoss, HalfIsLn2) {
  EXPECT_NEAR(binary_log_loss({0.5}, {Label::fake}), std::log(2.0), 1e-12);
  EXPECT_NEAR(binary_log_loss({0.5, 0.5, 0.5}, {Label::fake, Label::real, Label::real}), std::log(2.0), 1e-12);
}

TEST(LogLoss, PerfectPredictionHitsClipFloor) {
  const double floor = -std::log(1.0 - 1e-15);
  EXPECT_NEAR(binary_log_loss({1.0, 0.0}, {Label::fake, Label::real}), floor, 1e-12);
  EXPECT_GT(binary_log_loss({1.0}, {Label::fake}), 0.0);
}

TEST(LogLoss, AlwaysFinite) {
  EXPECT_TRUE(std::isfinite(binary_log_loss({0.0, 1.0}, {Label::fake, Label::real})));
  EXPECT_NEAR(binary_log_loss({0.0}, {Label::fake}), -std::log(1e-15), 1e-9);
}

TEST(Score, SixVideoFixture) {
  const MetricsReport r = score(six_verdicts(), six_truth(), "fixture");
  EXPECT_EQ(r.overall.confusion, (Confusion{2, 2, 1, 1}));
  EXPECT_EQ(r.overall.accuracy, 4.0 / 6.0);
  const double expect =
      -(std::log(0.9) + std::log(0.5) + std::log(0.2) + std::log(0.9) + std::log(0.3) + std::log(0.51)) / 6.0;
  EXPECT_NEAR(r.overall.log_loss, expect, 1e-12);
  EXPECT_EQ(r.by_resolution.at("low").confusion, (Confusion{2, 0, 0, 1}));
  EXPECT_EQ(r.by_resolution.at("high").confusion, (Confusion{0, 2, 1, 0}));
  EXPECT_EQ(r.by_resolution.at("low").accuracy, 2.0 / 3.0);
}

TEST(Score, NoBreakdownWithoutTags) {
  std::map<std::string, VideoTruth> truth;
  for (auto [id, t] : six_truth()) truth[id] = {t.label, std::nullopt};
  EXPECT_TRUE(score(six_verdicts(), truth).by_resolution.empty());
}

TEST(Score, RejectsMissingTruth) {
  auto truth = six_truth();
  truth.erase("v3");
  EXPECT_THROW(score(six_verdicts(), truth), DataError);
}

TEST(Score, JsonRoundTrip) {
  const MetricsReport r = score(six_verdicts(), six_truth(), "fixture", {"a", "b"});
  const nlohmann::json j = r;
  EXPECT_EQ(j.get<MetricsReport>(), r);
}

TEST(Render, EmptyListIsHeaderOnly) {
  EXPECT_EQ(render_report({}, ReportFormat::markdown), "| Classifier | Accuracy | LogLoss |\n|---|---:|---:|\n");
}

TEST(Render, AccuracyLogLossGolden) {
  // Column structure of an accuracy/log-loss comparison; numbers are the
  // published ones, used here only as rendering input.
  const std::vector<MetricsReport> rows{row("VGG16", 0.9675, 0.13482), row("InceptionV3", 0.9625, 0.12077),
                                        row("XceptionNet", 0.9625, 0.10123), row("Fused", 0.965, 0.11140)};
  EXPECT_EQ(render_report(rows, ReportFormat::markdown), read_text(kGolden / "accuracy_logloss.md"));
}

TEST(Render, ResolutionColumnsGolden) {
  const std::vector<MetricsReport> rows{row2("VGG16", 0.9078, 0.9906, 0.8250),
                                        row2("InceptionV3", 0.8906, 0.9656, 0.8156),
                                        row2("XceptionNet", 0.9141, 0.9875, 0.8406),
                                        row2("Fused", 0.9578, 0.9968, 0.9188)};
  EXPECT_EQ(render_report(rows, ReportFormat::markdown), read_text(kGolden / "resolution_columns.md"));
}

TEST(Render, SixVideoFixtureGolden) {
  const std::vector<MetricsReport> rows{score(six_verdicts(), six_truth(), "fused")};
  EXPECT_EQ(render_report(rows, ReportFormat::markdown), read_text(kGolden / "six_videos.md"));
  const nlohmann::json j = nlohmann::json::parse(render_report(rows, ReportFormat::json));
  EXPECT_EQ(j.get<std::vector<MetricsReport>>(), rows);
}

TEST(PredictFrames, GoldenValuesOnFixtureVideo) {
  const Checkpoint ckpt = build_net(kPlainNet, {3, 64, 64}, 1);
  std::vector<ManifestEntry> entries;
  for (std::size_t f = 0; f < 3; ++f)
    entries.push_back({(kFixtures / "video3" / (std::to_string(f) + ".ppm")).string(), "video3", f, Label::fake,
                       Split::test, Resolution::low});
  const PredictResult r = predict_frames(ckpt, entries);
  ASSERT_TRUE(r.failures.empty());
  std::istringstream golden(read_text(kGolden / "video3_predictions.jsonl"));
  std::string line;
  std::size_t i = 0;
  while (std::getline(golden, line)) {
    const FramePrediction g = nlohmann::json::parse(line).get<FramePrediction>();
    ASSERT_LT(i, r.predictions.size());
    EXPECT_EQ(r.predictions[i].frame_index, g.frame_index);
    EXPECT_NEAR(r.predictions[i].p_fake, g.p_fake, 1e-12);
    ++i;
  }
  EXPECT_EQ(i, 3u);
}

TEST(PredictFrames, DuplicateFrameIsPure) {
  const Checkpoint ckpt = build_net(kSepNet, {3, 64, 64}, 2);
  const ManifestEntry e{(kFixtures / "video3" / "0.ppm").string(), "video3", 0, Label::fake, Split::test,
                        Resolution::low};
  const PredictResult r = predict_frames(ckpt, {e, e});
  ASSERT_EQ(r.predictions.size(), 2u);
  EXPECT_EQ(r.predictions[0].p_fake, r.predictions[1].p_fake);
  EXPECT_GT(r.predictions[0].p_fake, 0.0);
  EXPECT_LT(r.predictions[0].p_fake, 1.0);
}

TEST(PredictFrames, FailuresAreCollectedPerEntry) {
  const Checkpoint ckpt = build_net(kPlainNet, {3, 64, 64}, 1);
  std::vector<ManifestEntry> entries{
      {(kFixtures / "video3" / "0.ppm").string(), "video3", 0, Label::fake, Split::test, Resolution::low},
      {"/nonexistent/a.ppm", "gone", 0, Label::real, Split::test, Resolution::low},
      {(kFixtures / "tiny.ppm").string(), "tiny", 0, Label::real, Split::test, Resolution::low}};
  const PredictResult r = predict_frames(ckpt, entries);
  EXPECT_EQ(r.predictions.size(), 1u);
  ASSERT_EQ(r.failures.size(), 2u);
  EXPECT_EQ(r.failures[0].video_id, "gone");
  EXPECT_EQ(r.failures[1].video_id, "tiny");
  EXPECT_THROW(evaluate({ckpt}, entries), DataError);
  EXPECT_EQ(predict_frames(ckpt, {entries[2]}, PredictOptions{true}).predictions.size(), 1u);
}

TEST(Evaluate, SingleModelFusedRowEqualsModel) {
  const Checkpoint ckpt = build_net(kBranchNet, {3, 64, 64}, 3);
  std::vector<ManifestEntry> entries;
  for (std::size_t f = 0; f < 3; ++f)
    entries.push_back({(kFixtures / "video3" / (std::to_string(f) + ".ppm")).string(), "video3", f, Label::fake,
                       Split::test, Resolution::low});
  const EvaluationResult r = evaluate({ckpt}, entries);
  ASSERT_EQ(r.reports.size(), 2u);
  EXPECT_EQ(r.reports[0].name, kBranchNet);
  EXPECT_EQ(r.reports[1].name, "fused");
  EXPECT_EQ(r.reports[0].overall, r.reports[1].overall);
}
