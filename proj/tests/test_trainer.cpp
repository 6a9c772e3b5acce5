#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "fusedet/checkpoint.hpp"
#include "fusedet/errors.hpp"
#include "fusedet/image.hpp"
#include "fusedet/synth.hpp"
#include "fusedet/trainer.hpp"
#include "test_util.hpp"

using namespace fusedet;
using fusedet::testing::random_tensor;
using fusedet::testing::TempDir;

namespace {

NetworkSpec toy_spec() {
  return {"toy", {3, 2, 2}, {{LayerKind::flatten, "flat"}, {LayerKind::dense, "fc", 2}}};
}

// Dark frames are real, bright frames are fake.
std::vector<ManifestEntry> toy_entries(const TempDir& dir, std::size_t per_class) {
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool fake = i % 2 == 1;
    const std::string id = (fake ? "f" : "r") + std::to_string(i);
    const std::filesystem::path p = dir / (id + ".ppm");
    save_image(Tensor({3, 2, 2}, fake ? 0.8 + 0.01 * double(i) : 0.2 - 0.01 * double(i)), p);
    out.push_back({p.string(), id, 0, fake ? Label::fake : Label::real, Split::train, Resolution::low});
  }
  return out;
}

TrainConfig quiet_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 1;
  c.learning_rate = 0.05;
  c.momentum = 0.0;
  c.seed = 5;
  c.augmentation = AugmentationConfig::identity();
  return c;
}

}  // namespace

TEST(SgdStep, ZeroLearningRateKeepsParameters) {
  const Checkpoint c = build_net(kPlainNet, {3, 64, 64}, 1);
  ParamSet grads;
  Rng rng(1);
  for (const auto& [name, p] : c.params) grads[name] = random_tensor(p.shape(), rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_EQ(sgd_step(c, grads, cfg, {}).ckpt.params, c.params);
}

TEST(SgdStep, PlainStepIsExact) {
  const Checkpoint c = build_custom_net(toy_spec(), 2);
  ParamSet grads;
  Rng rng(2);
  for (const auto& [name, p] : c.params) grads[name] = random_tensor(p.shape(), rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.125;
  cfg.momentum = 0.0;
  const SgdResult r = sgd_step(c, grads, cfg, {});
  for (const auto& [name, p] : c.params)
    for (std::size_t i = 0; i < p.size(); ++i)
      EXPECT_EQ(r.ckpt.params.at(name)[i], p[i] - 0.125 * grads.at(name)[i]);
}

TEST(SgdStep, MomentumAccumulates) {
  const Checkpoint c = build_custom_net(toy_spec(), 2);
  ParamSet grads;
  for (const auto& [name, p] : c.params) grads[name] = Tensor(p.shape(), 1.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.momentum = 0.5;
  SgdResult r = sgd_step(c, grads, cfg, {});
  r = sgd_step(r.ckpt, grads, cfg, r.velocity);
  // v1 = -0.5, v2 = 0.5 * -0.5 - 0.5 = -0.75, total -1.25
  for (const auto& [name, p] : c.params)
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(r.ckpt.params.at(name)[i], p[i] - 1.25);
}

TEST(SgdStep, FrozenLayerUnchangedOverManySteps) {
  const Checkpoint c = build_net(kSepNet, {3, 64, 64}, 3);
  TrainConfig cfg;
  cfg.freeze = freeze_prefix(c.spec, 2);
  ParamSet grads;
  Rng rng(3);
  for (const auto& [name, p] : c.params) grads[name] = random_tensor(p.shape(), rng);
  SgdResult r{c, {}};
  for (int i = 0; i < 100; ++i) r = sgd_step(std::move(r.ckpt), grads, cfg, std::move(r.velocity));
  for (const auto& [name, p] : c.params) {
    if (cfg.freeze.covers(name))
      EXPECT_EQ(r.ckpt.params.at(name), p) << name;
    else
      EXPECT_NE(r.ckpt.params.at(name), p) << name;
  }
}

TEST(SgdStep, RejectsShapeMismatch) {
  const Checkpoint c = build_custom_net(toy_spec(), 2);
  ParamSet grads;
  for (const auto& [name, p] : c.params) grads[name] = Tensor(p.shape());
  grads["fc.bias"] = Tensor({3});
  EXPECT_THROW(sgd_step(c, grads, TrainConfig{}, {}), ShapeError);
}

TEST(TreeSum, MatchesSequentialSumOnExactValues) {
  std::vector<ParamSet> parts;
  for (int i = 0; i < 7; ++i) parts.push_back({{"w", Tensor({2}, double(i))}});
  const ParamSet s = tree_sum(parts);
  EXPECT_EQ(s.at("w"), Tensor({2}, 21.0));
}

TEST(Train, LossDecreasesOnSeparableToySet) {
  TempDir dir("toy");
  const auto entries = toy_entries(dir, 2);
  const Checkpoint start = build_custom_net(toy_spec(), 4);
  const TrainResult r = train(start, entries, quiet_config(1));
  ASSERT_EQ(r.report.epochs.size(), 1u);
  ASSERT_EQ(r.report.epochs[0].batch_losses.size(), 4u);
  auto mean_loss = [&](const Checkpoint& c) {
    double s = 0.0;
    for (const auto& e : entries) s += softmax_xent(net_forward(c, load_image(e.frame_path)).logits, e.label).loss;
    return s / double(entries.size());
  };
  EXPECT_LT(mean_loss(r.ckpt), mean_loss(start));
}

TEST(Train, DeterministicDigest) {
  TempDir dir("det");
  const auto entries = toy_entries(dir, 3);
  TrainConfig cfg = quiet_config(3);
  cfg.augmentation = AugmentationConfig{};
  cfg.batch_size = 2;
  cfg.momentum = 0.9;
  const TrainResult a = train(build_custom_net(toy_spec(), 4), entries, cfg);
  const TrainResult b = train(build_custom_net(toy_spec(), 4), entries, cfg);
  EXPECT_EQ(a.report.final_digest, b.report.final_digest);
  EXPECT_EQ(checkpoint_digest(a.ckpt), a.report.final_digest);
  EXPECT_EQ(a.ckpt, b.ckpt);
  cfg.seed = 6;
  EXPECT_NE(train(build_custom_net(toy_spec(), 4), entries, cfg).report.final_digest, a.report.final_digest);
}

TEST(Train, AllFrozenKeepsParametersAndReports) {
  TempDir dir("frozen");
  const auto entries = toy_entries(dir, 2);
  const Checkpoint start = build_custom_net(toy_spec(), 4);
  TrainConfig cfg = quiet_config(2);
  cfg.freeze.frozen = {"flat", "fc"};
  const TrainResult r = train(start, entries, cfg);
  EXPECT_EQ(r.ckpt.params, start.params);
  EXPECT_EQ(r.report.epochs.size(), 2u);
  EXPECT_EQ(r.ckpt.meta.epochs_trained, 2u);
}

TEST(Train, RecordsOneEpochEachInOrder) {
  TempDir dir("order");
  const TrainResult r = train(build_custom_net(toy_spec(), 4), toy_entries(dir, 2), quiet_config(4));
  ASSERT_EQ(r.report.epochs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.report.epochs[i].epoch, i + 1);
  const nlohmann::json j = r.report;
  EXPECT_EQ(j.at("epochs").size(), 4u);
  EXPECT_EQ(j.at("final_digest"), r.report.final_digest);
}

TEST(Train, RejectsEmptySingleClassAndTestSplit) {
  TempDir dir("bad");
  auto entries = toy_entries(dir, 2);
  const Checkpoint c = build_custom_net(toy_spec(), 4);
  EXPECT_THROW(train(c, {}, quiet_config(1)), DataError);
  std::vector<ManifestEntry> reals;
  for (const auto& e : entries)
    if (e.label == Label::real) reals.push_back(e);
  EXPECT_THROW(train(c, reals, quiet_config(1)), DataError);
  entries[0].split = Split::test;
  EXPECT_THROW(train(c, entries, quiet_config(1)), DataError);
}

TEST(Train, RejectsImageShapeMismatch) {
  TempDir dir("shape");
  auto entries = toy_entries(dir, 2);
  save_image(Tensor({3, 4, 4}, 0.5), entries[0].frame_path);
  EXPECT_THROW(train(build_custom_net(toy_spec(), 4), entries, quiet_config(1)), Error);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.freeze.frozen = {"conv1"};
  c.seed = 99;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(config_digest(back), config_digest(c));
  c.seed = 100;
  EXPECT_NE(config_digest(back), config_digest(c));
}
