#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "fusedet/errors.hpp"
#include "fusedet/grad_check.hpp"
#include "fusedet/net.hpp"
#include "reference.hpp"
#include "test_util.hpp"

using namespace fusedet;
using fusedet::testing::random_image;
using fusedet::testing::random_tensor;

namespace {

const Shape kLow{3, 64, 64};
const Shape kReduced{3, 8, 8};

// Biases drawn away from zero keep pre-activations off the ReLU kink.
Checkpoint reduced_net(const std::string& id, std::uint64_t seed) {
  Checkpoint c = build_custom_net(make_spec(id, kReduced, ArchWidths{2}), seed);
  Rng rng(derive_seed(seed, "bias"));
  for (auto& [name, t] : c.params)
    if (name.ends_with(".bias"))
      for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
  return c;
}

// Largest relative error over the input and every parameter tensor, with
// difference quotients from the extended-precision reference forward.
double whole_net_error(const Checkpoint& ckpt, const Tensor& image, Label label, std::size_t* skipped = nullptr) {
  namespace R = fusedet::reference;
  const ForwardResult fwd = net_forward(ckpt, image);
  const BackwardResult bwd = net_backward(ckpt, fwd.caches, label);
  double worst = 0.0;
  auto take = [&](const R::CheckResult& r) {
    worst = std::max(worst, r.report.max_rel_error);
    if (skipped) *skipped += r.skipped;
  };
  take(R::check([&](const Tensor& x, R::Pattern* p) { return R::xent(R::net_logits(ckpt, x, p), label); }, image,
                bwd.input_grad, 1e-6, 1e-5));
  for (const auto& [name, value] : ckpt.params) {
    auto loss = [&, name = name](const Tensor& v, R::Pattern* p) {
      Checkpoint c = ckpt;
      c.params[name] = v;
      return R::xent(R::net_logits(c, image, p), label);
    };
    take(R::check(loss, value, bwd.param_grads.at(name), 1e-6, 1e-5));
  }
  return worst;
}

}  // namespace

TEST(BuildNet, Deterministic) {
  for (const std::string& id : builtin_model_ids()) {
    EXPECT_EQ(build_net(id, kLow, 5), build_net(id, kLow, 5)) << id;
    EXPECT_NE(build_net(id, kLow, 5).params, build_net(id, kLow, 6).params) << id;
  }
}

TEST(BuildNet, StructuralMotifs) {
  const NetworkSpec plain = build_net(kPlainNet, kLow, 1).spec;
  const NetworkSpec branch = build_net(kBranchNet, kLow, 1).spec;
  const NetworkSpec sep = build_net(kSepNet, kLow, 1).spec;

  std::size_t branch_blocks = 0;
  for (const LayerDesc& l : branch.layers)
    if (l.kind == LayerKind::branch) {
      ++branch_blocks;
      std::set<std::size_t> kernels;
      for (const auto& b : l.branches)
        for (const LayerDesc& inner : b)
          if (inner.kind == LayerKind::conv) kernels.insert(inner.kernel);
      EXPECT_EQ(kernels, (std::set<std::size_t>{1, 3, 5}));
    }
  EXPECT_GE(branch_blocks, 1u);

  std::size_t seps = 0;
  for (LayerKind k : kind_sequence(sep)) seps += k == LayerKind::sepconv;
  EXPECT_GE(seps, 2u);

  std::size_t convs = 0;
  for (LayerKind k : kind_sequence(plain)) convs += k == LayerKind::conv;
  EXPECT_GE(convs, 3u);

  EXPECT_NE(kind_sequence(plain), kind_sequence(branch));
  EXPECT_NE(kind_sequence(plain), kind_sequence(sep));
  EXPECT_NE(kind_sequence(branch), kind_sequence(sep));

  for (const NetworkSpec* s : {&plain, &branch, &sep}) {
    EXPECT_EQ(s->layers.back().kind, LayerKind::dense);
    EXPECT_EQ(s->layers[s->layers.size() - 2].kind, LayerKind::flatten);
    EXPECT_EQ(infer_shapes(*s).back(), (Shape{2}));
  }
}

TEST(BuildNet, ParameterBudget) {
  for (const std::string& id : builtin_model_ids())
    for (const Shape& s : {kLow, Shape{3, 128, 128}}) {
      const Checkpoint c = build_net(id, s, 1);
      EXPECT_LE(parameter_count(c.params), 200000u) << id;
      for (const auto& [name, shape] : param_shapes(c.spec)) EXPECT_EQ(c.params.at(name).shape(), shape);
    }
}

TEST(BuildNet, RejectsUnsupportedShape) {
  EXPECT_THROW(build_net(kPlainNet, {3, 32, 32}, 1), ConfigError);
  EXPECT_THROW(build_net(kPlainNet, {1, 64, 64}, 1), ConfigError);
  EXPECT_THROW(build_net("resnet", kLow, 1), ConfigError);
}

TEST(BuildNet, BiasesZeroWeightsWithinHeBound) {
  const Checkpoint c = build_net(kPlainNet, kLow, 3);
  for (const auto& [name, t] : c.params) {
    if (name.ends_with(".bias")) {
      for (double v : t.data()) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double bound = std::sqrt(6.0 / double(t.size() / t.dim(0)));
    for (double v : t.data()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(NetForward, ProbabilitiesNormalizedAndDeterministic) {
  Rng rng(4);
  for (const std::string& id : builtin_model_ids()) {
    const Checkpoint c = build_net(id, kLow, 9);
    const Tensor img = random_image(kLow, rng);
    const ForwardResult a = net_forward(c, img), b = net_forward(c, img);
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_NEAR(a.probs[0] + a.probs[1], 1.0, 1e-12);
    EXPECT_GT(a.probs[0], 0.0);
    EXPECT_GT(a.probs[1], 0.0);
    EXPECT_EQ(net_probs(c, img), a.probs);
  }
}

TEST(NetForward, RejectsWrongImageShape) {
  const Checkpoint c = build_net(kSepNet, kLow, 1);
  EXPECT_THROW(net_forward(c, Tensor({3, 128, 128})), ShapeError);
}

TEST(NetForward, MatchesExtendedPrecisionReference) {
  for (const std::string& id : builtin_model_ids())
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const Checkpoint c = reduced_net(id, seed);
      const Tensor img = random_image(kReduced, rng);
      const Tensor z = net_forward(c, img).logits;
      const auto ref = fusedet::reference::net_logits(c, img, nullptr);
      for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(z[i], double(ref.v[i]), 1e-12) << id;
    }
}

TEST(NetBackward, WholeNetGradientsMatchFiniteDifferences) {
  for (const std::string& id : builtin_model_ids()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      worst = std::max(worst, whole_net_error(reduced_net(id, seed), random_image(kReduced, rng),
                                              seed % 2 ? Label::fake : Label::real));
    }
    EXPECT_LE(worst, 1e-5) << id;
  }
}

TEST(NetBackward, SaturatedLossGivesZeroGradients) {
  NetworkSpec spec{"dense", {4}, {{LayerKind::dense, "fc", 2}}};
  Checkpoint c = build_custom_net(spec, 1);
  c.params["fc.weight"] = Tensor({2, 4});
  c.params["fc.bias"] = Tensor::vector({-40.0, 40.0});
  const ForwardResult f = net_forward(c, Tensor({4}, 0.5));
  ASSERT_GE(f.probs[1], 1.0 - 1e-12);
  const BackwardResult b = net_backward(c, f.caches, Label::fake);
  for (const auto& [name, g] : b.param_grads)
    for (double v : g.data()) EXPECT_LE(std::abs(v), 1e-12) << name;
  for (double v : b.input_grad.data()) EXPECT_LE(std::abs(v), 1e-12);
}

TEST(NetBackward, FreezeAgnostic) {
  const Checkpoint c = reduced_net(kPlainNet, 3);
  Rng rng(3);
  const ForwardResult f = net_forward(c, random_image(kReduced, rng));
  const BackwardResult b = net_backward(c, f.caches, Label::fake);
  EXPECT_EQ(b.param_grads.size(), c.params.size());
  EXPECT_TRUE(b.input_grad.all_finite());
}

TEST(NetBackward, RejectsStaleCaches) {
  Checkpoint c = reduced_net(kBranchNet, 4);
  Rng rng(4);
  const ForwardResult f = net_forward(c, random_image(kReduced, rng));
  c.params.begin()->second[0] += 1.0;
  EXPECT_THROW(net_backward(c, f.caches, Label::real), CacheError);
  EXPECT_THROW(net_backward(c, NetCaches{}, Label::real), CacheError);
}

TEST(FreezePrefix, CoversFirstBlock) {
  const NetworkSpec s = build_net(kPlainNet, kLow, 1).spec;
  const FreezeMask m = freeze_prefix(s, 1);
  EXPECT_TRUE(m.covers("conv1.weight"));
  EXPECT_TRUE(m.covers("conv1.bias"));
  EXPECT_FALSE(m.covers("conv2.weight"));
  EXPECT_FALSE(m.covers("fc.weight"));
  EXPECT_TRUE(freeze_prefix(s, 0).frozen.empty());
  for (const std::string& name : m.frozen) {
    const auto names = layer_names(s);
    EXPECT_NE(std::find(names.begin(), names.end(), name), names.end());
  }
}

TEST(FreezeMask, PrefixMatchIsPerLayer) {
  FreezeMask m{{"conv1"}};
  EXPECT_TRUE(m.covers("conv1.weight"));
  EXPECT_FALSE(m.covers("conv10.weight"));
}

TEST(NetworkSpec, JsonRoundTrip) {
  for (const std::string& id : builtin_model_ids()) {
    const NetworkSpec s = build_net(id, kLow, 1).spec;
    const nlohmann::json j = s;
    EXPECT_EQ(j.get<NetworkSpec>(), s);
  }
}

TEST(NetworkSpec, InferShapesRejectsBadSpecs) {
  NetworkSpec dup{"x", {4}, {{LayerKind::dense, "fc", 3}, {LayerKind::dense, "fc", 2}}};
  EXPECT_THROW(infer_shapes(dup), ConfigError);
  NetworkSpec three{"x", {4}, {{LayerKind::dense, "fc", 3}}};
  EXPECT_THROW(infer_shapes(three), ShapeError);
}
