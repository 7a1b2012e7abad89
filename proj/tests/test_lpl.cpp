#include <cmath>

#include <gtest/gtest.h>

#include "dualcore/lpl.hpp"
#include "test_util.hpp"

using namespace dualcore;
using dualcore::testing::check_gradients;

TEST(Lpl, TinyShapeLadder) {
  Rng rng(1);
  ParamStore<double> ps;
  LplNet<double> net(ps, LplConfig::tiny(), rng);
  Tensor<double> x = Tensor<double>::randn({2, 1, 64, 64}, rng, 0.3);
  for (auto& v : x.v) v = std::min(std::max(v + 0.5, 0.0), 1.0);
  auto out = net(Var<double>(x), FwdCtx<double>{});
  EXPECT_EQ(out.stem.dims(), (Shape{2, 16, 64, 64}));   // layer 1: 16 channels
  EXPECT_EQ(out.trunk.dims(), (Shape{2, 64, 8, 8}));    // layer 10: S/8, trunk width
  EXPECT_EQ(out.logits.dims(), (Shape{2, 2}));
  for (std::int64_t n = 0; n < 2; ++n)
    EXPECT_NEAR(out.probs.value()[n * 2] + out.probs.value()[n * 2 + 1], 1.0, 1e-6);
}

TEST(Lpl, InferenceIsDeterministic) {
  Rng rng(2);
  ParamStore<double> ps;
  LplNet<double> net(ps, LplConfig::micro(), rng);
  Tensor<double> x = Tensor<double>::randn({1, 1, 8, 8}, rng);
  auto a = net(Var<double>(x), FwdCtx<double>{});
  auto b = net(Var<double>(x), FwdCtx<double>{});
  EXPECT_EQ(a.probs.value().v, b.probs.value().v);
}

TEST(Lpl, ResidualModuleWithZeroWeightsIsIdentity) {
  Rng rng(3);
  for (ModuleKind kind : {ModuleKind::A, ModuleKind::B, ModuleKind::C}) {
    ParamStore<double> ps;
    LplModule<double> mod(ps, "m", {kind, true}, 8, 8, rng);
    for (auto& [name, v] : ps.entries())
      for (auto& x : v.value().v) x = 0.0;
    Tensor<double> x = Tensor<double>::randn({1, 8, 6, 6}, rng);
    auto y = mod(Var<double>(x));
    ASSERT_EQ(y.dims(), x.dims);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.value()[i], x[i]);
  }
}

TEST(Lpl, ModuleShapes) {
  Rng rng(4);
  ParamStore<double> ps;
  LplModule<double> a(ps, "a", {ModuleKind::A, true}, 8, 8, rng);
  Tensor<double> x = Tensor<double>::randn({1, 8, 12, 12}, rng);
  EXPECT_EQ(a(Var<double>(x)).dims(), (Shape{1, 8, 12, 12}));

  LplModule<double> d(ps, "d", {ModuleKind::D, true}, 8, 12, rng);
  EXPECT_EQ(d(Var<double>(x)).dims(), (Shape{1, 12, 6, 6}));
}

TEST(Lpl, LossHandValues) {
  Tensor<double> p({1, 2});
  p.v = {0.0, 1.0};
  EXPECT_NEAR(lpl_loss(Var<double>(p), {1}).item(), 0.0, 1e-6);

  Tensor<double> h({1, 2});
  h.v = {0.5, 0.5};
  EXPECT_NEAR(lpl_loss(Var<double>(h), {0}).item(), std::log(2.0), 1e-12);

  Tensor<double> two({2, 2});
  two.v = {0.5, 0.5, 0.5, 0.5};
  EXPECT_NEAR(lpl_loss(Var<double>(two), {0, 1}).item(), 2 * std::log(2.0), 1e-12);
}

TEST(Lpl, ParameterCounts) {
  // separable vs dense 3x3: C(9 + C) + C < 9 C^2 for all C >= 2
  for (std::int64_t c = 2; c <= 128; c *= 2) {
    const std::int64_t sep = nn::SepConv2d<double>::count(c, c, 3);
    EXPECT_EQ(sep, c * (9 + c) + c);
    EXPECT_LT(sep, 9 * c * c);
  }

  // registry with nothing in it counts zero
  ParamStore<double> empty;
  EXPECT_EQ(empty.parameter_count(), 0);

  // adding one block strictly increases the count
  Rng rng(5);
  ParamStore<double> ps;
  LplNet<double> net(ps, LplConfig::micro(), rng);
  const std::int64_t before = ps.parameter_count();
  LplModule<double> extra(ps, "extra", {ModuleKind::A, true}, 8, 8, rng);
  EXPECT_GT(ps.parameter_count(), before);

  EXPECT_GT(lpl_parameter_count(LplConfig::tiny()), lpl_parameter_count(LplConfig::micro()));
}

TEST(Lpl, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  ParamStore<double> ps;
  LplNet<double> net(ps, LplConfig::micro(), rng);
  Tensor<double> x = Tensor<double>::randn({2, 1, 8, 8}, rng, 0.5);
  for (auto& v : x.v) v = std::min(std::max(v + 0.5, 0.0), 1.0);
  const std::vector<int> labels = {0, 1};

  std::vector<Var<double>*> params;
  for (auto& [name, v] : ps.entries()) params.push_back(&v);
  check_gradients(params, [&] {
    auto out = net(Var<double>(x), FwdCtx<double>{});
    return lpl_loss(out.probs, labels);
  });
}
