#include <cmath>

#include <gtest/gtest.h>

#include "dualcore/fusion.hpp"
#include "dualcore/model.hpp"
#include "test_util.hpp"

using namespace dualcore;
using dualcore::testing::check_gradients;

TEST(Fusion, ZeroInputGivesZeroEmbedding) {
  Rng rng(1);
  ParamStore<double> ps;
  FusionConfig cfg;
  cfg.embed_width = 64;
  FusionNet<double> net(ps, cfg, 8, 6, rng);
  Tensor<double> zeros({2, 8, 12, 12});
  auto e = net.transform_lpl(Var<double>(zeros));
  EXPECT_EQ(e.dims(), (Shape{2, 64}));
  for (double v : e.value().v) EXPECT_EQ(v, 0.0);  // zero biases by init
}

TEST(Fusion, EmbeddingWidthIndependentOfInputSize) {
  Rng rng(2);
  ParamStore<double> ps;
  FusionConfig cfg;
  cfg.embed_width = 64;
  FusionNet<double> net(ps, cfg, 4, 4, rng);
  for (std::int64_t s : {8, 16, 32}) {
    auto e = net.transform_cgl(Var<double>(Tensor<double>::randn({1, 4, s, s}, rng)));
    EXPECT_EQ(e.dims(), (Shape{1, 64}));
  }
}

TEST(Fusion, EmbeddingSensitiveToConstantShift) {
  Rng rng(3);
  ParamStore<double> ps;
  FusionNet<double> net(ps, FusionConfig{}, 4, 4, rng);
  Tensor<double> x = Tensor<double>::randn({1, 4, 8, 8}, rng);
  Tensor<double> y = x;
  for (auto& v : y.v) v += 0.25;
  auto ex = net.transform_lpl(Var<double>(x));
  auto ey = net.transform_lpl(Var<double>(y));
  double diff = 0;
  for (std::int64_t i = 0; i < ex.value().numel(); ++i)
    diff = std::max(diff, std::fabs(ex.value()[i] - ey.value()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Fusion, ClassifyNormalizesAndSwapsWithHeadRows) {
  Rng rng(4);
  ParamStore<double> ps;
  FusionConfig cfg;
  cfg.embed_width = 8;
  FusionNet<double> net(ps, cfg, 4, 4, rng);
  Tensor<double> a = Tensor<double>::randn({3, 8}, rng);
  Tensor<double> b = Tensor<double>::randn({3, 8}, rng);
  auto out = net.fuse_and_classify(Var<double>(a), Var<double>(b));
  for (std::int64_t n = 0; n < 3; ++n)
    EXPECT_NEAR(out.probs.value()[n * 2] + out.probs.value()[n * 2 + 1], 1.0, 1e-6);

  // swapping the two output columns of the head swaps the class probabilities
  for (auto& [name, v] : ps.entries()) {
    if (name == "fusion.head.w") {
      Tensor<double>& w = v.value();
      for (std::int64_t f = 0; f < w.dims[0]; ++f) std::swap(w[f * 2], w[f * 2 + 1]);
    }
    if (name == "fusion.head.b") std::swap(v.value()[0], v.value()[1]);
  }
  auto swapped = net.fuse_and_classify(Var<double>(a), Var<double>(b));
  for (std::int64_t n = 0; n < 3; ++n) {
    EXPECT_NEAR(swapped.probs.value()[n * 2], out.probs.value()[n * 2 + 1], 1e-12);
    EXPECT_NEAR(swapped.probs.value()[n * 2 + 1], out.probs.value()[n * 2], 1e-12);
  }
}

TEST(Fusion, SoftmaxShiftInvariance) {
  Rng rng(5);
  Tensor<double> logits = Tensor<double>::randn({4, 2, 1, 1}, rng);
  Tensor<double> shifted = logits;
  for (std::int64_t n = 0; n < 4; ++n) {
    shifted[n * 2] += 7.25;
    shifted[n * 2 + 1] += 7.25;
  }
  auto p = ops::softmax_channel(Var<double>(logits));
  auto q = ops::softmax_channel(Var<double>(shifted));
  for (std::int64_t i = 0; i < 8; ++i) EXPECT_NEAR(p.value()[i], q.value()[i], 1e-9);
}

TEST(Fusion, LossHandValuesAndMonotonicity) {
  Tensor<double> p({1, 2});
  p.v = {1.0, 0.0};
  EXPECT_NEAR(fusion_loss(Var<double>(p), {0}).item(), 0.0, 1e-6);

  Tensor<double> h({1, 2});
  h.v = {0.5, 0.5};
  EXPECT_NEAR(fusion_loss(Var<double>(h), {1}).item(), std::log(2.0), 1e-12);

  double prev = 1e9;
  for (double pc = 0.1; pc < 0.95; pc += 0.1) {
    Tensor<double> t({1, 2});
    t.v = {pc, 1 - pc};
    const double l = fusion_loss(Var<double>(t), {0}).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Fusion, TotalLossLinearity) {
  auto s = [](double v) { return Var<double>(Tensor<double>::scalar(v)); };
  EXPECT_DOUBLE_EQ(total_loss(s(0.5), s(0.2), s(0.3), 1.0, 1.0).item(), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(s(0.7), s(0.2), s(0.3), 0.0, 0.0).item(), 0.7);

  const double base = total_loss(s(0.5), s(0.2), s(0.3), 1.0, 1.0).item();
  const double twice = total_loss(s(0.5), s(0.2), s(0.3), 2.0, 1.0).item();
  EXPECT_NEAR(twice - base, 0.2, 1e-12);

  // exact linearity in each component
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const double f = rng.uniform(0, 3), l = rng.uniform(0, 3), c = rng.uniform(0, 3);
    const double a = rng.uniform(0, 2), b = rng.uniform(0, 2);
    EXPECT_NEAR(total_loss(s(f), s(l), s(c), a, b).item(), f + a * l + b * c, 1e-12);
  }
}

TEST(Fusion, GradientFlowsToBothEmbeddings) {
  Rng rng(7);
  ParamStore<double> ps;
  FusionConfig cfg;
  cfg.embed_width = 4;
  FusionNet<double> net(ps, cfg, 4, 4, rng);
  Var<double> a(Tensor<double>::randn({2, 4}, rng), true);
  Var<double> b(Tensor<double>::randn({2, 4}, rng), true);
  check_gradients({&a, &b}, [&] {
    auto out = net.fuse_and_classify(a, b);
    return fusion_loss(out.probs, {0, 1});
  });
  // and both gradients are generically nonzero
  a.zero_grad();
  b.zero_grad();
  auto out = net.fuse_and_classify(a, b);
  backward(fusion_loss(out.probs, {0, 1}));
  double na = 0, nb = 0;
  for (double v : a.grad().v) na += std::fabs(v);
  for (double v : b.grad().v) nb += std::fabs(v);
  EXPECT_GT(na, 1e-8);
  EXPECT_GT(nb, 1e-8);
}

TEST(Fusion, EndToEndGradientSpotCheck) {
  // wiring check across both paths, the CRF weights and the fusion head on
  // the micro model; the acceptance suite sweeps every parameter
  Rng rng(8);
  DualCoreNet<double> net(DualCoreConfig::micro(), 11);
  Tensor<double> lpl_x = Tensor<double>::randn({2, 1, 16, 16}, rng, 0.3);
  Tensor<double> cgl_x = Tensor<double>::randn({2, 1, 16, 16}, rng, 0.3);
  for (auto& v : lpl_x.v) v = std::min(std::max(v + 0.5, 0.0), 1.0);
  for (auto& v : cgl_x.v) v = std::min(std::max(v + 0.5, 0.0), 1.0);
  Tensor<double> masks({2, 16, 16});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t r = 3; r < 13; ++r)
      for (std::int64_t c = 3; c < 13; ++c) masks[(n * 16 + r) * 16 + c] = 1.0;
  const std::vector<int> labels = {0, 1};

  std::vector<Var<double>*> subset;
  for (auto& [name, v] : net.params().entries())
    if (name == "cgl.crf.w_spatial" || name == "cgl.crf.w_bilateral" ||
        name == "fusion.head.w" || name == "lpl.stem.w" || name == "cgl.unary.w")
      subset.push_back(&v);
  ASSERT_EQ(subset.size(), 5u);

  check_gradients(subset, [&] {
    auto out = net.forward(Var<double>(lpl_x), Var<double>(cgl_x), FwdCtx<double>{});
    auto l = net.losses(out, labels, masks, LossConfig::FusionBoth);
    return l.total;
  });
}
