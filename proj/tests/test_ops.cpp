#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "dualcore/ops.hpp"
#include "test_util.hpp"

using namespace dualcore;
using dualcore::testing::check_gradients;
using dualcore::testing::rel_err;

namespace {

// plain quadruple-loop convolution, used as the oracle for the GEMM path
Tensor<double> conv2d_naive(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, std::int64_t stride, std::int64_t pad) {
  const std::int64_t N = x.dims[0], C = x.dims[1], H = x.dims[2], W = x.dims[3];
  const std::int64_t Cout = w.dims[0], kh = w.dims[2], kw = w.dims[3];
  const std::int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out({N, Cout, OH, OW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          double acc = b[co];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < kh; ++i)
              for (std::int64_t j = 0; j < kw; ++j) {
                const std::int64_t ih = oh * stride - pad + i;
                const std::int64_t iw = ow * stride - pad + j;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.at(n, c, ih, iw) * w.at(co, c, i, j);
              }
          out.at(n, co, oh, ow) = acc;
        }
  return out;
}

}  // namespace

TEST(Ops, ElementwiseGradients) {
  Rng rng(7);
  Var<double> a(Tensor<double>::randn({2, 3}, rng), true);
  Var<double> b(Tensor<double>::randn({2, 3}, rng), true);
  for (auto& x : b.value().v) x += (x >= 0 ? 2.0 : -2.0);  // keep divisors away from 0
  check_gradients({&a, &b}, [&] {
    auto s = ops::add(ops::mul(a, b), ops::div(a, b));
    auto t = ops::sub(s, ops::mul_scalar(a, 0.3));
    return ops::sum_all(ops::add_scalar(t, 1.5));
  });
}

TEST(Ops, ScaleByTrainableScalar) {
  Rng rng(9);
  Var<double> w(Tensor<double>::scalar(1.7), true);
  Var<double> x(Tensor<double>::randn({2, 5}, rng), true);
  check_gradients({&w, &x}, [&] { return ops::sum_all(ops::scale_by(w, x)); });
}

TEST(Ops, ReluGradientAwayFromKink) {
  Rng rng(11);
  Var<double> x(Tensor<double>::randn({4, 4}, rng), true);
  for (auto& v : x.value().v)
    if (std::fabs(v) < 0.1) v += 0.5;
  check_gradients({&x}, [&] { return ops::sum_all(ops::mul(ops::relu(x), ops::relu(x))); });
}

TEST(Ops, SoftmaxChannelNormalizesAndBackprops) {
  Rng rng(13);
  Var<double> x(Tensor<double>::randn({2, 3, 1, 4}, rng), true);
  auto y = ops::softmax_channel(x);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t s = 0; s < 4; ++s) {
      double tot = 0;
      for (std::int64_t c = 0; c < 3; ++c) tot += y.value().at(n, c, 0, s);
      EXPECT_NEAR(tot, 1.0, 1e-12);
    }
  Var<double> mask(Tensor<double>::randn({2, 3, 1, 4}, rng), false);
  check_gradients({&x}, [&] { return ops::sum_all(ops::mul(ops::softmax_channel(x), mask)); });
}

TEST(Ops, CrossEntropyMatchesHandValues) {
  // one sample at probability 1 on the true class, one at (0.5, 0.5)
  Tensor<double> p({2, 2});
  p.v = {1.0, 0.0, 0.5, 0.5};
  Var<double> probs(p, false);
  auto loss = ops::cross_entropy_sum(probs, {0, 1});
  // first term clamps to -log(1 - 1e-7) ~ 1e-7, second is ln 2
  EXPECT_NEAR(loss.item(), std::log(2.0), 1e-6);
}

TEST(Ops, CrossEntropyGradient) {
  Rng rng(17);
  Var<double> logits(Tensor<double>::randn({3, 2}, rng), true);
  const std::vector<int> labels = {0, 1, 1};
  check_gradients({&logits}, [&] {
    auto probs = ops::reshape(ops::softmax_channel(ops::reshape(logits, {3, 2, 1, 1})), {3, 2});
    return ops::cross_entropy_sum(probs, labels);
  });
}

TEST(Ops, DenseGradient) {
  Rng rng(19);
  Var<double> x(Tensor<double>::randn({3, 4}, rng), true);
  Var<double> w(Tensor<double>::randn({4, 2}, rng), true);
  Var<double> b(Tensor<double>::randn({2}, rng), true);
  Var<double> mask(Tensor<double>::randn({3, 2}, rng), false);
  check_gradients({&x, &w, &b}, [&] { return ops::sum_all(ops::mul(ops::dense(x, w, b), mask)); });
}

TEST(Ops, Conv2dMatchesNaive) {
  Rng rng(23);
  Tensor<double> x = Tensor<double>::randn({2, 3, 7, 6}, rng);
  Tensor<double> w = Tensor<double>::randn({4, 3, 3, 3}, rng);
  Tensor<double> b = Tensor<double>::randn({4}, rng);
  for (std::int64_t stride : {1, 2}) {
    for (std::int64_t pad : {0, 1}) {
      auto got = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(b), stride, pad);
      auto want = conv2d_naive(x, w, b, stride, pad);
      ASSERT_EQ(got.value().dims, want.dims);
      for (std::int64_t i = 0; i < want.numel(); ++i)
        EXPECT_LT(rel_err(got.value()[i], want[i]), 1e-12);
    }
  }
}

TEST(Ops, Conv2dGradient) {
  Rng rng(29);
  Var<double> x(Tensor<double>::randn({2, 2, 5, 5}, rng), true);
  Var<double> w(Tensor<double>::randn({3, 2, 3, 3}, rng), true);
  Var<double> b(Tensor<double>::randn({3}, rng), true);
  Var<double> mask(Tensor<double>::randn({2, 3, 3, 3}, rng), false);
  check_gradients({&x, &w, &b}, [&] {
    return ops::sum_all(ops::mul(ops::conv2d(x, w, b, 2, 1), mask));
  });
}

TEST(Ops, DepthwiseConvGradient) {
  Rng rng(31);
  Var<double> x(Tensor<double>::randn({2, 3, 6, 6}, rng), true);
  Var<double> w(Tensor<double>::randn({3, 3, 3}, rng), true);
  Var<double> mask(Tensor<double>::randn({2, 3, 6, 6}, rng), false);
  check_gradients({&x, &w}, [&] {
    return ops::sum_all(ops::mul(ops::depthwise_conv2d(x, w, 1, 1), mask));
  });
}

TEST(Ops, MaxPoolGradient) {
  Rng rng(37);
  Var<double> x(Tensor<double>::randn({2, 2, 4, 4}, rng), true);
  Var<double> mask(Tensor<double>::randn({2, 2, 2, 2}, rng), false);
  check_gradients({&x}, [&] { return ops::sum_all(ops::mul(ops::maxpool2x2(x), mask)); });
}

TEST(Ops, AvgPoolAsymmetricPadKeepsShape) {
  Rng rng(41);
  Var<double> x(Tensor<double>::randn({1, 2, 5, 5}, rng), true);
  auto y = ops::avgpool(x, 2, 1, 0, 0, 1, 1);
  EXPECT_EQ(y.value().dims, (Shape{1, 2, 5, 5}));
  Var<double> mask(Tensor<double>::randn({1, 2, 5, 5}, rng), false);
  check_gradients({&x}, [&] {
    return ops::sum_all(ops::mul(ops::avgpool(x, 2, 1, 0, 0, 1, 1), mask));
  });
}

TEST(Ops, BilinearUpsamplePreservesConstantsAndBackprops) {
  Var<double> c(Tensor<double>::full({1, 1, 3, 3}, 0.7), false);
  auto up = ops::upsample_bilinear(c, 9, 9);
  for (auto v : up.value().v) EXPECT_NEAR(v, 0.7, 1e-12);

  Rng rng(43);
  Var<double> x(Tensor<double>::randn({1, 2, 3, 4}, rng), true);
  Var<double> mask(Tensor<double>::randn({1, 2, 6, 8}, rng), false);
  check_gradients({&x}, [&] {
    return ops::sum_all(ops::mul(ops::upsample_bilinear(x, 6, 8), mask));
  });
}

TEST(Ops, ConcatAndBiasGradients) {
  Rng rng(47);
  Var<double> a(Tensor<double>::randn({2, 2, 3, 3}, rng), true);
  Var<double> b(Tensor<double>::randn({2, 1, 3, 3}, rng), true);
  Var<double> bias(Tensor<double>::randn({3}, rng), true);
  Var<double> mask(Tensor<double>::randn({2, 3, 3, 3}, rng), false);
  check_gradients({&a, &b, &bias}, [&] {
    return ops::sum_all(ops::mul(ops::add_channel_bias(ops::concat_channels(a, b), bias), mask));
  });
}

TEST(Ops, GlobalAvgPoolGradient) {
  Rng rng(53);
  Var<double> x(Tensor<double>::randn({2, 3, 4, 4}, rng), true);
  Var<double> mask(Tensor<double>::randn({2, 3}, rng), false);
  check_gradients({&x}, [&] { return ops::sum_all(ops::mul(ops::global_avg_pool(x), mask)); });
}

TEST(Ops, LabelComplementAndNormalize) {
  Rng rng(59);
  Tensor<double> q0 = Tensor<double>::randn({2, 3, 5}, rng);
  for (auto& v : q0.v) v = std::fabs(v) + 0.5;
  Var<double> q(q0, true);

  auto comp = ops::label_complement(q);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t s = 0; s < 5; ++s) {
      double tot = 0;
      for (std::int64_t l = 0; l < 3; ++l) tot += q.value()[(n * 3 + l) * 5 + s];
      for (std::int64_t l = 0; l < 3; ++l)
        EXPECT_NEAR(comp.value()[(n * 3 + l) * 5 + s], tot - q.value()[(n * 3 + l) * 5 + s], 1e-12);
    }

  auto norm = ops::normalize_labels(q);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t s = 0; s < 5; ++s) {
      double tot = 0;
      for (std::int64_t l = 0; l < 3; ++l) tot += norm.value()[(n * 3 + l) * 5 + s];
      EXPECT_NEAR(tot, 1.0, 1e-12);
    }

  Var<double> mask(Tensor<double>::randn({2, 3, 5}, rng), false);
  check_gradients({&q}, [&] {
    auto mid = ops::normalize_labels(ops::label_complement(q));
    return ops::sum_all(ops::mul(mid, mask));
  });
}

TEST(Ops, PairwiseFilterGradient) {
  Rng rng(61);
  const std::int64_t P = 6;
  auto K = std::make_shared<Tensor<double>>(Tensor<double>::randn({1, P, P}, rng));
  // symmetrize with zero diagonal, as the CRF builder does
  for (std::int64_t i = 0; i < P; ++i) {
    (*K)[i * P + i] = 0;
    for (std::int64_t j = 0; j < i; ++j) {
      const double v = 0.5 * ((*K)[i * P + j] + (*K)[j * P + i]);
      (*K)[i * P + j] = v;
      (*K)[j * P + i] = v;
    }
  }
  Var<double> q(Tensor<double>::randn({1, 2, P}, rng), true);
  Var<double> mask(Tensor<double>::randn({1, 2, P}, rng), false);
  check_gradients({&q}, [&] {
    return ops::sum_all(ops::mul(ops::pairwise_filter(q, K), mask));
  });
}

TEST(Ops, DropoutScalesAndMasks) {
  Rng rng(67);
  Var<double> x(Tensor<double>::full({1, 1, 20, 20}, 1.0), true);
  Rng drop = rng.fork(1);
  auto y = ops::dropout(x, 0.5, drop, true);
  std::int64_t zeros = 0;
  for (auto v : y.value().v) {
    EXPECT_TRUE(v == 0.0 || std::fabs(v - 2.0) < 1e-12);
    zeros += (v == 0.0);
  }
  EXPECT_GT(zeros, 100);
  EXPECT_LT(zeros, 300);
  // identity when not training
  Rng drop2 = rng.fork(2);
  auto z = ops::dropout(x, 0.5, drop2, false);
  for (auto v : z.value().v) EXPECT_EQ(v, 1.0);
}

TEST(Ops, NoGradModeSkipsGraph) {
  Var<double> a(Tensor<double>::full({2, 2}, 1.0), true);
  NoGradGuard guard;
  auto y = ops::mul_scalar(a, 3.0);
  EXPECT_FALSE(y.requires_grad());
}
