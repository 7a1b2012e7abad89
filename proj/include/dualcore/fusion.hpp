#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualcore/nn.hpp"

namespace dualcore {

// Fusion head: each path's feature map goes through a transformation block
// (two strided convs, average pooling, two dense layers) into an embedding;
// the two embeddings are concatenated and classified by a softmax layer.

struct FusionConfig {
  std::int64_t conv_channels = 32;
  std::int64_t hidden_width = 256;
  std::int64_t embed_width = 64;
  double alpha = 1.0;  // LPL loss trade-off in the total loss
  double beta = 1.0;   // CGL loss trade-off
};

template <typename T>
struct DiagnosisOutput {
  Var<T> probs;   // [N,2] (benign, malignant)
  Var<T> logits;  // [N,2]
  Var<T> lpl_embedding;
  Var<T> cgl_embedding;
};

namespace fusion_detail {

template <typename T>
class TransformBlock {
 public:
  TransformBlock() = default;
  TransformBlock(ParamStore<T>& ps, const std::string& name, std::int64_t cin,
                 const FusionConfig& cfg, Rng& rng) {
    c1_ = nn::Conv2d<T>(ps, name + ".c1", cin, cfg.conv_channels, 3, 2, 1, rng);
    c2_ = nn::Conv2d<T>(ps, name + ".c2", cfg.conv_channels, cfg.conv_channels, 3, 2, 1, rng);
    d1_ = nn::Dense<T>(ps, name + ".d1", cfg.conv_channels, cfg.hidden_width, rng);
    d2_ = nn::Dense<T>(ps, name + ".d2", cfg.hidden_width, cfg.embed_width, rng);
  }
  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = ops::relu(c2_(ops::relu(c1_(x))));
    Var<T> v = ops::global_avg_pool(h);
    return d2_(ops::relu(d1_(v)));
  }

 private:
  nn::Conv2d<T> c1_, c2_;
  nn::Dense<T> d1_, d2_;
};

template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b) {
  const std::int64_t N = a.dims()[0], Ea = a.dims()[1], Eb = b.dims()[1];
  Var<T> a4 = ops::reshape(a, {N, Ea, 1, 1});
  Var<T> b4 = ops::reshape(b, {N, Eb, 1, 1});
  return ops::reshape(ops::concat_channels(a4, b4), {N, Ea + Eb});
}

}  // namespace fusion_detail

template <typename T>
class FusionNet {
 public:
  FusionNet() = default;
  FusionNet(ParamStore<T>& ps, const FusionConfig& cfg, std::int64_t lpl_channels,
            std::int64_t cgl_channels, Rng& rng)
      : cfg_(cfg) {
    lpl_block_ = fusion_detail::TransformBlock<T>(ps, "fusion.lpl", lpl_channels, cfg, rng);
    cgl_block_ = fusion_detail::TransformBlock<T>(ps, "fusion.cgl", cgl_channels, cfg, rng);
    head_ = nn::Dense<T>(ps, "fusion.head", 2 * cfg.embed_width, 2, rng);
  }

  Var<T> transform_lpl(const Var<T>& features) const { return lpl_block_(features); }
  Var<T> transform_cgl(const Var<T>& features) const { return cgl_block_(features); }

  DiagnosisOutput<T> fuse_and_classify(const Var<T>& lpl_embedding,
                                       const Var<T>& cgl_embedding) const {
    if (lpl_embedding.dims() != cgl_embedding.dims())
      throw ShapeMismatch("fuse_and_classify embeddings");
    DiagnosisOutput<T> out;
    out.lpl_embedding = lpl_embedding;
    out.cgl_embedding = cgl_embedding;
    Var<T> cat = fusion_detail::concat_features(lpl_embedding, cgl_embedding);
    out.logits = head_(cat);
    const std::int64_t N = cat.dims()[0];
    out.probs =
        ops::reshape(ops::softmax_channel(ops::reshape(out.logits, {N, 2, 1, 1})), {N, 2});
    return out;
  }

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  fusion_detail::TransformBlock<T> lpl_block_, cgl_block_;
  nn::Dense<T> head_;
};

// Eq.-7 style loss: -sum_n log p(z_n | x_n; theta)
template <typename T>
Var<T> fusion_loss(const Var<T>& probs, const std::vector<int>& labels) {
  return ce_loss_sum(probs, labels);
}

// Eq.-8 style total: l_fusion + alpha * l_lpl + beta * l_cgl
template <typename T>
Var<T> total_loss(const Var<T>& l_fusion, const Var<T>& l_lpl, const Var<T>& l_cgl, double alpha,
                  double beta) {
  return ops::add(l_fusion, ops::add(ops::mul_scalar(l_lpl, static_cast<T>(alpha)),
                                     ops::mul_scalar(l_cgl, static_cast<T>(beta))));
}

}  // namespace dualcore
