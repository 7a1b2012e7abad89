#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualcore/crf.hpp"
#include "dualcore/nn.hpp"

namespace dualcore {

// Conditional Graph Learner: encoder-decoder segmentation CNN with the CRF
// layer applied at a low-resolution decoder stage. The latent 2-class softmax
// h(x) initializes the CRF; the refined marginals are upsampled back to full
// resolution, exposed directly as the CRF head, and concatenated with the
// high-resolution decoder features ahead of the final softmax (the CNN head).

struct CglConfig {
  std::int64_t input_size = 224;
  std::int64_t base_channels = 32;  // doubles per stage: 32,64,128,256
  int depth = 4;                    // down/up stages
  std::int64_t crf_resolution = 56;
  double gamma = 0.65;  // CRF dice trade-off; 0.42 fits DDSM-like data
  bool residual = true;
  CrfParams crf;

  static CglConfig full() { return {}; }
  static CglConfig tiny() {
    CglConfig c;
    c.input_size = 64;
    c.base_channels = 8;
    c.depth = 3;
    c.crf_resolution = 16;
    return c;
  }
  static CglConfig micro() {
    CglConfig c;
    c.input_size = 16;
    c.base_channels = 4;
    c.depth = 2;
    c.crf_resolution = 4;
    c.crf.iterations = 3;
    return c;
  }

  void validate() const {
    if (input_size % (std::int64_t(1) << depth) != 0)
      throw std::invalid_argument("cgl input_size must be divisible by 2^depth");
    bool ok = false;
    for (int k = 0; k <= depth; ++k)
      if (crf_resolution == (input_size >> k)) ok = true;
    if (!ok || crf_resolution < 1)
      throw std::invalid_argument("cgl crf_resolution must be input_size / 2^k");
    if (gamma < 0 || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be >= 0");
  }
};

template <typename T>
struct SegmentationOutput {
  Var<T> cnn_probs;        // [N,2,S,S] final softmax (post CRF concat)
  Var<T> crf_probs;        // [N,2,S,S] upsampled CRF marginals
  Var<T> fusion_features;  // [N,base+2,S,S] decoder output | crf_probs
  Var<T> unary;            // [N,2,hc,wc] latent logits (h(x) = softmax(unary))
};

namespace cgl_detail {

// two 3x3 convs with an optional projected residual
template <typename T>
class ConvStage {
 public:
  ConvStage() = default;
  ConvStage(ParamStore<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
            bool residual, Rng& rng)
      : residual_(residual) {
    c1_ = nn::Conv2d<T>(ps, name + ".c1", cin, cout, 3, 1, 1, rng);
    c2_ = nn::Conv2d<T>(ps, name + ".c2", cout, cout, 3, 1, 1, rng);
    if (residual) proj_ = nn::Conv2d<T>(ps, name + ".proj", cin, cout, 1, 1, 0, rng);
  }
  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = c2_(ops::relu(c1_(x)));
    if (residual_) h = ops::add(h, proj_(x));
    return ops::relu(h);
  }

 private:
  nn::Conv2d<T> c1_, c2_, proj_;
  bool residual_ = false;
};

}  // namespace cgl_detail

template <typename T>
class CglNet {
 public:
  CglNet() = default;
  CglNet(ParamStore<T>& ps, const CglConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    std::int64_t cin = 1;
    for (int i = 0; i < cfg.depth; ++i) {
      const std::int64_t c = cfg.base_channels << i;
      enc_.emplace_back(ps, "cgl.enc" + std::to_string(i), cin, c, cfg.residual, rng);
      cin = c;
    }
    bottleneck_ = cgl_detail::ConvStage<T>(ps, "cgl.bottleneck", cin,
                                           cfg.base_channels << cfg.depth, cfg.residual, rng);
    cin = cfg.base_channels << cfg.depth;
    for (int i = cfg.depth - 1; i >= 0; --i) {
      const std::int64_t c = cfg.base_channels << i;
      up_.emplace_back(ps, "cgl.up" + std::to_string(i), cin, c, 3, 1, 1, rng);
      dec_.emplace_back(ps, "cgl.dec" + std::to_string(i), 2 * c, c, cfg.residual, rng);
      cin = c;
    }
    unary_head_ = nn::Conv2d<T>(ps, "cgl.unary", channels_at_res(cfg.crf_resolution), 2, 1, 1, 0,
                                rng);
    crf_weights_.spatial = ps.add("cgl.crf.w_spatial", Tensor<T>::scalar(T(1)));
    crf_weights_.bilateral = ps.add("cgl.crf.w_bilateral", Tensor<T>::scalar(T(1)));
    final_head_ = nn::Conv2d<T>(ps, "cgl.final", cfg.base_channels + 2, 2, 1, 1, 0, rng);
  }

  SegmentationOutput<T> operator()(const Var<T>& x, const FwdCtx<T>& ctx) const {
    (void)ctx;
    const auto& d = x.dims();
    if (d.size() != 4 || d[1] != 1 || d[2] != cfg_.input_size || d[3] != cfg_.input_size)
      throw ShapeMismatch("cgl_forward input " + shape_str(d));
    const std::int64_t N = d[0], S = cfg_.input_size;

    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (int i = 0; i < cfg_.depth; ++i) {
      h = enc_[static_cast<std::size_t>(i)](h);
      skips.push_back(h);
      h = ops::maxpool2x2(h);
    }
    h = bottleneck_(h);

    SegmentationOutput<T> out;
    Var<T> q_up;
    bool crf_done = false;
    std::int64_t res = S >> cfg_.depth;
    if (res == cfg_.crf_resolution) {
      std::tie(out.unary, q_up) = run_crf(h, x, N);
      crf_done = true;
    }
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::int64_t target = res * 2;
      h = up_[static_cast<std::size_t>(i)](ops::upsample_bilinear(h, target, target));
      h = ops::concat_channels(h, skips[static_cast<std::size_t>(cfg_.depth - 1 - i)]);
      h = dec_[static_cast<std::size_t>(i)](h);
      res = target;
      if (!crf_done && res == cfg_.crf_resolution) {
        std::tie(out.unary, q_up) = run_crf(h, x, N);
        crf_done = true;
      }
    }

    // upsampled CRF marginals are the CRF head; bilinear interpolation of a
    // normalized field stays normalized, renormalize to absorb rounding
    Var<T> qm = ops::upsample_bilinear(
        ops::reshape(q_up, {N, 2, cfg_.crf_resolution, cfg_.crf_resolution}), S, S);
    out.crf_probs = ops::reshape(ops::normalize_labels(ops::reshape(qm, {N, 2, S * S})),
                                 {N, 2, S, S});

    Var<T> cat = ops::concat_channels(h, out.crf_probs);
    out.cnn_probs = ops::softmax_channel(final_head_(cat));
    out.fusion_features = cat;
    return out;
  }

  const CglConfig& config() const { return cfg_; }
  const CrfWeights<T>& crf_weights() const { return crf_weights_; }

 private:
  std::int64_t channels_at_res(std::int64_t res) const {
    // resolution of the decoder/bottleneck feature map -> channel count
    const std::int64_t bottleneck_res = cfg_.input_size >> cfg_.depth;
    if (res == bottleneck_res) return cfg_.base_channels << cfg_.depth;
    std::int64_t r = bottleneck_res;
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      r *= 2;
      if (r == res) return cfg_.base_channels << i;
    }
    throw std::invalid_argument("crf_resolution unreachable");
  }

  std::pair<Var<T>, Var<T>> run_crf(const Var<T>& feats, const Var<T>& image,
                                    std::int64_t N) const {
    const std::int64_t hc = cfg_.crf_resolution;
    Var<T> unary4 = unary_head_(feats);  // [N,2,hc,hc]
    Var<T> unary = ops::reshape(unary4, {N, 2, hc * hc});
    // kernel features come from the input image, area-averaged to the lattice
    Tensor<T> inten({N, hc * hc});
    for (std::int64_t n = 0; n < N; ++n) {
      Tensor<T> plane({cfg_.input_size, cfg_.input_size});
      std::copy_n(image.value().data() + n * cfg_.input_size * cfg_.input_size,
                  cfg_.input_size * cfg_.input_size, plane.data());
      Tensor<T> small = area_downsample(plane, hc, hc);
      std::copy_n(small.data(), hc * hc, inten.data() + n * hc * hc);
    }
    auto kernels = build_crf_kernels(inten, hc, hc, cfg_.crf);
    Var<T> q = crf_inference(unary, kernels, crf_weights_, cfg_.crf);
    return {unary4, q};
  }

  CglConfig cfg_;
  std::vector<cgl_detail::ConvStage<T>> enc_;
  cgl_detail::ConvStage<T> bottleneck_;
  std::vector<nn::Conv2d<T>> up_;
  std::vector<cgl_detail::ConvStage<T>> dec_;
  nn::Conv2d<T> unary_head_;
  nn::Conv2d<T> final_head_;
  CrfWeights<T> crf_weights_;
};

// Soft Dice coefficient 2|y.p|/(|y|+|p|) with an epsilon in numerator and
// denominator; both-empty maps give exactly 1.
template <typename T>
Var<T> soft_dice(const Tensor<T>& y, const Var<T>& p, T eps = T(1e-6)) {
  if (y.dims != p.value().dims)
    throw ShapeMismatch("soft_dice " + shape_str(y.dims) + " vs " + shape_str(p.value().dims));
  for (const T& v : p.value().v)
    if (v < T(-1e-9) || v > T(1) + T(1e-9))
      throw std::invalid_argument("soft_dice expects probabilities");
  Var<T> yc(y, false);
  Var<T> inter = ops::sum_all(ops::mul(yc, p));
  Var<T> sums = ops::add(ops::sum_all(yc), ops::sum_all(p));
  return ops::div(ops::add_scalar(ops::mul_scalar(inter, T(2)), eps), ops::add_scalar(sums, eps));
}

// Eq.-6 style dual dice loss for one sample:
// (1 - dice(y, cnn)) + gamma * (1 - dice(y, crf))
template <typename T>
Var<T> cgl_sample_loss(const Tensor<T>& y, const Var<T>& cnn_fg, const Var<T>& crf_fg,
                       double gamma) {
  Var<T> one(Tensor<T>::scalar(T(1)), false);
  Var<T> l = ops::sub(one, soft_dice(y, cnn_fg));
  Var<T> r = ops::mul_scalar(ops::sub(one, soft_dice(y, crf_fg)), static_cast<T>(gamma));
  return ops::add(l, r);
}

// Batch loss: sum of per-sample dual dice losses. masks is [N,S,S].
template <typename T>
Var<T> cgl_loss(const SegmentationOutput<T>& out, const Tensor<T>& masks, double gamma) {
  const auto& d = out.cnn_probs.dims();
  const std::int64_t N = d[0], S = d[2];
  if (masks.dims != Shape{N, S, S}) throw ShapeMismatch("cgl_loss masks " + shape_str(masks.dims));
  Var<T> total(Tensor<T>::scalar(T(0)), false);
  for (std::int64_t n = 0; n < N; ++n) {
    Tensor<T> y({S, S});
    std::copy_n(masks.data() + n * S * S, S * S, y.data());
    Var<T> cnn_fg = ops::reshape(
        ops::slice_channels(ops::slice_batch(out.cnn_probs, n, n + 1), 1, 2), {S, S});
    Var<T> crf_fg = ops::reshape(
        ops::slice_channels(ops::slice_batch(out.crf_probs, n, n + 1), 1, 2), {S, S});
    total = ops::add(total, cgl_sample_loss(y, cnn_fg, crf_fg, gamma));
  }
  return total;
}

}  // namespace dualcore
