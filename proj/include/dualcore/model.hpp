#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualcore/cgl.hpp"
#include "dualcore/fusion.hpp"
#include "dualcore/lpl.hpp"
#include "dualcore/roi.hpp"

namespace dualcore {

// Which loss terms drive training (the fusion term is always on).
enum class LossConfig { FusionLpl, FusionCgl, FusionBoth, FusionOnly };

inline const char* loss_config_name(LossConfig lc) {
  switch (lc) {
    case LossConfig::FusionLpl: return "fusion+lpl";
    case LossConfig::FusionCgl: return "fusion+cgl";
    case LossConfig::FusionBoth: return "fusion+both";
    case LossConfig::FusionOnly: return "fusion-only";
  }
  return "?";
}

inline LossConfig parse_loss_config(const std::string& s) {
  if (s == "fusion+lpl") return LossConfig::FusionLpl;
  if (s == "fusion+cgl") return LossConfig::FusionCgl;
  if (s == "fusion+both") return LossConfig::FusionBoth;
  if (s == "fusion-only") return LossConfig::FusionOnly;
  throw std::invalid_argument("unknown loss config: " + s);
}

struct DualCoreConfig {
  LplConfig lpl;
  CglConfig cgl;
  FusionConfig fusion;
  double gamma = 0.65;  // forwarded to cgl.gamma

  static DualCoreConfig full() {
    DualCoreConfig c;
    c.lpl = LplConfig::full();
    c.cgl = CglConfig::full();
    return c;
  }
  static DualCoreConfig tiny() {
    DualCoreConfig c;
    c.lpl = LplConfig::tiny();
    c.cgl = CglConfig::tiny();
    c.fusion.conv_channels = 16;
    c.fusion.hidden_width = 64;
    c.fusion.embed_width = 32;
    return c;
  }
  static DualCoreConfig micro() {
    DualCoreConfig c;
    c.lpl = LplConfig::micro();
    c.lpl.input_size = 16;  // both paths see the same resolution
    c.cgl = CglConfig::micro();
    c.fusion.conv_channels = 4;
    c.fusion.hidden_width = 8;
    c.fusion.embed_width = 4;
    return c;
  }

  void validate() const {
    lpl.validate();
    cgl.validate();
    if (lpl.input_size != cgl.input_size)
      throw std::invalid_argument("lpl and cgl input sizes must match");
  }
};

template <typename T>
struct ModelOutput {
  LplOutput<T> lpl;
  SegmentationOutput<T> seg;
  DiagnosisOutput<T> diagnosis;
};

template <typename T>
struct ModelLosses {
  Var<T> fusion;
  Var<T> lpl;
  Var<T> cgl;
  Var<T> total;
};

template <typename T>
class DualCoreNet {
 public:
  explicit DualCoreNet(const DualCoreConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg.validate();
    cfg_.cgl.gamma = cfg.gamma;
    Rng rng(mix64(seed ^ 0xD0A1C04Eull));
    lpl_ = LplNet<T>(params_, cfg_.lpl, rng);
    cgl_ = CglNet<T>(params_, cfg_.cgl, rng);
    fusion_ = FusionNet<T>(params_, cfg_.fusion, cfg_.lpl.trunk_channels,
                           cfg_.cgl.base_channels + 2, rng);
  }

  ModelOutput<T> forward(const Var<T>& lpl_image, const Var<T>& cgl_image,
                         const FwdCtx<T>& ctx) const {
    ModelOutput<T> out;
    out.lpl = lpl_(lpl_image, ctx);
    out.seg = cgl_(cgl_image, ctx);
    Var<T> le = fusion_.transform_lpl(out.lpl.trunk);
    Var<T> ce = fusion_.transform_cgl(out.seg.fusion_features);
    out.diagnosis = fusion_.fuse_and_classify(le, ce);
    return out;
  }

  ModelLosses<T> losses(const ModelOutput<T>& out, const std::vector<int>& labels,
                        const Tensor<T>& masks, LossConfig lc) const {
    ModelLosses<T> l;
    l.fusion = fusion_loss(out.diagnosis.probs, labels);
    l.lpl = lpl_loss(out.lpl.probs, labels);
    l.cgl = cgl_loss(out.seg, masks, cfg_.cgl.gamma);
    const double a = (lc == LossConfig::FusionLpl || lc == LossConfig::FusionBoth)
                         ? cfg_.fusion.alpha
                         : 0.0;
    const double b = (lc == LossConfig::FusionCgl || lc == LossConfig::FusionBoth)
                         ? cfg_.fusion.beta
                         : 0.0;
    l.total = total_loss(l.fusion, l.lpl, l.cgl, a, b);
    return l;
  }

  // batched [N,1,S,S] inputs and [N,S,S] masks from roi samples
  static void batch_from_samples(const std::vector<RoiSample>& samples,
                                 const std::vector<std::size_t>& idx, Tensor<T>& lpl_img,
                                 Tensor<T>& cgl_img, Tensor<T>& masks, std::vector<int>& labels) {
    const std::int64_t N = static_cast<std::int64_t>(idx.size());
    const std::int64_t S = samples[idx[0]].lpl_image.dims[0];
    lpl_img = Tensor<T>({N, 1, S, S});
    cgl_img = Tensor<T>({N, 1, S, S});
    masks = Tensor<T>({N, S, S});
    labels.assign(static_cast<std::size_t>(N), 0);
    for (std::int64_t n = 0; n < N; ++n) {
      const RoiSample& s = samples[idx[static_cast<std::size_t>(n)]];
      for (std::int64_t i = 0; i < S * S; ++i) {
        lpl_img[n * S * S + i] = static_cast<T>(s.lpl_image[i]);
        cgl_img[n * S * S + i] = static_cast<T>(s.cgl_image[i]);
        masks[n * S * S + i] = static_cast<T>(s.cgl_mask[i]);
      }
      labels[static_cast<std::size_t>(n)] = s.label;
    }
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const DualCoreConfig& config() const { return cfg_; }
  const LplNet<T>& lpl() const { return lpl_; }
  const CglNet<T>& cgl() const { return cgl_; }
  const FusionNet<T>& fusion() const { return fusion_; }

 private:
  DualCoreConfig cfg_;
  ParamStore<T> params_;
  LplNet<T> lpl_;
  CglNet<T> cgl_;
  FusionNet<T> fusion_;
};

}  // namespace dualcore
