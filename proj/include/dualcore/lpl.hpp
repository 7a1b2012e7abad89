#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualcore/nn.hpp"

namespace dualcore {

// Locality Preserving Learner: an 11-layer separable-convolution classifier
// over the contextual ROI. Layers 1-4 shrink 224 -> 112 -> 56 -> 28 while the
// channel count grows stem -> mid -> trunk; layers 5-10 are two blocks each of
// kinds A, B and C at constant shape; layer 11 is the softmax head. Block
// branches split the trunk width evenly, are concatenated and projected back,
// and the block output is x + F(x) with no activation after the sum, so a
// zeroed block is exactly the identity.

enum class ModuleKind { A, B, C, D };

struct ModuleSpec {
  ModuleKind kind = ModuleKind::A;
  bool residual = true;
};

struct LplConfig {
  std::int64_t input_size = 224;
  std::int64_t stem_channels = 16;
  std::int64_t mid_channels = 128;    // module-D output at layer 3
  std::int64_t trunk_channels = 728;  // module-D output at layer 4, block width
  double dropout_rate = 0.5;
  int num_classes = 2;
  bool residual = true;

  static LplConfig full() { return {}; }
  static LplConfig tiny() {
    LplConfig c;
    c.input_size = 64;
    c.stem_channels = 16;
    c.mid_channels = 32;
    c.trunk_channels = 64;
    return c;
  }
  // smallest sizes used by the gradient suites
  static LplConfig micro() {
    LplConfig c;
    c.input_size = 8;
    c.stem_channels = 4;
    c.mid_channels = 6;
    c.trunk_channels = 8;
    c.dropout_rate = 0.0;
    return c;
  }

  void validate() const {
    if (input_size % 8 != 0) throw std::invalid_argument("lpl input_size must be divisible by 8");
    if (mid_channels % 2 != 0 || trunk_channels % 2 != 0)
      throw std::invalid_argument("lpl channel widths must be even");
  }
  std::int64_t trunk_size() const { return input_size / 8; }
};

template <typename T>
class LplModule {
 public:
  LplModule() = default;

  // kinds A/B/C preserve shape (cin == cout); kind D halves the spatial size.
  LplModule(ParamStore<T>& ps, const std::string& name, ModuleSpec spec, std::int64_t cin,
            std::int64_t cout, Rng& rng)
      : spec_(spec), cin_(cin), cout_(cout) {
    const std::int64_t half = cout / 2;
    using nn::SepConv2d;
    switch (spec.kind) {
      case ModuleKind::A:
        // one 3x3 branch and a stacked 3x3+3x3 branch (5x5 receptive field)
        br1_.emplace_back(ps, name + ".br1.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c1", half, half, 3, 1, 1, rng);
        break;
      case ModuleKind::B:
        // 3x3 branch and a triple 3x3 stack (7x7 receptive field)
        br1_.emplace_back(ps, name + ".br1.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c1", half, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c2", half, half, 3, 1, 1, rng);
        break;
      case ModuleKind::C:
        // 5x5-receptive branch and a triple 3x3 stack topped by a stride-1
        // 2x2 average pool, reaching an 8x8 receptive field
        br1_.emplace_back(ps, name + ".br1.c0", cin, half, 3, 1, 1, rng);
        br1_.emplace_back(ps, name + ".br1.c1", half, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c1", half, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c2", half, half, 3, 1, 1, rng);
        pool_tail_ = true;
        break;
      case ModuleKind::D:
        // one stride-2 conv branch and a stride-1 + stride-2 stack; their
        // concatenation supplies the doubled-channel, halved-size output
        br1_.emplace_back(ps, name + ".br1.c0", cin, half, 3, 2, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c0", cin, half, 3, 1, 1, rng);
        br2_.emplace_back(ps, name + ".br2.c1", half, half, 3, 2, 1, rng);
        break;
    }
    if (spec.kind != ModuleKind::D) {
      if (cin != cout) throw ShapeMismatch("modules A/B/C preserve the channel count");
      proj_ = nn::Conv2d<T>(ps, name + ".proj", cout, cout, 1, 1, 0, rng);
      has_proj_ = true;
    } else if (spec.residual) {
      shortcut_ = nn::Conv2d<T>(ps, name + ".shortcut", cin, cout, 1, 2, 0, rng);
      has_shortcut_ = true;
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = ops::relu(x);
    Var<T> a = run_branch(br1_, h);
    Var<T> b = run_branch(br2_, h);
    if (pool_tail_) b = ops::avgpool(b, 2, 1, 0, 0, 1, 1);
    Var<T> f = ops::concat_channels(a, b);
    if (has_proj_) f = proj_(f);
    if (spec_.kind != ModuleKind::D) {
      if (spec_.residual) return ops::add(x, f);
      return f;
    }
    if (has_shortcut_) return ops::add(shortcut_(x), f);
    return f;
  }

 private:
  static Var<T> run_branch(const std::vector<nn::SepConv2d<T>>& convs, const Var<T>& h) {
    Var<T> y = h;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      if (i > 0) y = ops::relu(y);
      y = convs[i](y);
    }
    return y;
  }

  ModuleSpec spec_;
  std::int64_t cin_ = 0, cout_ = 0;
  std::vector<nn::SepConv2d<T>> br1_, br2_;
  nn::Conv2d<T> proj_;
  nn::Conv2d<T> shortcut_;
  bool has_proj_ = false;
  bool has_shortcut_ = false;
  bool pool_tail_ = false;
};

template <typename T>
struct LplOutput {
  Var<T> logits;  // [N,2]
  Var<T> probs;   // [N,2] softmax
  Var<T> trunk;   // [N,trunk,S/8,S/8] layer-10 features
  Var<T> stem;    // [N,stem,S,S] layer-1 features
};

template <typename T>
class LplNet {
 public:
  LplNet() = default;
  LplNet(ParamStore<T>& ps, const LplConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    stem_ = nn::Conv2d<T>(ps, "lpl.stem", 1, cfg.stem_channels, 3, 1, 1, rng);
    d3_ = LplModule<T>(ps, "lpl.d3", {ModuleKind::D, cfg.residual}, cfg.stem_channels,
                       cfg.mid_channels, rng);
    d4_ = LplModule<T>(ps, "lpl.d4", {ModuleKind::D, cfg.residual}, cfg.mid_channels,
                       cfg.trunk_channels, rng);
    const ModuleKind kinds[6] = {ModuleKind::A, ModuleKind::A, ModuleKind::B,
                                 ModuleKind::B, ModuleKind::C, ModuleKind::C};
    for (int i = 0; i < 6; ++i)
      blocks_.emplace_back(ps, "lpl.block" + std::to_string(i + 5),
                           ModuleSpec{kinds[i], cfg.residual}, cfg.trunk_channels,
                           cfg.trunk_channels, rng);
    head_ = nn::Dense<T>(ps, "lpl.head", cfg.trunk_channels, cfg.num_classes, rng);
  }

  LplOutput<T> operator()(const Var<T>& x, const FwdCtx<T>& ctx) const {
    const auto& d = x.dims();
    if (d.size() != 4 || d[1] != 1 || d[2] != cfg_.input_size || d[3] != cfg_.input_size)
      throw ShapeMismatch("lpl_forward input " + shape_str(d));
    LplOutput<T> out;
    Var<T> h = ops::relu(stem_(x));  // layer 1
    out.stem = h;
    h = ops::maxpool2x2(h);  // layer 2
    h = d3_(h);              // layer 3
    h = d4_(h);              // layer 4
    for (const auto& blk : blocks_) h = blk(h);  // layers 5-10
    out.trunk = h;
    // layer 11: pool, dropout, dense, softmax
    Var<T> v = ops::global_avg_pool(ops::relu(h));
    if (ctx.training && cfg_.dropout_rate > 0) {
      if (!ctx.rng) throw std::invalid_argument("training forward needs an rng");
      v = ops::dropout(v, cfg_.dropout_rate, *ctx.rng, true);
    }
    out.logits = head_(v);
    out.probs = ops::reshape(
        ops::softmax_channel(ops::reshape(out.logits, {d[0], cfg_.num_classes, 1, 1})),
        {d[0], cfg_.num_classes});
    return out;
  }

  const LplConfig& config() const { return cfg_; }

 private:
  LplConfig cfg_;
  nn::Conv2d<T> stem_;
  LplModule<T> d3_, d4_;
  std::vector<LplModule<T>> blocks_;
  nn::Dense<T> head_;
};

// Eq.-style classification loss of the LPL path: -sum_n log p(z_n | x_n)
template <typename T>
Var<T> lpl_loss(const Var<T>& probs, const std::vector<int>& labels) {
  return ce_loss_sum(probs, labels);
}

// exact trainable-parameter count of a config
inline std::int64_t lpl_parameter_count(const LplConfig& cfg) {
  ParamStore<double> ps;
  Rng rng(0);
  LplNet<double> net(ps, cfg, rng);
  return ps.parameter_count();
}

}  // namespace dualcore
