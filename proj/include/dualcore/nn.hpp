#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dualcore/ops.hpp"
#include "dualcore/random.hpp"

namespace dualcore {

// Ordered parameter registry. Registration order is construction order, which
// fixes the optimizer state layout and the checkpoint layout.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    Var<T> v(std::move(init), true);
    entries_.emplace_back(name, v);
    return v;
  }

  std::vector<std::pair<std::string, Var<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

template <typename T>
struct FwdCtx {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream, required when training
};

namespace nn {

template <typename T>
Tensor<T> he_init(Shape shape, std::int64_t fan_in, Rng& rng) {
  const T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return Tensor<T>::randn(std::move(shape), rng, scale);
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
         std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng)
      : stride_(stride), pad_(pad) {
    w_ = ps.add(name + ".w", he_init<T>({cout, cin, k, k}, cin * k * k, rng));
    b_ = ps.add(name + ".b", Tensor<T>::zeros({cout}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, w_, b_, stride_, pad_); }

 private:
  Var<T> w_, b_;
  std::int64_t stride_ = 1, pad_ = 0;
};

// depthwise k x k (no bias) followed by a pointwise 1x1 with bias
template <typename T>
class SepConv2d {
 public:
  SepConv2d() = default;
  SepConv2d(ParamStore<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
            std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng)
      : stride_(stride), pad_(pad) {
    dw_ = ps.add(name + ".dw", he_init<T>({cin, k, k}, k * k, rng));
    pw_ = ps.add(name + ".pw", he_init<T>({cout, cin, 1, 1}, cin, rng));
    pb_ = ps.add(name + ".pb", Tensor<T>::zeros({cout}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return ops::conv2d(ops::depthwise_conv2d(x, dw_, stride_, pad_), pw_, pb_, 1, 0);
  }
  static std::int64_t count(std::int64_t cin, std::int64_t cout, std::int64_t k) {
    return cin * k * k + cin * cout + cout;
  }

 private:
  Var<T> dw_, pw_, pb_;
  std::int64_t stride_ = 1, pad_ = 0;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(ParamStore<T>& ps, const std::string& name, std::int64_t fin, std::int64_t fout,
        Rng& rng) {
    w_ = ps.add(name + ".w", he_init<T>({fin, fout}, fin, rng));
    b_ = ps.add(name + ".b", Tensor<T>::zeros({fout}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::dense(x, w_, b_); }

 private:
  Var<T> w_, b_;
};

}  // namespace nn

// -sum_n log p_true, Eqs. of the categorical cross-entropy family; probs are
// clamped to [1e-7, 1-1e-7] inside.
template <typename T>
Var<T> ce_loss_sum(const Var<T>& probs, const std::vector<int>& labels) {
  return ops::cross_entropy_sum(probs, labels, static_cast<T>(1e-7));
}

}  // namespace dualcore
