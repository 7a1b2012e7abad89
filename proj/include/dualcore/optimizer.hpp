#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dualcore/nn.hpp"

namespace dualcore {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Adaptive-moment optimizer over a parameter registry. State layout follows
// registration order, single-writer.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& params, AdamOptions opt) : params_(&params), opt_(opt) {
    for (const auto& [name, v] : params.entries()) {
      m_.push_back(Tensor<T>::zeros(v.value().dims));
      v_.push_back(Tensor<T>::zeros(v.value().dims));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
    std::size_t k = 0;
    for (auto& [name, p] : params_->entries()) {
      Tensor<T>& val = p.value();
      const Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::int64_t i = 0; i < val.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = opt_.beta1 * static_cast<double>(m[i]) + (1 - opt_.beta1) * gi;
        const double vi = opt_.beta2 * static_cast<double>(v[i]) + (1 - opt_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double upd = opt_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt_.eps);
        if (opt_.weight_decay > 0) upd += opt_.lr * opt_.weight_decay * static_cast<double>(val[i]);
        val[i] = static_cast<T>(static_cast<double>(val[i]) - upd);
      }
      ++k;
    }
  }

  void zero_grad() { params_->zero_grad(); }
  std::int64_t steps() const { return t_; }

 private:
  ParamStore<T>* params_;
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dualcore
