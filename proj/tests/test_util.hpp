#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "dualcore/autograd.hpp"
#include "dualcore/ops.hpp"

namespace dualcore::testing {

// Relative error with an absolute floor: entries below ~1e-6 are compared
// absolutely, since central differences carry ~1e-10 roundoff at h=1e-6 and
// relative comparison is meaningless there.
inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

// Central finite differences against analytic gradients for every entry of
// every listed parameter. loss_fn must rebuild the graph from current values.
inline void check_gradients(const std::vector<Var<double>*>& params,
                            const std::function<Var<double>()>& loss_fn, double tol = 1e-3,
                            double h = 1e-6) {
  for (auto* p : params) p->zero_grad();
  Var<double> loss = loss_fn();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad());

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& val = params[pi]->value();
    for (std::int64_t i = 0; i < val.numel(); ++i) {
      const double orig = val[i];
      NoGradGuard guard;  // numeric probes need no graph
      val[i] = orig + h;
      const double fp = loss_fn().item();
      val[i] = orig - h;
      const double fm = loss_fn().item();
      val[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[pi][i];
      EXPECT_LT(rel_err(a, numeric), tol)
          << "param " << pi << " entry " << i << ": analytic " << a << " numeric " << numeric;
    }
  }
}

inline Tensor<double> random_tensor(Shape d, Rng& rng, double scale = 1.0) {
  return Tensor<double>::randn(std::move(d), rng, scale);
}

}  // namespace dualcore::testing
