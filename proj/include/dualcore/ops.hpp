#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <vector>

#include "dualcore/autograd.hpp"
#include "dualcore/tensor.hpp"

namespace dualcore {
namespace ops {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using MapCM = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] += b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] -= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      Tensor<T>& g = pb->grad_buf();
      const std::int64_t n = g.numel();
      for (std::int64_t i = 0; i < n; ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] *= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    const std::int64_t n = self.grad.numel();
    if (pa->requires_grad) {
      Tensor<T>& g = pa->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor<T>& g = pb->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor<T> out = a.value();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] /= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    const std::int64_t n = self.grad.numel();
    if (pa->requires_grad) {
      Tensor<T>& g = pa->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor<T>& g = pb->grad_buf();
      for (std::int64_t i = 0; i < n; ++i)
        g[i] -= self.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
    }
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& x : out.v) x *= c;
  auto pa = a.node();
  return make_op_result<T>(std::move(out), {pa}, [pa, c](Node<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T>& g = pa->grad_buf();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) g[i] += c * self.grad[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& x : out.v) x += c;
  auto pa = a.node();
  return make_op_result<T>(std::move(out), {pa}, [pa](Node<T>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
  });
}

// out = w[0] * x, with a trainable scalar w.
template <typename T>
Var<T> scale_by(const Var<T>& w, const Var<T>& x) {
  const T c = w.value()[0];
  Tensor<T> out = x.value();
  for (auto& v : out.v) v *= c;
  auto pw = w.node(), px = x.node();
  return make_op_result<T>(std::move(out), {pw, px}, [pw, px, c](Node<T>& self) {
    const std::int64_t n = self.grad.numel();
    if (pw->requires_grad) {
      T acc = 0;
      for (std::int64_t i = 0; i < n; ++i) acc += self.grad[i] * px->value[i];
      pw->grad_buf()[0] += acc;
    }
    if (px->requires_grad) {
      Tensor<T>& g = px->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] += c * self.grad[i];
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& x : out.v)
    if (x < T(0)) x = T(0);
  auto pa = a.node();
  return make_op_result<T>(std::move(out), {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T>& g = pa->grad_buf();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i)
      if (pa->value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape d) {
  Tensor<T> out = a.value().reshaped(d);
  auto pa = a.node();
  return make_op_result<T>(std::move(out), {pa}, [pa](Node<T>& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.reshaped(pa->value.dims));
  });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T acc = 0;
  for (const auto& x : a.value().v) acc += x;
  auto pa = a.node();
  return make_op_result<T>(Tensor<T>::scalar(acc), {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T>& g = pa->grad_buf();
    const T s = self.grad[0];
    for (auto& x : g.v) x += s;
  });
}

// x[N,C,...] + b[C]
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  const auto& xd = x.value().dims;
  if (xd.size() < 2 || b.value().numel() != xd[1]) throw ShapeMismatch("add_channel_bias");
  const std::int64_t N = xd[0], C = xd[1];
  const std::int64_t S = x.value().numel() / (N * C);
  Tensor<T> out = x.value();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T bc = b.value()[c];
      T* p = out.data() + (n * C + c) * S;
      for (std::int64_t s = 0; s < S; ++s) p[s] += bc;
    }
  auto px = x.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {px, pb}, [px, pb, N, C, S](Node<T>& self) {
    if (px->requires_grad) px->accumulate(self.grad);
    if (pb->requires_grad) {
      Tensor<T>& g = pb->grad_buf();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* p = self.grad.data() + (n * C + c) * S;
          T acc = 0;
          for (std::int64_t s = 0; s < S; ++s) acc += p[s];
          g[c] += acc;
        }
    }
  });
}

// mean over spatial dims: x[N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& d = x.value().dims;
  if (d.size() != 4) throw ShapeMismatch("global_avg_pool expects NCHW");
  const std::int64_t N = d[0], C = d[1], S = d[2] * d[3];
  Tensor<T> out({N, C});
  const T inv = T(1) / static_cast<T>(S);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x.value().data() + (n * C + c) * S;
      T acc = 0;
      for (std::int64_t s = 0; s < S; ++s) acc += p[s];
      out[n * C + c] = acc * inv;
    }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, N, C, S, inv](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T gv = self.grad[n * C + c] * inv;
        T* p = g.data() + (n * C + c) * S;
        for (std::int64_t s = 0; s < S; ++s) p[s] += gv;
      }
  });
}

// out[n,l,s] = sum_l' x[n,l',s] - x[n,l,s]   (expected Potts disagreement)
template <typename T>
Var<T> label_complement(const Var<T>& x) {
  const auto& d = x.value().dims;
  if (d.size() < 2) throw ShapeMismatch("label_complement");
  const std::int64_t N = d[0], L = d[1], S = x.value().numel() / (N * L);
  Tensor<T> out(x.value().dims);
  std::vector<T> tot(static_cast<std::size_t>(S));
  for (std::int64_t n = 0; n < N; ++n) {
    std::fill(tot.begin(), tot.end(), T(0));
    for (std::int64_t l = 0; l < L; ++l) {
      const T* p = x.value().data() + (n * L + l) * S;
      for (std::int64_t s = 0; s < S; ++s) tot[static_cast<std::size_t>(s)] += p[s];
    }
    for (std::int64_t l = 0; l < L; ++l) {
      const T* p = x.value().data() + (n * L + l) * S;
      T* q = out.data() + (n * L + l) * S;
      for (std::int64_t s = 0; s < S; ++s) q[s] = tot[static_cast<std::size_t>(s)] - p[s];
    }
  }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, N, L, S](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    std::vector<T> tot(static_cast<std::size_t>(S));
    for (std::int64_t n = 0; n < N; ++n) {
      std::fill(tot.begin(), tot.end(), T(0));
      for (std::int64_t l = 0; l < L; ++l) {
        const T* p = self.grad.data() + (n * L + l) * S;
        for (std::int64_t s = 0; s < S; ++s) tot[static_cast<std::size_t>(s)] += p[s];
      }
      for (std::int64_t l = 0; l < L; ++l) {
        const T* p = self.grad.data() + (n * L + l) * S;
        T* q = g.data() + (n * L + l) * S;
        for (std::int64_t s = 0; s < S; ++s) q[s] += tot[static_cast<std::size_t>(s)] - p[s];
      }
    }
  });
}

// y[n,l,s] = x[n,l,s] / sum_l' x[n,l',s]
template <typename T>
Var<T> normalize_labels(const Var<T>& x) {
  const auto& d = x.value().dims;
  if (d.size() < 2) throw ShapeMismatch("normalize_labels");
  const std::int64_t N = d[0], L = d[1], S = x.value().numel() / (N * L);
  Tensor<T> out(x.value().dims);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t s = 0; s < S; ++s) {
      T tot = 0;
      for (std::int64_t l = 0; l < L; ++l) tot += x.value()[(n * L + l) * S + s];
      for (std::int64_t l = 0; l < L; ++l) out[(n * L + l) * S + s] = x.value()[(n * L + l) * S + s] / tot;
    }
  auto px = x.node();
  auto out_keep = std::make_shared<Tensor<T>>(out);
  return make_op_result<T>(std::move(out), {px}, [px, N, L, S, out_keep](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    const Tensor<T>& y = *out_keep;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < S; ++s) {
        T tot = 0, dot = 0;
        for (std::int64_t l = 0; l < L; ++l) {
          tot += px->value[(n * L + l) * S + s];
          dot += self.grad[(n * L + l) * S + s] * y[(n * L + l) * S + s];
        }
        for (std::int64_t l = 0; l < L; ++l)
          g[(n * L + l) * S + s] += (self.grad[(n * L + l) * S + s] - dot) / tot;
      }
  });
}

// softmax over dim 1 of [N,C,...]
template <typename T>
Var<T> softmax_channel(const Var<T>& x) {
  const auto& d = x.value().dims;
  if (d.size() < 2) throw ShapeMismatch("softmax_channel");
  const std::int64_t N = d[0], C = d[1], S = x.value().numel() / (N * C);
  Tensor<T> out(x.value().dims);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t s = 0; s < S; ++s) {
      T mx = x.value()[(n * C + 0) * S + s];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, x.value()[(n * C + c) * S + s]);
      T tot = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(x.value()[(n * C + c) * S + s] - mx);
        out[(n * C + c) * S + s] = e;
        tot += e;
      }
      for (std::int64_t c = 0; c < C; ++c) out[(n * C + c) * S + s] /= tot;
    }
  auto px = x.node();
  auto y_keep = std::make_shared<Tensor<T>>(out);
  return make_op_result<T>(std::move(out), {px}, [px, N, C, S, y_keep](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    const Tensor<T>& y = *y_keep;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < S; ++s) {
        T dot = 0;
        for (std::int64_t c = 0; c < C; ++c)
          dot += self.grad[(n * C + c) * S + s] * y[(n * C + c) * S + s];
        for (std::int64_t c = 0; c < C; ++c)
          g[(n * C + c) * S + s] += y[(n * C + c) * S + s] * (self.grad[(n * C + c) * S + s] - dot);
      }
  });
}

// -sum_n log(clamp(probs[n, labels[n]])); clamp keeps log finite.
template <typename T>
Var<T> cross_entropy_sum(const Var<T>& probs, const std::vector<int>& labels, T floor_p = T(1e-7)) {
  const auto& d = probs.value().dims;
  if (d.size() != 2 || d[0] != static_cast<std::int64_t>(labels.size()))
    throw ShapeMismatch("cross_entropy_sum");
  const std::int64_t N = d[0], C = d[1];
  const T ceil_p = T(1) - floor_p;
  T loss = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    T p = probs.value()[n * C + labels[static_cast<std::size_t>(n)]];
    p = std::min(std::max(p, floor_p), ceil_p);
    loss -= std::log(p);
  }
  auto pp = probs.node();
  return make_op_result<T>(Tensor<T>::scalar(loss), {pp},
                           [pp, labels, N, C, floor_p, ceil_p](Node<T>& self) {
                             if (!pp->requires_grad) return;
                             Tensor<T>& g = pp->grad_buf();
                             const T go = self.grad[0];
                             for (std::int64_t n = 0; n < N; ++n) {
                               const std::int64_t idx = n * C + labels[static_cast<std::size_t>(n)];
                               const T p = pp->value[idx];
                               if (p > floor_p && p < ceil_p) g[idx] -= go / p;
                             }
                           });
}

// ---------------------------------------------------------------------------
// dense / matmul
// ---------------------------------------------------------------------------

// y[N,O] = x[N,F] * w[F,O] + b[O]
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xd = x.value().dims;
  const auto& wd = w.value().dims;
  if (xd.size() != 2 || wd.size() != 2 || xd[1] != wd[0] || b.value().numel() != wd[1])
    throw ShapeMismatch("dense " + shape_str(xd) + " x " + shape_str(wd));
  const std::int64_t N = xd[0], F = xd[1], O = wd[1];
  Tensor<T> out({N, O});
  MapCM<T> xm(x.value().data(), N, F);
  MapCM<T> wm(w.value().data(), F, O);
  MapM<T> ym(out.data(), N, O);
  ym.noalias() = xm * wm;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) out[n * O + o] += b.value()[o];
  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {px, pw, pb}, [px, pw, pb, N, F, O](Node<T>& self) {
    MapCM<T> gm(self.grad.data(), N, O);
    if (px->requires_grad) {
      MapM<T> gx(px->grad_buf().data(), N, F);
      MapCM<T> wm(pw->value.data(), F, O);
      gx.noalias() += gm * wm.transpose();
    }
    if (pw->requires_grad) {
      MapM<T> gw(pw->grad_buf().data(), F, O);
      MapCM<T> xm(px->value.data(), N, F);
      gw.noalias() += xm.transpose() * gm;
    }
    if (pb->requires_grad) {
      Tensor<T>& gb = pb->grad_buf();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o) gb[o] += self.grad[n * O + o];
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t OH,
            std::int64_t OW, T* col) {
  // col layout: [C*kh*kw, OH*OW] row-major
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < kh; ++i)
      for (std::int64_t j = 0; j < kw; ++j) {
        T* dst = col + ((c * kh + i) * kw + j) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) {
            for (std::int64_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = T(0);
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t iw = ow * stride - pad + j;
            dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
                std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t OH,
                std::int64_t OW, T* x) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < kh; ++i)
      for (std::int64_t j = 0; j < kw; ++j) {
        const T* src = col + ((c * kh + i) * kw + j) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W) dst[iw] += src[oh * OW + ow];
          }
        }
      }
}

}  // namespace detail

// x[N,Cin,H,W] (*) w[Cout,Cin,kh,kw] + b[Cout], zero padding.
// im2col + GEMM; the column buffer is recomputed in the backward pass.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::int64_t stride,
              std::int64_t pad) {
  const auto& xd = x.value().dims;
  const auto& wd = w.value().dims;
  if (xd.size() != 4 || wd.size() != 4 || xd[1] != wd[1])
    throw ShapeMismatch("conv2d " + shape_str(xd) + " (*) " + shape_str(wd));
  const std::int64_t N = xd[0], C = xd[1], H = xd[2], W = xd[3];
  const std::int64_t Cout = wd[0], kh = wd[2], kw = wd[3];
  if (b.value().numel() != Cout) throw ShapeMismatch("conv2d bias");
  const std::int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("conv2d output is empty");
  const std::int64_t CKK = C * kh * kw, P = OH * OW;

  Tensor<T> out({N, Cout, OH, OW});
  std::vector<T> col(static_cast<std::size_t>(CKK * P));
  MapCM<T> wm(w.value().data(), Cout, CKK);
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                   col.data());
    MapCM<T> cm(col.data(), CKK, P);
    MapM<T> ym(out.data() + n * Cout * P, Cout, P);
    ym.noalias() = wm * cm;
    for (std::int64_t co = 0; co < Cout; ++co) {
      const T bc = b.value()[co];
      T* p = out.data() + (n * Cout + co) * P;
      for (std::int64_t s = 0; s < P; ++s) p[s] += bc;
    }
  }

  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op_result<T>(
      std::move(out), {px, pw, pb},
      [px, pw, pb, N, C, H, W, Cout, kh, kw, stride, pad, OH, OW, CKK, P](Node<T>& self) {
        std::vector<T> col(static_cast<std::size_t>(CKK * P));
        std::vector<T> dcol(static_cast<std::size_t>(CKK * P));
        for (std::int64_t n = 0; n < N; ++n) {
          MapCM<T> gm(self.grad.data() + n * Cout * P, Cout, P);
          if (pw->requires_grad || px->requires_grad)
            detail::im2col(px->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                           col.data());
          if (pw->requires_grad) {
            MapM<T> gw(pw->grad_buf().data(), Cout, CKK);
            MapCM<T> cm(col.data(), CKK, P);
            gw.noalias() += gm * cm.transpose();
          }
          if (px->requires_grad) {
            MapCM<T> wm(pw->value.data(), Cout, CKK);
            MapM<T> dcm(dcol.data(), CKK, P);
            dcm.noalias() = wm.transpose() * gm;
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                               px->grad_buf().data() + n * C * H * W);
          }
          if (pb->requires_grad) {
            Tensor<T>& gb = pb->grad_buf();
            for (std::int64_t co = 0; co < Cout; ++co) {
              const T* p = self.grad.data() + (n * Cout + co) * P;
              T acc = 0;
              for (std::int64_t s = 0; s < P; ++s) acc += p[s];
              gb[co] += acc;
            }
          }
        }
      });
}

// per-channel spatial filter: x[N,C,H,W] (*) w[C,kh,kw], no bias
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, std::int64_t stride, std::int64_t pad) {
  const auto& xd = x.value().dims;
  const auto& wd = w.value().dims;
  if (xd.size() != 4 || wd.size() != 3 || xd[1] != wd[0])
    throw ShapeMismatch("depthwise_conv2d " + shape_str(xd) + " (*) " + shape_str(wd));
  const std::int64_t N = xd[0], C = xd[1], H = xd[2], W = xd[3];
  const std::int64_t kh = wd[1], kw = wd[2];
  const std::int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("depthwise_conv2d output is empty");

  Tensor<T> out({N, C, OH, OW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* xc = x.value().data() + (n * C + c) * H * W;
      const T* wc = w.value().data() + c * kh * kw;
      T* oc = out.data() + (n * C + c) * OH * OW;
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          T acc = 0;
          for (std::int64_t i = 0; i < kh; ++i) {
            const std::int64_t ih = oh * stride - pad + i;
            if (ih < 0 || ih >= H) continue;
            for (std::int64_t j = 0; j < kw; ++j) {
              const std::int64_t iw = ow * stride - pad + j;
              if (iw < 0 || iw >= W) continue;
              acc += xc[ih * W + iw] * wc[i * kw + j];
            }
          }
          oc[oh * OW + ow] = acc;
        }
    }

  auto px = x.node(), pw = w.node();
  return make_op_result<T>(
      std::move(out), {px, pw},
      [px, pw, N, C, H, W, kh, kw, stride, pad, OH, OW](Node<T>& self) {
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t c = 0; c < C; ++c) {
            const T* go = self.grad.data() + (n * C + c) * OH * OW;
            const T* xc = px->value.data() + (n * C + c) * H * W;
            const T* wc = pw->value.data() + c * kh * kw;
            T* gx = px->requires_grad ? px->grad_buf().data() + (n * C + c) * H * W : nullptr;
            T* gw = pw->requires_grad ? pw->grad_buf().data() + c * kh * kw : nullptr;
            for (std::int64_t oh = 0; oh < OH; ++oh)
              for (std::int64_t ow = 0; ow < OW; ++ow) {
                const T g = go[oh * OW + ow];
                for (std::int64_t i = 0; i < kh; ++i) {
                  const std::int64_t ih = oh * stride - pad + i;
                  if (ih < 0 || ih >= H) continue;
                  for (std::int64_t j = 0; j < kw; ++j) {
                    const std::int64_t iw = ow * stride - pad + j;
                    if (iw < 0 || iw >= W) continue;
                    if (gx) gx[ih * W + iw] += g * wc[i * kw + j];
                    if (gw) gw[i * kw + j] += g * xc[ih * W + iw];
                  }
                }
              }
          }
      });
}

template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  const auto& d = x.value().dims;
  if (d.size() != 4 || d[2] % 2 || d[3] % 2) throw ShapeMismatch("maxpool2x2 expects even NCHW");
  const std::int64_t N = d[0], C = d[1], H = d[2], W = d[3], OH = H / 2, OW = W / 2;
  Tensor<T> out({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(out.numel()));
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.value().data() + nc * H * W;
    T* o = out.data() + nc * OH * OW;
    std::int32_t* am = argmax->data() + nc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        std::int64_t best = (2 * oh) * W + 2 * ow;
        T bv = p[best];
        const std::int64_t cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                      (2 * oh + 1) * W + 2 * ow + 1};
        for (std::int64_t k = 0; k < 3; ++k)
          if (p[cand[k]] > bv) {
            bv = p[cand[k]];
            best = cand[k];
          }
        o[oh * OW + ow] = bv;
        am[oh * OW + ow] = static_cast<std::int32_t>(best);
      }
  }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, N, C, H, W, OH, OW, argmax](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      const T* go = self.grad.data() + nc * OH * OW;
      const std::int32_t* am = argmax->data() + nc * OH * OW;
      T* gx = g.data() + nc * H * W;
      for (std::int64_t s = 0; s < OH * OW; ++s) gx[am[s]] += go[s];
    }
  });
}

// average pool with explicit (top,left,bottom,right) zero padding; the divisor
// is always k*k (padded zeros count).
template <typename T>
Var<T> avgpool(const Var<T>& x, std::int64_t k, std::int64_t stride, std::int64_t pt,
               std::int64_t pl, std::int64_t pb, std::int64_t pr) {
  const auto& d = x.value().dims;
  if (d.size() != 4) throw ShapeMismatch("avgpool expects NCHW");
  const std::int64_t N = d[0], C = d[1], H = d[2], W = d[3];
  const std::int64_t OH = (H + pt + pb - k) / stride + 1;
  const std::int64_t OW = (W + pl + pr - k) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("avgpool output is empty");
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out({N, C, OH, OW});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.value().data() + nc * H * W;
    T* o = out.data() + nc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        T acc = 0;
        for (std::int64_t i = 0; i < k; ++i) {
          const std::int64_t ih = oh * stride - pt + i;
          if (ih < 0 || ih >= H) continue;
          for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t iw = ow * stride - pl + j;
            if (iw >= 0 && iw < W) acc += p[ih * W + iw];
          }
        }
        o[oh * OW + ow] = acc * inv;
      }
  }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px},
                           [px, N, C, H, W, OH, OW, k, stride, pt, pl, inv](Node<T>& self) {
                             if (!px->requires_grad) return;
                             Tensor<T>& g = px->grad_buf();
                             for (std::int64_t nc = 0; nc < N * C; ++nc) {
                               const T* go = self.grad.data() + nc * OH * OW;
                               T* gx = g.data() + nc * H * W;
                               for (std::int64_t oh = 0; oh < OH; ++oh)
                                 for (std::int64_t ow = 0; ow < OW; ++ow) {
                                   const T gv = go[oh * OW + ow] * inv;
                                   for (std::int64_t i = 0; i < k; ++i) {
                                     const std::int64_t ih = oh * stride - pt + i;
                                     if (ih < 0 || ih >= H) continue;
                                     for (std::int64_t j = 0; j < k; ++j) {
                                       const std::int64_t iw = ow * stride - pl + j;
                                       if (iw >= 0 && iw < W) gx[ih * W + iw] += gv;
                                     }
                                   }
                                 }
                             }
                           });
}

// ---------------------------------------------------------------------------
// resizing / concat / dropout
// ---------------------------------------------------------------------------

namespace detail {

struct LerpIdx {
  std::int64_t i0, i1;
  double w1;  // weight of i1; weight of i0 is 1-w1
};

inline std::vector<LerpIdx> lerp_table(std::int64_t in, std::int64_t out) {
  std::vector<LerpIdx> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
    const std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return t;
}

}  // namespace detail

// bilinear resize of NCHW maps (half-pixel centers, clamped edges)
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, std::int64_t OH, std::int64_t OW) {
  const auto& d = x.value().dims;
  if (d.size() != 4) throw ShapeMismatch("upsample_bilinear expects NCHW");
  const std::int64_t N = d[0], C = d[1], H = d[2], W = d[3];
  auto ty = std::make_shared<std::vector<detail::LerpIdx>>(detail::lerp_table(H, OH));
  auto tx = std::make_shared<std::vector<detail::LerpIdx>>(detail::lerp_table(W, OW));
  Tensor<T> out({N, C, OH, OW});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.value().data() + nc * H * W;
    T* o = out.data() + nc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      const auto& ly = (*ty)[static_cast<std::size_t>(oh)];
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        const auto& lx = (*tx)[static_cast<std::size_t>(ow)];
        const double v00 = static_cast<double>(p[ly.i0 * W + lx.i0]);
        const double v01 = static_cast<double>(p[ly.i0 * W + lx.i1]);
        const double v10 = static_cast<double>(p[ly.i1 * W + lx.i0]);
        const double v11 = static_cast<double>(p[ly.i1 * W + lx.i1]);
        const double top = v00 + (v01 - v00) * lx.w1;
        const double bot = v10 + (v11 - v10) * lx.w1;
        o[oh * OW + ow] = static_cast<T>(top + (bot - top) * ly.w1);
      }
    }
  }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, N, C, H, W, OH, OW, ty, tx](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      const T* go = self.grad.data() + nc * OH * OW;
      T* gx = g.data() + nc * H * W;
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        const auto& ly = (*ty)[static_cast<std::size_t>(oh)];
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          const auto& lx = (*tx)[static_cast<std::size_t>(ow)];
          const double gv = static_cast<double>(go[oh * OW + ow]);
          gx[ly.i0 * W + lx.i0] += static_cast<T>(gv * (1 - ly.w1) * (1 - lx.w1));
          gx[ly.i0 * W + lx.i1] += static_cast<T>(gv * (1 - ly.w1) * lx.w1);
          gx[ly.i1 * W + lx.i0] += static_cast<T>(gv * ly.w1 * (1 - lx.w1));
          gx[ly.i1 * W + lx.i1] += static_cast<T>(gv * ly.w1 * lx.w1);
        }
      }
    }
  });
}

// rows [n0, n1) along dim 0
template <typename T>
Var<T> slice_batch(const Var<T>& x, std::int64_t n0, std::int64_t n1) {
  const auto& d = x.value().dims;
  if (d.empty() || n0 < 0 || n1 > d[0] || n0 >= n1) throw ShapeMismatch("slice_batch");
  const std::int64_t S = x.value().numel() / d[0];
  Shape od = d;
  od[0] = n1 - n0;
  Tensor<T> out(od);
  std::copy_n(x.value().data() + n0 * S, (n1 - n0) * S, out.data());
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, n0, n1, S](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    T* dst = g.data() + n0 * S;
    for (std::int64_t i = 0; i < (n1 - n0) * S; ++i) dst[i] += self.grad[i];
  });
}

// channels [c0, c1) of an NCHW tensor
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::int64_t c0, std::int64_t c1) {
  const auto& d = x.value().dims;
  if (d.size() != 4 || c0 < 0 || c1 > d[1] || c0 >= c1) throw ShapeMismatch("slice_channels");
  const std::int64_t N = d[0], C = d[1], S = d[2] * d[3];
  Tensor<T> out({N, c1 - c0, d[2], d[3]});
  for (std::int64_t n = 0; n < N; ++n)
    std::copy_n(x.value().data() + (n * C + c0) * S, (c1 - c0) * S,
                out.data() + n * (c1 - c0) * S);
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, N, C, S, c0, c1](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    for (std::int64_t n = 0; n < N; ++n) {
      const T* src = self.grad.data() + n * (c1 - c0) * S;
      T* dst = g.data() + (n * C + c0) * S;
      for (std::int64_t i = 0; i < (c1 - c0) * S; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& da = a.value().dims;
  const auto& db = b.value().dims;
  if (da.size() != 4 || db.size() != 4 || da[0] != db[0] || da[2] != db[2] || da[3] != db[3])
    throw ShapeMismatch("concat_channels " + shape_str(da) + " | " + shape_str(db));
  const std::int64_t N = da[0], Ca = da[1], Cb = db[1], S = da[2] * da[3];
  Tensor<T> out({N, Ca + Cb, da[2], da[3]});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(a.value().data() + n * Ca * S, Ca * S, out.data() + n * (Ca + Cb) * S);
    std::copy_n(b.value().data() + n * Cb * S, Cb * S, out.data() + (n * (Ca + Cb) + Ca) * S);
  }
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(std::move(out), {pa, pb}, [pa, pb, N, Ca, Cb, S](Node<T>& self) {
    if (pa->requires_grad) {
      Tensor<T>& g = pa->grad_buf();
      for (std::int64_t n = 0; n < N; ++n) {
        const T* src = self.grad.data() + n * (Ca + Cb) * S;
        T* dst = g.data() + n * Ca * S;
        for (std::int64_t i = 0; i < Ca * S; ++i) dst[i] += src[i];
      }
    }
    if (pb->requires_grad) {
      Tensor<T>& g = pb->grad_buf();
      for (std::int64_t n = 0; n < N; ++n) {
        const T* src = self.grad.data() + (n * (Ca + Cb) + Ca) * S;
        T* dst = g.data() + n * Cb * S;
        for (std::int64_t i = 0; i < Cb * S; ++i) dst[i] += src[i];
      }
    }
  });
}

// inverted dropout; identity when not training or rate == 0
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  const T keep = static_cast<T>(1.0 - rate);
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.value().numel()));
  Tensor<T> out = x.value();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T m = rng.bernoulli(rate) ? T(0) : T(1) / keep;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out[i] *= m;
  }
  auto px = x.node();
  return make_op_result<T>(std::move(out), {px}, [px, mask](Node<T>& self) {
    if (!px->requires_grad) return;
    Tensor<T>& g = px->grad_buf();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * (*mask)[static_cast<std::size_t>(i)];
  });
}

// q[N,L,P] filtered per label by a constant per-sample kernel matrix K[N,P,P]:
// out[n,l,:] = K_n q[n,l,:]. K is data-dependent but not trained, so gradients
// flow through q only (K_n is symmetric with zero diagonal by construction).
template <typename T>
Var<T> pairwise_filter(const Var<T>& q,
                       std::shared_ptr<const Tensor<std::type_identity_t<T>>> kernel) {
  const auto& d = q.value().dims;
  const auto& kd = kernel->dims;
  if (d.size() != 3 || kd.size() != 3 || kd[0] != d[0] || kd[1] != d[2] || kd[2] != d[2])
    throw ShapeMismatch("pairwise_filter q" + shape_str(d) + " K" + shape_str(kd));
  const std::int64_t N = d[0], L = d[1], P = d[2];
  Tensor<T> out({N, L, P});
  for (std::int64_t n = 0; n < N; ++n) {
    MapCM<T> km(kernel->data() + n * P * P, P, P);
    for (std::int64_t l = 0; l < L; ++l) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> qv(q.value().data() + (n * L + l) * P,
                                                               P);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> ov(out.data() + (n * L + l) * P, P);
      ov.noalias() = km * qv;
    }
  }
  auto pq = q.node();
  return make_op_result<T>(std::move(out), {pq}, [pq, kernel, N, L, P](Node<T>& self) {
    if (!pq->requires_grad) return;
    Tensor<T>& g = pq->grad_buf();
    for (std::int64_t n = 0; n < N; ++n) {
      MapCM<T> km(kernel->data() + n * P * P, P, P);
      for (std::int64_t l = 0; l < L; ++l) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gv(self.grad.data() + (n * L + l) * P,
                                                                 P);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> go(g.data() + (n * L + l) * P, P);
        go.noalias() += km.transpose() * gv;
      }
    }
  });
}

}  // namespace ops

// arithmetic sugar for same-shape vars (losses are [1]-shaped vars)
template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return ops::add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return ops::sub(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return ops::mul(a, b);
}
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) {
  return ops::div(a, b);
}

}  // namespace dualcore
