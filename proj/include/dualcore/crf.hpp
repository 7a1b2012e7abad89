#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "dualcore/ops.hpp"
#include "dualcore/tensor.hpp"

namespace dualcore {

// Fully connected CRF over an H x W lattice with L labels, run as a
// differentiable mean-field layer. Unaries are per-node scores whose softmax
// is the initial marginal field; pairwise energy couples every node pair
// through Potts compatibility times a weighted sum of Gaussian kernels
// (one spatial, one bilateral spatial+intensity). One update is
//
//   q_i(l) <- softmax_l( u_i(l) - sum_m w_m sum_{j != i} k~_m(i,j) (1 - q_j(l)) )
//
// followed by damping against the previous iterate and renormalization. The
// partition function is never materialized.
//
// Each kernel is degree-normalized, k~(i,j) = k(i,j)/sqrt(d_i d_j) with
// d_i = sum_{j != i} k(i,j), so the pairwise message magnitude is governed by
// the kernel weights alone and does not grow with the lattice size. The
// normalized kernel stays symmetric, which keeps the filtering self-adjoint.

// Potts model: unit penalty for disagreeing labels.
inline int potts_compatibility(int label_i, int label_j) { return label_i == label_j ? 0 : 1; }

// exp(-sum_d (f_i[d]-f_j[d])^2 / (2 theta_d^2))
template <typename T>
T gaussian_kernel_value(const std::vector<T>& feat_i, const std::vector<T>& feat_j,
                        const std::vector<T>& bandwidths) {
  if (feat_i.size() != feat_j.size() || feat_i.size() != bandwidths.size())
    throw ShapeMismatch("gaussian_kernel_value feature lengths");
  double e = 0;
  for (std::size_t d = 0; d < feat_i.size(); ++d) {
    const double diff = static_cast<double>(feat_i[d]) - static_cast<double>(feat_j[d]);
    const double th = static_cast<double>(bandwidths[d]);
    e += diff * diff / (2.0 * th * th);
  }
  return static_cast<T>(std::exp(-e));
}

struct CrfParams {
  double theta_gamma = 3.0;  // spatial-only bandwidth, lattice px
  double theta_alpha = 8.0;  // bilateral spatial bandwidth, lattice px
  double theta_beta = 0.1;   // bilateral intensity bandwidth
  int iterations = 5;
  double damping = 0.5;                  // share of the previous iterate kept
  std::int64_t dense_max_nodes = 64 * 64;  // exact dense filtering up to here
  double truncation_sigmas = 3.0;        // window radius in bandwidths beyond
};

// Trainable kernel weights w^(m), shared across heads.
template <typename T>
struct CrfWeights {
  Var<T> spatial;    // [1]
  Var<T> bilateral;  // [1]
  static CrfWeights init(T w_spatial = T(1), T w_bilateral = T(1)) {
    return {Var<T>(Tensor<T>::scalar(w_spatial), true),
            Var<T>(Tensor<T>::scalar(w_bilateral), true)};
  }
};

// Precomputed pairwise structure for one batch of lattices.
template <typename T>
struct CrfKernels {
  bool dense = true;
  std::int64_t batch = 0, height = 0, width = 0;
  // dense mode: [N,P,P] symmetric, zero diagonal
  std::shared_ptr<Tensor<T>> k_spatial;
  std::shared_ptr<Tensor<T>> k_bilateral;
  // truncated mode: per-node intensities [N,P], window radii and the
  // per-kernel inverse-sqrt degree planes
  std::shared_ptr<Tensor<T>> intensity;
  std::shared_ptr<Tensor<T>> dinv_spatial, dinv_bilateral;  // [N,P]
  std::int64_t radius_spatial = 0, radius_bilateral = 0;
  double theta_gamma = 0, theta_alpha = 0, theta_beta = 0;
};

// Mean intensity of each pixel bin; used to take image features to the CRF
// lattice resolution.
template <typename T>
Tensor<T> area_downsample(const Tensor<T>& img, std::int64_t oh, std::int64_t ow) {
  const std::int64_t H = img.dims[0], W = img.dims[1];
  Tensor<T> out({oh, ow});
  Tensor<T> cnt({oh, ow});
  for (std::int64_t r = 0; r < H; ++r) {
    const std::int64_t br = std::min(oh - 1, r * oh / H);
    for (std::int64_t c = 0; c < W; ++c) {
      const std::int64_t bc = std::min(ow - 1, c * ow / W);
      out[br * ow + bc] += img[r * W + c];
      cnt[br * ow + bc] += T(1);
    }
  }
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (cnt[i] > T(0)) out[i] /= cnt[i];
  return out;
}

// in place K <- D^{-1/2} K D^{-1/2}; K is [P,P] with zero diagonal
template <typename T>
void crf_normalize_dense(T* k, std::int64_t P) {
  std::vector<double> dinv(static_cast<std::size_t>(P));
  for (std::int64_t i = 0; i < P; ++i) {
    double d = 0;
    for (std::int64_t j = 0; j < P; ++j) d += static_cast<double>(k[i * P + j]);
    dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(std::max(d, 1e-12));
  }
  for (std::int64_t i = 0; i < P; ++i)
    for (std::int64_t j = 0; j < P; ++j)
      k[i * P + j] = static_cast<T>(static_cast<double>(k[i * P + j]) *
                                    dinv[static_cast<std::size_t>(i)] *
                                    dinv[static_cast<std::size_t>(j)]);
}

// 1/sqrt(window degree) of every node for one Gaussian kernel
template <typename T>
Tensor<T> crf_window_degrees(const Tensor<T>& intensity, std::int64_t height, std::int64_t width,
                             double theta_spatial, double theta_intensity, std::int64_t radius) {
  const std::int64_t N = intensity.dims[0], P = height * width;
  const double inv2s = 1.0 / (2.0 * theta_spatial * theta_spatial);
  const bool use_int = theta_intensity > 0;
  const double inv2i = use_int ? 1.0 / (2.0 * theta_intensity * theta_intensity) : 0.0;
  Tensor<T> out({N, P});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* inten = intensity.data() + n * P;
    for (std::int64_t r = 0; r < height; ++r)
      for (std::int64_t c = 0; c < width; ++c) {
        const std::int64_t i = r * width + c;
        double d = 0;
        for (std::int64_t rr = std::max<std::int64_t>(0, r - radius);
             rr <= std::min<std::int64_t>(height - 1, r + radius); ++rr)
          for (std::int64_t cc = std::max<std::int64_t>(0, c - radius);
               cc <= std::min<std::int64_t>(width - 1, c + radius); ++cc) {
            const std::int64_t j = rr * width + cc;
            if (j == i) continue;
            double w = std::exp(-static_cast<double>((rr - r) * (rr - r) + (cc - c) * (cc - c)) *
                                inv2s);
            if (use_int) {
              const double di = static_cast<double>(inten[i]) - static_cast<double>(inten[j]);
              w *= std::exp(-di * di * inv2i);
            }
            d += w;
          }
        out[n * P + i] = static_cast<T>(1.0 / std::sqrt(std::max(d, 1e-12)));
      }
  }
  return out;
}

// latent_intensity: [N,P] with P = height*width, values in [0,1].
template <typename T>
CrfKernels<T> build_crf_kernels(const Tensor<T>& latent_intensity, std::int64_t height,
                                std::int64_t width, const CrfParams& params) {
  const std::int64_t N = latent_intensity.dims[0];
  const std::int64_t P = height * width;
  if (latent_intensity.numel() != N * P) throw ShapeMismatch("build_crf_kernels intensity");
  CrfKernels<T> k;
  k.batch = N;
  k.height = height;
  k.width = width;
  k.theta_gamma = params.theta_gamma;
  k.theta_alpha = params.theta_alpha;
  k.theta_beta = params.theta_beta;
  k.intensity = std::make_shared<Tensor<T>>(latent_intensity);
  if (P <= params.dense_max_nodes) {
    k.dense = true;
    auto ks = std::make_shared<Tensor<T>>(Shape{N, P, P});
    auto kb = std::make_shared<Tensor<T>>(Shape{N, P, P});
    const double inv2g = 1.0 / (2.0 * params.theta_gamma * params.theta_gamma);
    const double inv2a = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
    const double inv2b = 1.0 / (2.0 * params.theta_beta * params.theta_beta);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* inten = latent_intensity.data() + n * P;
      T* s = ks->data() + n * P * P;
      T* b = kb->data() + n * P * P;
      for (std::int64_t i = 0; i < P; ++i) {
        const std::int64_t ri = i / width, ci = i % width;
        for (std::int64_t j = 0; j < i; ++j) {
          const std::int64_t rj = j / width, cj = j % width;
          const double d2 = static_cast<double>((ri - rj) * (ri - rj) + (ci - cj) * (ci - cj));
          const double di = static_cast<double>(inten[i]) - static_cast<double>(inten[j]);
          const T vs = static_cast<T>(std::exp(-d2 * inv2g));
          const T vb = static_cast<T>(std::exp(-d2 * inv2a - di * di * inv2b));
          s[i * P + j] = vs;
          s[j * P + i] = vs;
          b[i * P + j] = vb;
          b[j * P + i] = vb;
        }
        s[i * P + i] = T(0);
        b[i * P + i] = T(0);
      }
      crf_normalize_dense(s, P);
      crf_normalize_dense(b, P);
    }
    k.k_spatial = ks;
    k.k_bilateral = kb;
  } else {
    k.dense = false;
    k.radius_spatial =
        static_cast<std::int64_t>(std::ceil(params.truncation_sigmas * params.theta_gamma));
    k.radius_bilateral =
        static_cast<std::int64_t>(std::ceil(params.truncation_sigmas * params.theta_alpha));
    k.dinv_spatial = std::make_shared<Tensor<T>>(crf_window_degrees(
        latent_intensity, height, width, params.theta_gamma, 0.0, k.radius_spatial));
    k.dinv_bilateral = std::make_shared<Tensor<T>>(
        crf_window_degrees(latent_intensity, height, width, params.theta_alpha, params.theta_beta,
                           k.radius_bilateral));
  }
  return k;
}

namespace crf_detail {

// Windowed Gaussian filtering with symmetric degree normalization:
// out_i = dinv_i * sum_{j in window, j != i} k(i,j) dinv_j q_j.
// The whole operator is symmetric, so the backward pass is the same filter
// applied to the incoming gradient.
template <typename T>
Var<T> truncated_filter(const Var<T>& q, std::shared_ptr<const Tensor<T>> intensity,
                        std::shared_ptr<const Tensor<T>> dinv, std::int64_t height,
                        std::int64_t width, double theta_spatial, double theta_intensity,
                        std::int64_t radius) {
  const std::int64_t N = q.dims()[0], L = q.dims()[1], P = q.dims()[2];
  const bool use_int = theta_intensity > 0;
  const double inv2i = use_int ? 1.0 / (2.0 * theta_intensity * theta_intensity) : 0.0;

  // spatial window weights
  const double inv2s = 1.0 / (2.0 * theta_spatial * theta_spatial);
  const std::int64_t side = 2 * radius + 1;
  auto wtab = std::make_shared<std::vector<double>>(static_cast<std::size_t>(side * side));
  for (std::int64_t dr = -radius; dr <= radius; ++dr)
    for (std::int64_t dc = -radius; dc <= radius; ++dc)
      (*wtab)[static_cast<std::size_t>((dr + radius) * side + (dc + radius))] =
          std::exp(-static_cast<double>(dr * dr + dc * dc) * inv2s);

  auto apply = [N, L, P, height, width, radius, side, wtab, intensity, dinv, use_int,
                inv2i](const Tensor<T>& src, Tensor<T>& dst, bool accumulate) {
    for (std::int64_t n = 0; n < N; ++n) {
      const T* inten = intensity->data() + n * P;
      const T* dv = dinv->data() + n * P;
      for (std::int64_t l = 0; l < L; ++l) {
        const T* s = src.data() + (n * L + l) * P;
        T* d = dst.data() + (n * L + l) * P;
        for (std::int64_t r = 0; r < height; ++r)
          for (std::int64_t c = 0; c < width; ++c) {
            double acc = 0;
            const std::int64_t i = r * width + c;
            const std::int64_t r0 = std::max<std::int64_t>(0, r - radius);
            const std::int64_t r1 = std::min<std::int64_t>(height - 1, r + radius);
            const std::int64_t c0 = std::max<std::int64_t>(0, c - radius);
            const std::int64_t c1 = std::min<std::int64_t>(width - 1, c + radius);
            for (std::int64_t rr = r0; rr <= r1; ++rr)
              for (std::int64_t cc = c0; cc <= c1; ++cc) {
                const std::int64_t j = rr * width + cc;
                if (j == i) continue;
                double w = (*wtab)[static_cast<std::size_t>((rr - r + radius) * side +
                                                            (cc - c + radius))];
                if (use_int) {
                  const double di =
                      static_cast<double>(inten[i]) - static_cast<double>(inten[j]);
                  w *= std::exp(-di * di * inv2i);
                }
                acc += w * static_cast<double>(dv[j]) * static_cast<double>(s[j]);
              }
            acc *= static_cast<double>(dv[i]);
            if (accumulate)
              d[i] += static_cast<T>(acc);
            else
              d[i] = static_cast<T>(acc);
          }
      }
    }
  };

  Tensor<T> out({N, L, P});
  apply(q.value(), out, false);
  auto pq = q.node();
  return make_op_result<T>(std::move(out), {pq}, [pq, apply](Node<T>& self) {
    if (!pq->requires_grad) return;
    apply(self.grad, pq->grad_buf(), true);
  });
}

template <typename T>
std::vector<Var<T>> filtered_messages(const Var<T>& q, const CrfKernels<T>& kernels) {
  std::vector<Var<T>> out;
  if (kernels.dense) {
    out.push_back(ops::pairwise_filter(q, kernels.k_spatial));
    out.push_back(ops::pairwise_filter(q, kernels.k_bilateral));
  } else {
    out.push_back(truncated_filter<T>(q, kernels.intensity, kernels.dinv_spatial, kernels.height,
                                      kernels.width, kernels.theta_gamma, 0.0,
                                      kernels.radius_spatial));
    out.push_back(truncated_filter<T>(q, kernels.intensity, kernels.dinv_bilateral,
                                      kernels.height, kernels.width, kernels.theta_alpha,
                                      kernels.theta_beta, kernels.radius_bilateral));
  }
  return out;
}

}  // namespace crf_detail

// One damped parallel mean-field update. q and unary are [N,L,P].
template <typename T>
Var<T> mean_field_step(const Var<T>& q, const Var<T>& unary, const CrfKernels<T>& kernels,
                       const CrfWeights<T>& weights, double damping) {
  check_same_shape(q.value(), unary.value(), "mean_field_step");
  auto msgs = crf_detail::filtered_messages(q, kernels);
  Var<T> msg = ops::add(ops::scale_by(weights.spatial, msgs[0]),
                        ops::scale_by(weights.bilateral, msgs[1]));
  // Potts: expected disagreement is the mass on the other labels
  Var<T> penalty = ops::label_complement(msg);
  Var<T> q_update = ops::softmax_channel(ops::sub(unary, penalty));
  Var<T> mixed = ops::add(ops::mul_scalar(q_update, static_cast<T>(1.0 - damping)),
                          ops::mul_scalar(q, static_cast<T>(damping)));
  return ops::normalize_labels(mixed);
}

// T damped updates from q0 = softmax(unary); differentiable w.r.t. the unary
// field and the kernel weights.
template <typename T>
Var<T> crf_inference(const Var<T>& unary, const CrfKernels<T>& kernels,
                     const CrfWeights<T>& weights, const CrfParams& params) {
  Var<T> q = ops::softmax_channel(unary);
  for (int t = 0; t < params.iterations; ++t)
    q = mean_field_step(q, unary, kernels, weights, params.damping);
  return q;
}

}  // namespace dualcore
