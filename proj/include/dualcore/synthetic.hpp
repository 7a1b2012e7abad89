#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dualcore/roi.hpp"

namespace dualcore {

// Synthetic lesion generator. Class 0 draws a smooth rotated ellipse, class 1
// a spiculated star polygon; both share the same intensity statistics so only
// shape and boundary carry the label. Background is low-frequency texture
// plus pixel noise. Patients own one or two lesions each.

struct SyntheticOptions {
  std::int64_t canvas = 160;
  double lesion_scale_lo = 0.13;  // base radius as a fraction of the canvas
  double lesion_scale_hi = 0.20;
  double spike_amp_lo = 0.45;  // spike length relative to the base radius
  double spike_amp_hi = 0.75;
  int spikes_lo = 7;
  int spikes_hi = 12;
  double noise_sigma = 0.03;
  double fg_contrast = 0.35;
};

namespace synth_detail {

inline GrayImage box_blur3(const GrayImage& in) {
  const std::int64_t H = in.dims[0], W = in.dims[1];
  GrayImage out(in.dims);
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) {
      double acc = 0;
      int cnt = 0;
      for (std::int64_t dr = -1; dr <= 1; ++dr)
        for (std::int64_t dc = -1; dc <= 1; ++dc) {
          const std::int64_t rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          acc += in[rr * W + cc];
          ++cnt;
        }
      out[r * W + c] = acc / cnt;
    }
  return out;
}

}  // namespace synth_detail

inline MammogramRecord make_synthetic_lesion(int label, std::uint64_t seed,
                                             const std::string& patient_id,
                                             const SyntheticOptions& opt = {}) {
  Rng rng(mix64(seed ^ 0x5E57ull));
  const std::int64_t S = opt.canvas;
  MammogramRecord rec;
  rec.label = label;
  rec.patient_id = patient_id;
  rec.mask = BinaryMask({S, S});
  GrayImage img({S, S});

  // background: gentle gradient plus two blurry bumps
  const double gx = rng.uniform(-1, 1), gy = rng.uniform(-1, 1);
  const double bx1 = rng.uniform(0.2, 0.8) * S, by1 = rng.uniform(0.2, 0.8) * S;
  const double bx2 = rng.uniform(0.2, 0.8) * S, by2 = rng.uniform(0.2, 0.8) * S;
  const double bw = 0.25 * S;
  for (std::int64_t r = 0; r < S; ++r)
    for (std::int64_t c = 0; c < S; ++c) {
      double v = 0.30 + 0.05 * (gx * c / S + gy * r / S);
      const double d1 = ((r - by1) * (r - by1) + (c - bx1) * (c - bx1)) / (bw * bw);
      const double d2 = ((r - by2) * (r - by2) + (c - bx2) * (c - bx2)) / (bw * bw);
      v += 0.06 * std::exp(-d1) + 0.05 * std::exp(-d2);
      img[r * S + c] = v;
    }

  // lesion geometry
  const double cy = S * rng.uniform(0.38, 0.62);
  const double cx = S * rng.uniform(0.38, 0.62);
  const double r0 = S * rng.uniform(opt.lesion_scale_lo, opt.lesion_scale_hi);
  const double phase = rng.uniform(0, 6.2831853);
  const double ecc = rng.uniform(0.6, 1.0);     // ellipse minor/major ratio
  const double rot = rng.uniform(0, 3.14159265);
  const int spikes = opt.spikes_lo + static_cast<int>(rng.below(opt.spikes_hi - opt.spikes_lo + 1));
  const double amp = rng.uniform(opt.spike_amp_lo, opt.spike_amp_hi);

  for (std::int64_t r = 0; r < S; ++r)
    for (std::int64_t c = 0; c < S; ++c) {
      const double dy = r - cy, dx = c - cx;
      bool inside = false;
      if (label == 0) {
        // rotated ellipse with a mild boundary waviness
        const double u = dx * std::cos(rot) + dy * std::sin(rot);
        const double w = -dx * std::sin(rot) + dy * std::cos(rot);
        const double ang = std::atan2(w, u);
        const double wob = 1.0 + 0.05 * std::sin(3 * ang + phase);
        inside = (u * u) / (r0 * r0) + (w * w) / (ecc * ecc * r0 * r0) <= wob;
      } else {
        // star: radius oscillates between the core and the spike tips
        const double ang = std::atan2(dy, dx);
        const double rad = std::sqrt(dx * dx + dy * dy);
        const double rb = r0 * (1.0 - 0.25 * amp + amp * 0.5 * (1 + std::sin(spikes * ang + phase)));
        inside = rad <= rb;
      }
      if (inside) {
        rec.mask[r * S + c] = 1;
        const double rad = std::sqrt(dx * dx + dy * dy);
        img[r * S + c] += opt.fg_contrast * (1.0 - 0.35 * rad / (1.75 * r0));
      }
    }

  img = synth_detail::box_blur3(img);
  for (auto& v : img.v) {
    v += opt.noise_sigma * rng.normal();
    v = std::min(std::max(v, 0.0), 1.0);
  }
  rec.image = img;
  return rec;
}

// n records with alternating labels; patients own up to two lesions
inline std::vector<MammogramRecord> make_synthetic_dataset(std::int64_t n, std::uint64_t seed,
                                                           const SyntheticOptions& opt = {}) {
  std::vector<MammogramRecord> out;
  Rng rng(mix64(seed ^ 0xDA7Aull));
  std::int64_t patient = 0;
  std::int64_t in_patient = 0, lesions_here = 1;
  for (std::int64_t i = 0; i < n; ++i) {
    if (in_patient == lesions_here) {
      ++patient;
      in_patient = 0;
      lesions_here = rng.bernoulli(0.35) ? 2 : 1;
    }
    char pid[32];
    std::snprintf(pid, sizeof(pid), "synth%04lld", static_cast<long long>(patient));
    out.push_back(make_synthetic_lesion(static_cast<int>(i % 2), mix64(seed) + 1000 + i, pid, opt));
    ++in_patient;
  }
  return out;
}

inline std::vector<RoiSample> make_synthetic_roi_samples(std::int64_t n, std::uint64_t seed,
                                                         std::int64_t size,
                                                         const SyntheticOptions& opt = {}) {
  RoiOptions ropt;
  ropt.size = size;
  std::vector<RoiSample> out;
  for (const auto& rec : make_synthetic_dataset(n, seed, opt))
    out.push_back(make_roi_sample(rec, ropt));
  return out;
}

}  // namespace dualcore
