#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dualcore/common.hpp"
#include "dualcore/image.hpp"
#include "dualcore/random.hpp"

namespace dualcore {

struct MammogramRecord {
  GrayImage image;  // {H,W}
  BinaryMask mask;  // {H,W}, values in {0,1}
  int label = 0;    // 0 benign, 1 malignant
  std::string patient_id;
};

// inclusive pixel box
struct BBox {
  std::int64_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
  std::int64_t height() const { return r1 - r0 + 1; }
  std::int64_t width() const { return c1 - c0 + 1; }
  bool operator==(const BBox&) const = default;
};

// One two-scale training sample: contextual crop for the classifier path,
// tight crop plus mask for the segmentation path.
struct RoiSample {
  GrayImage lpl_image;  // {S,S} in [0,1]
  GrayImage cgl_image;  // {S,S} in [0,1]
  BinaryMask cgl_mask;  // {S,S} in {0,1}
  int label = 0;
  std::string patient_id;
};

struct ManifestRecord {
  std::string path_image;
  std::string path_mask;
  int label = 0;
  std::string patient_id;
  std::string split;  // "", "train" or "test"
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

inline void check_image_mask_shape(const GrayImage& image, const BinaryMask& mask,
                                   const char* where) {
  if (image.dims != mask.dims)
    throw ShapeMismatch(std::string(where) + ": image " + shape_str(image.dims) + " vs mask " +
                        shape_str(mask.dims));
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

inline BBox compute_bounding_box(const BinaryMask& mask) {
  const std::int64_t H = mask.dims[0], W = mask.dims[1];
  BBox box{H, -1, W, -1};
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c)
      if (mask[r * W + c]) {
        box.r0 = std::min(box.r0, r);
        box.r1 = std::max(box.r1, r);
        box.c0 = std::min(box.c0, c);
        box.c1 = std::max(box.c1, c);
      }
  if (box.r1 < 0) throw NoForeground();
  return box;
}

// Tight crop: bbox grown by pad per side, clamped to the image.
inline std::pair<GrayImage, BinaryMask> crop_tight(const GrayImage& image, const BinaryMask& mask,
                                                   std::int64_t pad = 5) {
  check_image_mask_shape(image, mask, "crop_tight");
  const BBox box = compute_bounding_box(mask);
  const std::int64_t H = image.dims[0], W = image.dims[1];
  const std::int64_t r0 = std::max<std::int64_t>(0, box.r0 - pad);
  const std::int64_t r1 = std::min<std::int64_t>(H - 1, box.r1 + pad);
  const std::int64_t c0 = std::max<std::int64_t>(0, box.c0 - pad);
  const std::int64_t c1 = std::min<std::int64_t>(W - 1, box.c1 + pad);
  GrayImage ic({r1 - r0 + 1, c1 - c0 + 1});
  BinaryMask mc(ic.dims);
  for (std::int64_t r = r0; r <= r1; ++r)
    for (std::int64_t c = c0; c <= c1; ++c) {
      ic[(r - r0) * ic.dims[1] + (c - c0)] = image[r * W + c];
      mc[(r - r0) * ic.dims[1] + (c - c0)] = mask[r * W + c];
    }
  return {std::move(ic), std::move(mc)};
}

// Contextual crop: factor x the bbox extent, centered on the bbox center.
// Regions outside the image are zero so the requested extent always holds.
inline std::pair<GrayImage, BinaryMask> crop_context(const GrayImage& image,
                                                     const BinaryMask& mask, double factor = 2.0) {
  check_image_mask_shape(image, mask, "crop_context");
  const BBox box = compute_bounding_box(mask);
  const std::int64_t H = image.dims[0], W = image.dims[1];
  const std::int64_t ch = std::llround(factor * static_cast<double>(box.height()));
  const std::int64_t cw = std::llround(factor * static_cast<double>(box.width()));
  const std::int64_t r0 = std::llround((box.r0 + box.r1) / 2.0 - (ch - 1) / 2.0);
  const std::int64_t c0 = std::llround((box.c0 + box.c1) / 2.0 - (cw - 1) / 2.0);
  GrayImage ic({ch, cw});
  BinaryMask mc(ic.dims);
  for (std::int64_t r = 0; r < ch; ++r)
    for (std::int64_t c = 0; c < cw; ++c) {
      const std::int64_t sr = r0 + r, sc = c0 + c;
      if (sr >= 0 && sr < H && sc >= 0 && sc < W) {
        ic[r * cw + c] = image[sr * W + sc];
        mc[r * cw + c] = mask[sr * W + sc];
      }
    }
  return {std::move(ic), std::move(mc)};
}

inline GrayImage normalize_minmax(const GrayImage& image) {
  double lo = image[0], hi = image[0];
  for (double v : image.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  GrayImage out(image.dims);
  if (hi - lo < 1e-12) return out;  // constant image -> all zeros
  for (std::int64_t i = 0; i < image.numel(); ++i) out[i] = (image[i] - lo) / (hi - lo);
  return out;
}

inline GrayImage clamp01(GrayImage img) {
  for (auto& v : img.v) v = std::min(std::max(v, 0.0), 1.0);
  return img;
}

// ---------------------------------------------------------------------------
// sample construction
// ---------------------------------------------------------------------------

struct RoiOptions {
  std::int64_t pad = 5;
  double context_factor = 2.0;
  std::int64_t size = 224;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
};

inline RoiSample make_roi_sample(const MammogramRecord& rec, const RoiOptions& opt) {
  if (rec.image.numel() == 0) throw EmptyInput("make_roi_sample");
  const GrayImage norm = normalize_minmax(rec.image);
  auto [tight_img, tight_mask] = crop_tight(norm, rec.mask, opt.pad);
  auto [ctx_img, ctx_mask] = crop_context(norm, rec.mask, opt.context_factor);
  (void)ctx_mask;
  RoiSample s;
  s.cgl_image = clamp01(resize_bicubic(tight_img, opt.size, opt.size));
  s.cgl_mask = resize_nearest(tight_mask, opt.size, opt.size);
  s.lpl_image = clamp01(resize_bicubic(ctx_img, opt.size, opt.size));
  s.label = rec.label;
  s.patient_id = rec.patient_id;
  return s;
}

namespace augment_detail {

template <typename T>
Tensor<T> flip_h(const Tensor<T>& a) {
  Tensor<T> out(a.dims);
  const std::int64_t H = a.dims[0], W = a.dims[1];
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) out[r * W + c] = a[r * W + (W - 1 - c)];
  return out;
}

template <typename T>
Tensor<T> flip_v(const Tensor<T>& a) {
  Tensor<T> out(a.dims);
  const std::int64_t H = a.dims[0], W = a.dims[1];
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) out[r * W + c] = a[(H - 1 - r) * W + c];
  return out;
}

template <typename T>
Tensor<T> window(const Tensor<T>& a, std::int64_t r0, std::int64_t c0, std::int64_t n) {
  Tensor<T> out({n, n});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c) out[r * n + c] = a[(r0 + r) * a.dims[1] + (c0 + c)];
  return out;
}

}  // namespace augment_detail

struct AugmentFlags {
  bool flips = true;
  bool random_crop = true;
  double probability = 0.5;  // per transform, per sample
  double crop_side = 0.9;    // window side as a fraction of the sample side
};

// Flips and random-crop-then-resize, each applied with the configured
// probability; image and mask transform jointly. Deterministic given the rng
// state. Draw order is fixed: hflip, vflip, crop, (row, col).
inline RoiSample augment(const RoiSample& in, Rng& rng, const AugmentFlags& flags = {}) {
  using namespace augment_detail;
  RoiSample out = in;
  const bool do_h = flags.flips && rng.bernoulli(flags.probability);
  const bool do_v = flags.flips && rng.bernoulli(flags.probability);
  const bool do_c = flags.random_crop && rng.bernoulli(flags.probability);
  if (do_h) {
    out.lpl_image = flip_h(out.lpl_image);
    out.cgl_image = flip_h(out.cgl_image);
    out.cgl_mask = flip_h(out.cgl_mask);
  }
  if (do_v) {
    out.lpl_image = flip_v(out.lpl_image);
    out.cgl_image = flip_v(out.cgl_image);
    out.cgl_mask = flip_v(out.cgl_mask);
  }
  if (do_c) {
    const std::int64_t S = out.cgl_image.dims[0];
    const std::int64_t w = std::max<std::int64_t>(1, std::llround(flags.crop_side * S));
    const std::int64_t r0 = rng.below(S - w + 1);
    const std::int64_t c0 = rng.below(S - w + 1);
    out.lpl_image = clamp01(resize_bicubic(window(out.lpl_image, r0, c0, w), S, S));
    out.cgl_image = clamp01(resize_bicubic(window(out.cgl_image, r0, c0, w), S, S));
    out.cgl_mask = resize_nearest(window(out.cgl_mask, r0, c0, w), S, S);
  }
  return out;
}

inline RoiSample augment(const RoiSample& in, std::uint64_t seed, const AugmentFlags& flags = {}) {
  Rng rng(seed);
  return augment(in, rng, flags);
}

// ---------------------------------------------------------------------------
// manifests and splits
// ---------------------------------------------------------------------------

// Partition patients ~ratio/(1-ratio); every record of a patient lands in the
// same split. Patient order is shuffled under the given seed.
inline DatasetManifest split_by_patient(const DatasetManifest& manifest, double ratio,
                                        std::uint64_t seed) {
  std::vector<std::string> patients;
  for (const auto& r : manifest.records)
    if (std::find(patients.begin(), patients.end(), r.patient_id) == patients.end())
      patients.push_back(r.patient_id);
  if (patients.size() < 2) throw InsufficientPatients(patients.size());
  Rng rng(mix64(seed ^ 0x517Cull));
  rng.shuffle(patients);
  const std::int64_t P = static_cast<std::int64_t>(patients.size());
  const std::int64_t n_train =
      std::clamp<std::int64_t>(std::llround(ratio * static_cast<double>(P)), 1, P - 1);
  std::map<std::string, std::string> tag;
  for (std::int64_t i = 0; i < P; ++i)
    tag[patients[static_cast<std::size_t>(i)]] = i < n_train ? "train" : "test";
  DatasetManifest out = manifest;
  for (auto& r : out.records) r.split = tag[r.patient_id];
  return out;
}

namespace csv_detail {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cols.push_back(cell);
  return cols;
}

}  // namespace csv_detail

inline DatasetManifest load_manifest(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open manifest " + csv_path);
  DatasetManifest m;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = csv_detail::split_row(line);
    if (first) {
      first = false;
      if (!cols.empty() && cols[0] == "image") continue;  // header
    }
    if (cols.size() < 4) throw IoError("manifest row needs 4+ columns: " + line);
    ManifestRecord r;
    r.path_image = cols[0];
    r.path_mask = cols[1];
    r.label = std::stoi(cols[2]);
    r.patient_id = cols[3];
    if (cols.size() >= 5) r.split = cols[4];
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& csv_path) {
  std::ofstream f(csv_path);
  if (!f) throw IoError("cannot write manifest " + csv_path);
  f << "image,mask,label,patient_id,split\n";
  for (const auto& r : m.records)
    f << r.path_image << ',' << r.path_mask << ',' << r.label << ',' << r.patient_id << ','
      << r.split << '\n';
}

// Output rows of roi-extract: the per-sample PNG triple plus metadata.
struct ExtractedRecord {
  std::string path_lpl;
  std::string path_cgl;
  std::string path_mask;
  int label = 0;
  std::string patient_id;
  std::string split;
};

struct ExtractedManifest {
  std::vector<ExtractedRecord> records;
};

inline void save_extracted_manifest(const ExtractedManifest& m, const std::string& csv_path) {
  std::ofstream f(csv_path);
  if (!f) throw IoError("cannot write manifest " + csv_path);
  f << "lpl,cgl,mask,label,patient_id,split\n";
  for (const auto& r : m.records)
    f << r.path_lpl << ',' << r.path_cgl << ',' << r.path_mask << ',' << r.label << ','
      << r.patient_id << ',' << r.split << '\n';
}

inline ExtractedManifest load_extracted_manifest(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open manifest " + csv_path);
  ExtractedManifest m;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = csv_detail::split_row(line);
    if (first) {
      first = false;
      if (!cols.empty() && cols[0] == "lpl") continue;
    }
    if (cols.size() < 6) throw IoError("extracted manifest row needs 6 columns: " + line);
    m.records.push_back({cols[0], cols[1], cols[2], std::stoi(cols[3]), cols[4], cols[5]});
  }
  return m;
}

// Resolve a manifest path entry relative to the manifest file's directory.
inline std::string resolve_path(const std::string& manifest_path, const std::string& entry) {
  std::filesystem::path p(entry);
  if (p.is_absolute()) return entry;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

inline MammogramRecord load_record(const std::string& manifest_path, const ManifestRecord& r) {
  MammogramRecord rec;
  rec.image = png_io::read_gray(resolve_path(manifest_path, r.path_image));
  rec.mask = png_io::read_mask(resolve_path(manifest_path, r.path_mask));
  check_image_mask_shape(rec.image, rec.mask, "record image vs mask");
  rec.label = r.label;
  rec.patient_id = r.patient_id;
  return rec;
}

// Full extraction pass: split, crop both scales, resize, write PNG triples
// plus an output manifest (paths relative to out_dir).
inline ExtractedManifest extract_rois(const std::string& manifest_path, const std::string& out_dir,
                                      const RoiOptions& opt) {
  const DatasetManifest input =
      split_by_patient(load_manifest(manifest_path), opt.split_ratio, opt.seed);
  std::filesystem::create_directories(out_dir);
  ExtractedManifest output;
  for (std::size_t i = 0; i < input.records.size(); ++i) {
    const auto& r = input.records[i];
    const MammogramRecord rec = load_record(manifest_path, r);
    const RoiSample s = make_roi_sample(rec, opt);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%04zu", i);
    ExtractedRecord e;
    e.path_lpl = std::string(stem) + "_lpl.png";
    e.path_cgl = std::string(stem) + "_cgl.png";
    e.path_mask = std::string(stem) + "_mask.png";
    e.label = r.label;
    e.patient_id = r.patient_id;
    e.split = r.split;
    png_io::write_gray16((std::filesystem::path(out_dir) / e.path_lpl).string(), s.lpl_image);
    png_io::write_gray16((std::filesystem::path(out_dir) / e.path_cgl).string(), s.cgl_image);
    png_io::write_mask((std::filesystem::path(out_dir) / e.path_mask).string(), s.cgl_mask);
    output.records.push_back(std::move(e));
  }
  save_extracted_manifest(output, (std::filesystem::path(out_dir) / "manifest.csv").string());
  return output;
}

// Load extracted samples back (roi-extract output layout).
inline std::vector<RoiSample> load_roi_samples(const std::string& out_manifest_path,
                                               const std::string& split_filter = "") {
  const ExtractedManifest m = load_extracted_manifest(out_manifest_path);
  std::vector<RoiSample> samples;
  for (const auto& r : m.records) {
    if (!split_filter.empty() && r.split != split_filter) continue;
    RoiSample s;
    s.lpl_image = png_io::read_gray(resolve_path(out_manifest_path, r.path_lpl));
    s.cgl_image = png_io::read_gray(resolve_path(out_manifest_path, r.path_cgl));
    s.cgl_mask = png_io::read_mask(resolve_path(out_manifest_path, r.path_mask));
    s.label = r.label;
    s.patient_id = r.patient_id;
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace dualcore
