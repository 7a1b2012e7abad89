#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "dualcore/common.hpp"
#include "dualcore/tensor.hpp"

namespace dualcore {

// Grayscale images are Tensor<double> {H,W} in [0,1]; masks are
// Tensor<uint8> {H,W} in {0,1}.
using GrayImage = Tensor<double>;
using BinaryMask = Tensor<std::uint8_t>;

namespace png_io {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Reads an 8- or 16-bit grayscale PNG, normalized by the bit depth's maximum.
inline GrayImage read_gray(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": expected a grayscale PNG");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);  // little-endian in memory
  png_read_update_info(png, info);

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * png_get_rowbytes(png, info));
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + r * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  const int out_depth = png_get_bit_depth(png, info);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage img({static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  if (out_depth == 16) {
    const auto* p = reinterpret_cast<const std::uint16_t*>(raw.data());
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = p[i] / 65535.0;
  } else {
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = raw[static_cast<std::size_t>(i)] / 255.0;
  }
  return img;
}

inline BinaryMask read_mask(const std::string& path) {
  GrayImage g = read_gray(path);
  BinaryMask m(g.dims);
  for (std::int64_t i = 0; i < g.numel(); ++i) m[i] = g[i] > 0.0 ? 1 : 0;
  return m;
}

namespace detail {

// Writer settings are pinned (filter NONE, stored deflate blocks) so output
// bytes do not depend on the zlib version.
inline void write_rows(const std::string& path, png_uint_32 w, png_uint_32 h, int depth,
                       const std::vector<png_bytep>& rows) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path);
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 0);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, w, h, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytep*>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_gray8(const std::string& path, const GrayImage& img) {
  const std::int64_t h = img.dims[0], w = img.dims[1];
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.numel()));
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    double v = std::lround(std::min(std::max(img[i], 0.0), 1.0) * 255.0);
    raw[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t r = 0; r < h; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + r * w;
  detail::write_rows(path, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, rows);
}

inline void write_gray16(const std::string& path, const GrayImage& img) {
  const std::int64_t h = img.dims[0], w = img.dims[1];
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(img.numel()));
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    double v = std::lround(std::min(std::max(img[i], 0.0), 1.0) * 65535.0);
    raw[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(v);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t r = 0; r < h; ++r)
    rows[static_cast<std::size_t>(r)] = reinterpret_cast<png_bytep>(raw.data() + r * w);
  detail::write_rows(path, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16, rows);
}

// masks are written as {0,255} 8-bit
inline void write_mask(const std::string& path, const BinaryMask& mask) {
  GrayImage img(mask.dims);
  for (std::int64_t i = 0; i < mask.numel(); ++i) img[i] = mask[i] ? 1.0 : 0.0;
  write_gray8(path, img);
}

}  // namespace png_io

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

namespace resize_detail {

// Keys cubic convolution kernel, a = -0.5
inline double cubic_weight(double x) {
  x = std::fabs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

inline std::int64_t clamp_idx(std::int64_t i, std::int64_t n) {
  return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

// one separable pass along the leading axis of a {H,W} buffer
inline GrayImage cubic_pass_rows(const GrayImage& in, std::int64_t out_h) {
  const std::int64_t H = in.dims[0], W = in.dims[1];
  GrayImage out({out_h, W});
  const double scale = static_cast<double>(H) / static_cast<double>(out_h);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const double src = (oy + 0.5) * scale - 0.5;
    const std::int64_t base = static_cast<std::int64_t>(std::floor(src)) - 1;
    double wsum[4];
    for (int k = 0; k < 4; ++k) wsum[k] = cubic_weight(src - (base + k));
    for (std::int64_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += wsum[k] * in[clamp_idx(base + k, H) * W + x];
      out[oy * W + x] = acc;
    }
  }
  return out;
}

inline GrayImage transpose(const GrayImage& in) {
  GrayImage out({in.dims[1], in.dims[0]});
  for (std::int64_t r = 0; r < in.dims[0]; ++r)
    for (std::int64_t c = 0; c < in.dims[1]; ++c) out[c * in.dims[0] + r] = in[r * in.dims[1] + c];
  return out;
}

}  // namespace resize_detail

// Cubic-convolution resize (Keys a=-0.5), half-pixel centers, clamped borders.
inline GrayImage resize_bicubic(const GrayImage& in, std::int64_t out_h, std::int64_t out_w) {
  if (in.numel() == 0) throw EmptyInput("resize_bicubic");
  using namespace resize_detail;
  return transpose(cubic_pass_rows(transpose(cubic_pass_rows(in, out_h)), out_w));
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& in, std::int64_t out_h, std::int64_t out_w) {
  if (in.numel() == 0) throw EmptyInput("resize_nearest");
  const std::int64_t H = in.dims[0], W = in.dims[1];
  Tensor<T> out({out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const std::int64_t iy =
        resize_detail::clamp_idx(static_cast<std::int64_t>(std::floor((oy + 0.5) * sy)), H);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const std::int64_t ix =
          resize_detail::clamp_idx(static_cast<std::int64_t>(std::floor((ox + 0.5) * sx)), W);
      out[oy * out_w + ox] = in[iy * W + ix];
    }
  }
  return out;
}

}  // namespace dualcore
