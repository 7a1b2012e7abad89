#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "dualcore/common.hpp"
#include "dualcore/random.hpp"

namespace dualcore {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor. Contiguous, no strides.
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape d) : dims(std::move(d)), v(static_cast<std::size_t>(shape_numel(dims)), T(0)) {}
  Tensor(Shape d, std::vector<T> data) : dims(std::move(d)), v(std::move(data)) {
    if (static_cast<std::int64_t>(v.size()) != shape_numel(dims))
      throw ShapeMismatch("tensor data size vs " + shape_str(dims));
  }

  static Tensor zeros(Shape d) { return Tensor(std::move(d)); }
  static Tensor full(Shape d, T value) {
    Tensor t(std::move(d));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return full({1}, value); }
  static Tensor randn(Shape d, Rng& rng, T scale = T(1)) {
    Tensor t(std::move(d));
    for (auto& x : t.v) x = static_cast<T>(rng.normal()) * scale;
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(dims.size()); }
  std::int64_t dim(int i) const { return dims[static_cast<std::size_t>(i)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

  // 4-D accessor (N,C,H,W)
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return v[static_cast<std::size_t>(((n * dims[1] + c) * dims[2] + h) * dims[3] + w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return v[static_cast<std::size_t>(((n * dims[1] + c) * dims[2] + h) * dims[3] + w)];
  }

  Tensor reshaped(Shape d) const {
    if (shape_numel(d) != numel())
      throw ShapeMismatch("reshape " + shape_str(dims) + " -> " + shape_str(d));
    Tensor t;
    t.dims = std::move(d);
    t.v = v;
    return t;
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t.dims = dims;
    t.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) t.v[i] = static_cast<U>(v[i]);
    return t;
  }
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(where) + ": " + shape_str(a.dims) + " vs " + shape_str(b.dims));
}

}  // namespace dualcore
