#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dualcore/nn.hpp"

namespace dualcore {

// Flat binary checkpoint: a version header followed by name -> shape-tagged
// raw arrays in registry order. Round-trips bit-exactly.
//
//   magic "DCNCKPT1" | u32 version | u32 scalar_bytes | u64 entry count
//   per entry: u32 name_len | name | u32 ndim | i64 dims[] | raw values

namespace ckpt_detail {

constexpr char kMagic[8] = {'D', 'C', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ofstream& f, const V& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::ifstream& f) {
  V v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::string& path) {
  using namespace ckpt_detail;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(kMagic, 8);
  put(f, kVersion);
  put(f, static_cast<std::uint32_t>(sizeof(T)));
  put(f, static_cast<std::uint64_t>(params.entries().size()));
  for (const auto& [name, v] : params.entries()) {
    put(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(f, static_cast<std::uint32_t>(v.value().dims.size()));
    for (auto d : v.value().dims) put(f, static_cast<std::int64_t>(d));
    f.write(reinterpret_cast<const char*>(v.value().data()),
            static_cast<std::streamsize>(sizeof(T) * v.value().v.size()));
  }
  if (!f) throw IoError("short write on checkpoint " + path);
}

template <typename T>
std::map<std::string, Tensor<T>> load_checkpoint_map(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw IoError(path + ": not a checkpoint");
  const auto version = take<std::uint32_t>(f);
  if (version != kVersion) throw IoError(path + ": unsupported checkpoint version");
  const auto scalar_bytes = take<std::uint32_t>(f);
  if (scalar_bytes != sizeof(T))
    throw IoError(path + ": scalar width mismatch (file " + std::to_string(scalar_bytes) +
                  " bytes, expected " + std::to_string(sizeof(T)) + ")");
  const auto count = take<std::uint64_t>(f);
  std::map<std::string, Tensor<T>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto ndim = take<std::uint32_t>(f);
    Shape dims(ndim);
    for (auto& d : dims) d = take<std::int64_t>(f);
    Tensor<T> t(dims);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(sizeof(T) * t.v.size()));
    if (!f) throw IoError(path + ": truncated checkpoint");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// Loads into an existing registry; every entry must exist with the same
// shape. Mismatches are reported together.
template <typename T>
void load_checkpoint(ParamStore<T>& params, const std::string& path) {
  auto m = load_checkpoint_map<T>(path);
  std::string problems;
  for (auto& [name, v] : params.entries()) {
    auto it = m.find(name);
    if (it == m.end()) {
      problems += "  missing: " + name + "\n";
      continue;
    }
    if (it->second.dims != v.value().dims) {
      problems += "  shape: " + name + " file " + shape_str(it->second.dims) + " vs model " +
                  shape_str(v.value().dims) + "\n";
    }
  }
  if (m.size() != params.entries().size())
    problems += "  entry count: file " + std::to_string(m.size()) + " vs model " +
                std::to_string(params.entries().size()) + "\n";
  if (!problems.empty()) throw ShapeMismatch("checkpoint " + path + "\n" + problems);
  for (auto& [name, v] : params.entries()) v.value() = m.at(name);
}

}  // namespace dualcore
