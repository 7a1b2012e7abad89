#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dualcore {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error("shape mismatch: " + what) {}
};

struct NoForeground : std::runtime_error {
  NoForeground() : std::runtime_error("mask has no foreground pixels") {}
};

struct EmptyInput : std::runtime_error {
  explicit EmptyInput(const std::string& what) : std::runtime_error("empty input: " + what) {}
};

struct InsufficientPatients : std::runtime_error {
  explicit InsufficientPatients(std::size_t n)
      : std::runtime_error("need at least 2 distinct patients, got " + std::to_string(n)) {}
};

struct DegenerateLabels : std::runtime_error {
  explicit DegenerateLabels(const std::string& what) : std::runtime_error("degenerate labels: " + what) {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(std::int64_t batch_id)
      : std::runtime_error("non-finite loss at batch " + std::to_string(batch_id)), batch(batch_id) {}
  std::int64_t batch;
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error("io error: " + what) {}
};

}  // namespace dualcore
