#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace expertseg {

/// Raised when inputs violate a documented contract (shapes, ranges, schema).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the filesystem refuses a read or write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;

  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Row-major height x width x channels block of doubles.
struct DenseMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  DenseMap() = default;
  DenseMap(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), values(h * w * c, 0.0) {}

  [[nodiscard]] GridShape grid() const noexcept { return {height, width}; }
  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }
  [[nodiscard]] std::span<double> pixel(std::size_t p) {
    return {values.data() + p * channels, channels};
  }
  [[nodiscard]] std::span<const double> pixel(std::size_t p) const {
    return {values.data() + p * channels, channels};
  }
  [[nodiscard]] double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * channels + c];
  }
};

/// One image's dense patch embeddings as stored on disk (unnormalized).
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  [[nodiscard]] GridShape grid() const noexcept { return {height, width}; }
  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }
  [[nodiscard]] std::span<const float> pixel(std::size_t p) const {
    return {values.data() + p * dim, dim};
  }
};

/// Per-pixel class indices. Used both for ground truth and predictions.
struct LabelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelGrid() = default;
  LabelGrid(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  [[nodiscard]] GridShape grid() const noexcept { return {height, width}; }
  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }
  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

using PredMap = LabelGrid;
using LabelMap = LabelGrid;

/// Which grid the per-pixel computations run on.
enum class Resolution { Grid, Label };

enum class UpsampleMode { Bilinear, Nearest };

std::string to_string(Resolution r);
Resolution parse_resolution(const std::string& s);
std::string to_string(UpsampleMode m);
UpsampleMode parse_upsample_mode(const std::string& s);

}  // namespace expertseg
