#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "expertseg/classifier_bank.hpp"
#include "expertseg/common.hpp"

namespace expertseg {

inline constexpr double kDefaultLogitScale = 100.0;

/// Feature map with every patch embedding L2-normalized, stored as f64 rows.
struct NormalizedFeatures {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<double> rows;  // (height * width) x dim, row-major

  [[nodiscard]] GridShape grid() const noexcept { return {height, width}; }
  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }
  [[nodiscard]] std::span<const double> pixel(std::size_t p) const { return {rows.data() + p * dim, dim}; }
};

/// Throws ValidationError naming the pixel if any feature vector has zero norm.
NormalizedFeatures normalize_features(const FeatureMap& features);

/// Cosine similarity between every pixel and every classifier row: Hf x Wf x K.
DenseMap cosine_logits(const NormalizedFeatures& features, const Classifier& classifier);
DenseMap cosine_logits(const FeatureMap& features, const Classifier& classifier);

struct SoftSegMap {
  DenseMap probs;
  double logit_scale = kDefaultLogitScale;
};

/// Numerically stable softmax of scale * logits over one pixel's K values.
void softmax_pixel(std::span<const double> logits, double logit_scale, std::span<double> out);
SoftSegMap softmax_map(const DenseMap& logits, double logit_scale);

/// Index of the maximum, ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);
PredMap argmax_map(const DenseMap& scores);
inline PredMap argmax_map(const SoftSegMap& s) { return argmax_map(s.probs); }

/// Resize a Hf x Wf x K map to target (H >= Hf, W >= Wf). Bilinear uses the
/// half-pixel (align_corners = false) convention; nearest picks the source cell
/// whose center is closest.
DenseMap upsample_logits(const DenseMap& logits, GridShape target, UpsampleMode mode);

/// Nearest source cell (row or column) for output index i under the same convention.
std::size_t nearest_source_index(std::size_t i, std::size_t src, std::size_t dst);

/// Logits at the requested resolution: grid logits, or upsampled to label_size.
DenseMap logits_at(const NormalizedFeatures& features, const Classifier& classifier, Resolution resolution,
                   GridShape label_size, UpsampleMode mode);

}  // namespace expertseg
