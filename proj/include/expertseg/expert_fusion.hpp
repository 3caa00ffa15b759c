#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "expertseg/classifier_bank.hpp"
#include "expertseg/dense_inference.hpp"
#include "expertseg/expert_set.hpp"

namespace expertseg {

enum class FusionStrategy {
  ExpertHighest,  // highest own-class probability among self-predicting experts
  ExpertAverage,  // argmax of the mean probability vector of self-predicting experts
  ExpertDefault,  // single self-predicting expert wins; conflicts defer to the fallback
  AverageAll,     // argmax of the mean of all expert probability vectors
};
std::string to_string(FusionStrategy s);
FusionStrategy parse_strategy(const std::string& s);
/// AverageAll never consults the fallback classifier.
inline bool needs_fallback(FusionStrategy s) { return s != FusionStrategy::AverageAll; }

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::ExpertHighest;
  double logit_scale = kDefaultLogitScale;
  Resolution resolution = Resolution::Label;
  UpsampleMode upsample = UpsampleMode::Bilinear;
};

struct FallbackStats {
  std::uint64_t pixels = 0;
  std::uint64_t fallback_pixels = 0;  // resolved by the fallback classifier
  std::uint64_t conflict_pixels = 0;  // |X(x)| >= 2
  std::uint64_t empty_pixels = 0;     // |X(x)| == 0

  [[nodiscard]] double fallback_fraction() const {
    return pixels == 0 ? 0.0 : static_cast<double>(fallback_pixels) / static_cast<double>(pixels);
  }
  void merge(const FallbackStats& o) {
    pixels += o.pixels;
    fallback_pixels += o.fallback_pixels;
    conflict_pixels += o.conflict_pixels;
    empty_pixels += o.empty_pixels;
  }
  friend bool operator==(const FallbackStats&, const FallbackStats&) = default;
};

struct FusionResult {
  PredMap labels;
  FallbackStats stats;
  /// Bytes of per-image working buffers the fusion held at its peak.
  std::size_t working_bytes = 0;
};

/// Reference fusion: materializes all K expert soft maps (and the fallback map).
/// `experts[k]` is the class-k expert classifier; `fallback` may be null only
/// for AverageAll. label_size is used only at Resolution::Label.
FusionResult fuse(const NormalizedFeatures& features, std::span<const Classifier> experts,
                  const Classifier* fallback, const FusionConfig& cfg, GridShape label_size = {});

/// Same output as fuse, but visits experts one at a time and keeps only
/// per-pixel summaries (own-class probability, self-prediction count, and for
/// the averaging strategies a single running K-vector per pixel).
FusionResult fuse_streaming(const NormalizedFeatures& features, std::span<const Classifier> experts,
                            const Classifier* fallback, const FusionConfig& cfg, GridShape label_size = {});

/// Expert classifiers for every class, substituting `fallback` for classes in
/// experts.fallback_classes (or with an empty list).
std::vector<Classifier> expert_classifiers_with_fallback(const TextBank& bank, const ExpertSet& experts,
                                                         const Classifier& fallback,
                                                         const ClassifierOptions& opts = {});

}  // namespace expertseg
