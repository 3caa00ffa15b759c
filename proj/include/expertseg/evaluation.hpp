#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "expertseg/common.hpp"
#include "expertseg/expert_set.hpp"

namespace expertseg {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

  /// Counts every pixel whose ground truth is not ignore_index. Throws on shape
  /// mismatch, a prediction outside [0, K), or a non-ignored label outside [0, K).
  void accumulate(const PredMap& pred, const LabelMap& gt, std::uint16_t ignore_index);
  void merge(const ConfusionMatrix& other);

  [[nodiscard]] std::size_t num_classes() const noexcept { return k_; }
  [[nodiscard]] std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate_confusion(const PredMap& pred, const LabelMap& gt, std::size_t num_classes,
                                     std::uint16_t ignore_index);

struct IouResult {
  std::vector<double> iou;            // 0 for absent classes
  std::vector<std::uint8_t> present;  // union > 0
  double miou = 0.0;                  // mean over present classes
};

IouResult iou_per_class(const ConfusionMatrix& cm);

/// Labeled ground truth for class experts: m is an expert of k iff
/// its single-template IoU on k strictly exceeds the averaged classifier's.
struct TrueExpertTable {
  std::size_t num_templates = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> experts;  // ascending template indices
  std::vector<double> template_iou;               // m * K + k
  std::vector<double> clip_iou;                   // K
  std::vector<std::uint8_t> present;              // K, union > 0 under the averaged classifier

  [[nodiscard]] double iou(std::size_t m, std::size_t k) const { return template_iou[m * num_classes + k]; }
};

TrueExpertTable true_experts_from_iou(std::size_t num_templates, std::size_t num_classes,
                                      std::vector<double> template_iou, std::vector<double> clip_iou,
                                      std::vector<std::uint8_t> present = {});

struct QualityReport {
  std::size_t top_n = 0;
  std::vector<double> per_class;           // percent, multiples of 100 / N
  std::vector<std::size_t> intersections;  // |estimated ∩ true|
  std::vector<std::uint8_t> short_list;    // class had fewer than N estimated experts
  double mean = 0.0;
};

/// 100 * |estimated_k ∩ true_k| / N per class (N-denominator even for short lists).
QualityReport expert_quality(const ExpertSet& estimated, std::span<const std::vector<std::size_t>> truth);
QualityReport expert_quality(const ExpertSet& estimated, const TrueExpertTable& truth);

struct OracleDraw {
  ExpertSet experts;
  std::vector<std::size_t> clamped_classes;  // classes whose pools could not supply the requested split
};

/// Round-half-up count of expert draws for ratio rho over N templates.
std::size_t oracle_expert_count(double rho, std::size_t top_n);

/// Per class: round(rho * N) templates drawn uniformly from the true experts and
/// the rest from the non-experts; a short pool is clamped and reported.
OracleDraw oracle_ratio_experts(const TrueExpertTable& truth, double rho, std::size_t top_n, std::uint64_t seed);

/// Per class: the N templates with highest IoU on that class, ties to the lower index.
ExpertSet oracle_best_experts(const TrueExpertTable& truth, std::size_t top_n);

/// Per-class IoU of the best single template minus the averaged classifier's.
std::vector<double> best_expert_gap(const TrueExpertTable& truth);

struct ClassNames {
  std::vector<std::string> names;
  std::map<std::string, std::vector<std::string>> aliases;
};

/// Lowercased, whitespace-trimmed name.
std::string normalize_class_name(const std::string& name);

struct TransferResult {
  ExpertSet experts;                   // sized for the target classes
  std::vector<std::size_t> inherited;  // target class indices with a matched source class
  std::vector<std::size_t> fallback;   // target classes left to the averaged classifier
};

/// Maps a source ExpertSet onto target classes by normalized-name equality
/// (names plus optional aliases). Unmatched target classes get empty lists.
TransferResult transfer_experts(const ExpertSet& source, const ClassNames& source_classes,
                                const ClassNames& target_classes);

}  // namespace expertseg
