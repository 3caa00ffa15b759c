#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "expertseg/classifier_bank.hpp"
#include "expertseg/dense_inference.hpp"
#include "expertseg/expert_set.hpp"

namespace expertseg {

inline constexpr std::size_t kDefaultTopN = 4;

/// How MaNo normalizes the scaled logits before taking the L_p norm.
enum class ManoNormalizer {
  Softmax,  // plain softmax, i.e. the prediction q itself
  Taylor,   // second-order Taylor softmax: (1 + z + z^2/2) / sum
  Gated,    // per (image, template): Taylor when the prediction is far from uniform, else softmax
};
std::string to_string(ManoNormalizer n);
ManoNormalizer parse_mano_normalizer(const std::string& s);

struct SelectionConfig {
  MetricKind metric = MetricKind::Entropy;
  double logit_scale = kDefaultLogitScale;
  Resolution resolution = Resolution::Grid;
  UpsampleMode upsample = UpsampleMode::Bilinear;
  Pooling pooling = Pooling::Pixels;
  double mano_p = 4.0;
  ManoNormalizer mano_normalizer = ManoNormalizer::Softmax;
  /// Gated MaNo switches to Taylor when mean KL(uniform || q) exceeds this.
  double mano_gate_threshold = 5.0;

  friend bool operator==(const SelectionConfig&, const SelectionConfig&) = default;
};

/// Shannon entropy in nats with 0 * ln 0 := 0.
double entropy(std::span<const double> q);

/// Finalized M x K metric table; invalid entries (no predicted pixel) are masked.
struct ScoreTable {
  std::size_t num_templates = 0;
  std::size_t num_classes = 0;
  MetricKind metric = MetricKind::Entropy;
  std::vector<double> scores;         // m * K + k
  std::vector<std::uint8_t> valid;    // m * K + k
  std::vector<std::uint64_t> counts;  // predicted-pixel counts C_{m,k}

  [[nodiscard]] double score(std::size_t m, std::size_t k) const { return scores[m * num_classes + k]; }
  [[nodiscard]] bool is_valid(std::size_t m, std::size_t k) const { return valid[m * num_classes + k] != 0; }
};

/// Mergeable per-(template, class) sums of an unsupervised statistic over the
/// pixels each single-template classifier assigns to that class.
class MetricAccumulator {
 public:
  MetricAccumulator() = default;
  MetricAccumulator(SelectionConfig config, std::size_t num_templates, std::size_t num_classes, std::size_t dim);

  [[nodiscard]] const SelectionConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::size_t num_templates() const noexcept { return m_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return k_; }
  [[nodiscard]] std::size_t dim() const noexcept { return d_; }
  [[nodiscard]] std::uint64_t images() const noexcept { return images_; }

  /// `templates` holds the M single-template classifiers in template order.
  /// label_size is used only at Resolution::Label.
  void accumulate_image(std::span<const Classifier> templates, const NormalizedFeatures& features,
                        GridShape label_size = {});
  void accumulate_image(const TextBank& bank, const FeatureMap& features, GridShape label_size = {});

  /// Adds b's sums and counts; ITI per-image centroids are appended after ours.
  void merge(const MetricAccumulator& other);

  [[nodiscard]] ScoreTable finalize() const;

  [[nodiscard]] double sum(std::size_t m, std::size_t k) const { return sum_[m * k_ + k]; }
  [[nodiscard]] std::uint64_t count(std::size_t m, std::size_t k) const { return count_[m * k_ + k]; }
  /// ITI: concatenated per-image class-mean features for (m, k), D values each.
  [[nodiscard]] const std::vector<double>& class_means(std::size_t m, std::size_t k) const {
    return class_means_[m * k_ + k];
  }

  friend bool operator==(const MetricAccumulator&, const MetricAccumulator&) = default;

 private:
  SelectionConfig config_;
  std::size_t m_ = 0, k_ = 0, d_ = 0;
  std::uint64_t images_ = 0;
  std::vector<double> sum_;
  std::vector<std::uint64_t> count_;
  std::vector<double> image_mean_sum_;
  std::vector<std::uint64_t> image_hits_;
  std::vector<std::vector<double>> class_means_;
};

MetricAccumulator merge(const MetricAccumulator& a, const MetricAccumulator& b);

inline ScoreTable finalize_scores(const MetricAccumulator& acc) { return acc.finalize(); }

/// Per class: the best min(N, #valid) valid templates under the metric's
/// ordering, ties to the lower template index. Classes with no valid template
/// land in fallback_classes.
ExpertSet select_experts(const ScoreTable& table, std::size_t top_n);

}  // namespace expertseg
