#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "expertseg/common.hpp"
#include "expertseg/tensor_store.hpp"

namespace expertseg {

/// M x K x D prompt embeddings: row (m, k) is the encoding of template m filled with class k.
class TextBank {
 public:
  TextBank() = default;
  /// Throws ValidationError on shape mismatch or any embedding with norm <= 1e-8.
  TextBank(std::size_t num_templates, std::size_t num_classes, std::size_t dim, std::vector<double> values);

  static TextBank from_tensor(const TensorFile& t);
  [[nodiscard]] TensorFile to_tensor_f32() const;

  [[nodiscard]] std::size_t num_templates() const noexcept { return m_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return k_; }
  [[nodiscard]] std::size_t dim() const noexcept { return d_; }

  [[nodiscard]] std::span<const double> embedding(std::size_t m, std::size_t k) const {
    return {values_.data() + (m * k_ + k) * d_, d_};
  }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }

  /// Bank restricted to the given classes (in the given order).
  [[nodiscard]] TextBank select_classes(std::span<const std::size_t> classes) const;

 private:
  std::size_t m_ = 0, k_ = 0, d_ = 0;
  std::vector<double> values_;
};

struct AveragedAll {
  friend bool operator==(const AveragedAll&, const AveragedAll&) = default;
};
struct SingleTemplate {
  std::size_t template_index = 0;
  friend bool operator==(const SingleTemplate&, const SingleTemplate&) = default;
};
/// Averaging over a template subset applied to every class name (an expert classifier).
struct TemplateSubset {
  std::vector<std::size_t> templates;  // ascending
  friend bool operator==(const TemplateSubset&, const TemplateSubset&) = default;
};
using ClassifierSource = std::variant<AveragedAll, SingleTemplate, TemplateSubset>;

/// K x D text classifier; rows are unit-norm unless built with renormalize_mean = false.
struct Classifier {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;
  ClassifierSource source;

  [[nodiscard]] std::span<const double> row(std::size_t k) const { return {weights.data() + k * dim, dim}; }
};

struct ClassifierOptions {
  /// Renormalize the mean of the (normalized) prompt embeddings.
  bool renormalize_mean = true;
};

Classifier build_average_classifier(const TextBank& bank, const ClassifierOptions& opts = {});
Classifier build_single_template_classifier(const TextBank& bank, std::size_t template_index);
/// One classifier averaging `templates` for every class name. Order of `templates` is irrelevant.
Classifier build_template_subset_classifier(const TextBank& bank, std::span<const std::size_t> templates,
                                            const ClassifierOptions& opts = {});
/// One K-row classifier per class k, each built from expert_lists[k].
/// Throws ValidationError naming the class if any list is empty.
std::vector<Classifier> build_expert_classifiers(const TextBank& bank,
                                                 std::span<const std::vector<std::size_t>> expert_lists,
                                                 const ClassifierOptions& opts = {});
std::vector<Classifier> build_all_single_template_classifiers(const TextBank& bank);

}  // namespace expertseg
