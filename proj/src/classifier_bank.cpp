#include "expertseg/classifier_bank.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace expertseg {
namespace {

constexpr double kMinEmbeddingNorm = 1e-8;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Mean of normalized embeddings over `templates` (ascending), for every class.
Classifier average_rows(const TextBank& bank, std::vector<std::size_t> templates, const ClassifierOptions& opts,
                        ClassifierSource source) {
  std::sort(templates.begin(), templates.end());
  templates.erase(std::unique(templates.begin(), templates.end()), templates.end());
  if (templates.empty()) throw ValidationError("cannot average an empty template set");
  const std::size_t K = bank.num_classes();
  const std::size_t D = bank.dim();
  for (auto m : templates) {
    if (m >= bank.num_templates()) {
      throw ValidationError("template index " + std::to_string(m) + " out of range [0, " +
                            std::to_string(bank.num_templates()) + ")");
    }
  }

  Classifier c;
  c.num_classes = K;
  c.dim = D;
  c.weights.assign(K * D, 0.0);
  c.source = std::move(source);
  std::vector<double> acc(D);
  for (std::size_t k = 0; k < K; ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (auto m : templates) {
      const auto e = bank.embedding(m, k);
      const double n = norm(e);
      for (std::size_t d = 0; d < D; ++d) acc[d] += e[d] / n;
    }
    const double count = static_cast<double>(templates.size());
    for (auto& x : acc) x /= count;
    double scale = 1.0;
    if (opts.renormalize_mean || templates.size() == 1) {
      const double n = norm(acc);
      if (n <= kMinEmbeddingNorm) {
        throw ValidationError("zero-norm mean embedding for class " + std::to_string(k) +
                              " (template embeddings cancel)");
      }
      scale = 1.0 / n;
    }
    for (std::size_t d = 0; d < D; ++d) c.weights[k * D + d] = acc[d] * scale;
  }
  return c;
}

}  // namespace

TextBank::TextBank(std::size_t num_templates, std::size_t num_classes, std::size_t dim, std::vector<double> values)
    : m_(num_templates), k_(num_classes), d_(dim), values_(std::move(values)) {
  if (m_ == 0 || k_ == 0 || d_ == 0) throw ValidationError("text bank extents must be >= 1");
  if (values_.size() != m_ * k_ * d_) throw ValidationError("text bank payload does not match M x K x D");
  for (std::size_t m = 0; m < m_; ++m) {
    for (std::size_t k = 0; k < k_; ++k) {
      const double n = norm(embedding(m, k));
      if (!(n > kMinEmbeddingNorm)) {
        throw ValidationError("text bank embedding (template " + std::to_string(m) + ", class " + std::to_string(k) +
                              ") has zero norm");
      }
    }
  }
}

TextBank TextBank::from_tensor(const TensorFile& t) {
  if (t.rank() != 3) throw ValidationError("text bank tensor must be rank 3 (M, K, D)");
  return TextBank(t.dims[0], t.dims[1], t.dims[2], t.as_f64());
}

TensorFile TextBank::to_tensor_f32() const {
  std::vector<float> f(values_.begin(), values_.end());
  return TensorFile::from_f32({m_, k_, d_}, f);
}

TextBank TextBank::select_classes(std::span<const std::size_t> classes) const {
  std::vector<double> out;
  out.reserve(m_ * classes.size() * d_);
  for (std::size_t m = 0; m < m_; ++m) {
    for (auto k : classes) {
      if (k >= k_) throw ValidationError("class index out of range in select_classes");
      const auto e = embedding(m, k);
      out.insert(out.end(), e.begin(), e.end());
    }
  }
  return TextBank(m_, classes.size(), d_, std::move(out));
}

Classifier build_average_classifier(const TextBank& bank, const ClassifierOptions& opts) {
  std::vector<std::size_t> all(bank.num_templates());
  for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
  return average_rows(bank, std::move(all), opts, AveragedAll{});
}

Classifier build_single_template_classifier(const TextBank& bank, std::size_t template_index) {
  if (template_index >= bank.num_templates()) {
    throw ValidationError("template index " + std::to_string(template_index) + " out of range [0, " +
                          std::to_string(bank.num_templates()) + ")");
  }
  return average_rows(bank, {template_index}, {}, SingleTemplate{template_index});
}

Classifier build_template_subset_classifier(const TextBank& bank, std::span<const std::size_t> templates,
                                            const ClassifierOptions& opts) {
  std::vector<std::size_t> sorted(templates.begin(), templates.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return average_rows(bank, sorted, opts, TemplateSubset{sorted});
}

std::vector<Classifier> build_expert_classifiers(const TextBank& bank,
                                                 std::span<const std::vector<std::size_t>> expert_lists,
                                                 const ClassifierOptions& opts) {
  if (expert_lists.size() != bank.num_classes()) {
    throw ValidationError("expected one expert list per class");
  }
  std::vector<Classifier> out;
  out.reserve(expert_lists.size());
  for (std::size_t k = 0; k < expert_lists.size(); ++k) {
    if (expert_lists[k].empty()) {
      throw ValidationError("empty expert list for class " + std::to_string(k) + "; substitute the fallback first");
    }
    out.push_back(build_template_subset_classifier(bank, expert_lists[k], opts));
  }
  return out;
}

std::vector<Classifier> build_all_single_template_classifiers(const TextBank& bank) {
  std::vector<Classifier> out;
  out.reserve(bank.num_templates());
  for (std::size_t m = 0; m < bank.num_templates(); ++m) out.push_back(build_single_template_classifier(bank, m));
  return out;
}

}  // namespace expertseg
