#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "expertseg/classifier_bank.hpp"
#include "expertseg/evaluation.hpp"
#include "expertseg/expert_fusion.hpp"
#include "expertseg/expert_selection.hpp"
#include "expertseg/manifest.hpp"

namespace expertseg {

struct Dataset {
  DatasetManifest manifest;
  TextBank bank;

  [[nodiscard]] std::size_t size() const noexcept { return manifest.items.size(); }
  [[nodiscard]] ClassNames class_names() const { return {manifest.class_names, manifest.class_aliases}; }
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// 0 means "all available cores".
std::size_t resolve_threads(std::size_t requested);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Ascending item indices: all of them when count is empty or >= size, else a
/// seeded uniform sample of `count` distinct items.
std::vector<std::size_t> subsample_items(std::size_t size, std::optional<std::size_t> count, std::uint64_t seed);

/// Per-image accumulators merged in item order, so the result does not depend on threads.
MetricAccumulator accumulate_selection(const Dataset& ds, const SelectionConfig& cfg,
                                       std::span<const std::size_t> items, std::size_t threads = 0);

ExpertSet run_selection(const Dataset& ds, const SelectionConfig& cfg, std::size_t top_n,
                        std::span<const std::size_t> items, std::size_t threads = 0);

struct EvalOptions {
  Resolution resolution = Resolution::Label;
  UpsampleMode upsample = UpsampleMode::Bilinear;
  std::size_t threads = 0;
};

/// Confusion of a single classifier (argmax of cosine logits) over all labeled items.
ConfusionMatrix evaluate_classifier(const Dataset& ds, const Classifier& classifier, const EvalOptions& opts = {});

struct TemplateEvaluation {
  ConfusionMatrix clip;                    // template-averaged classifier
  std::vector<ConfusionMatrix> templates;  // one per single-template classifier
};

TemplateEvaluation evaluate_templates(const Dataset& ds, const EvalOptions& opts = {});

/// Class-expert ground truth from labels: template IoU strictly above the averaged classifier's.
TrueExpertTable true_experts(const TemplateEvaluation& eval);
TrueExpertTable true_experts(const Dataset& ds, const EvalOptions& opts = {});

struct FusionEvaluation {
  ConfusionMatrix confusion;
  FallbackStats stats;
  std::size_t peak_working_bytes = 0;
};

/// Fuses per-class expert classifiers (classes without experts use the averaged
/// classifier as their expert) and accumulates over all labeled items.
FusionEvaluation evaluate_fusion(const Dataset& ds, const ExpertSet& experts, FusionStrategy strategy,
                                 double logit_scale, const EvalOptions& opts = {}, bool streaming = true);

/// Maps an ExpertSet onto the dataset's classes. Identical class lists map one
/// to one; otherwise classes are matched by normalized name and aliases.
TransferResult align_experts(const ExpertSet& experts, const Dataset& ds);

}  // namespace expertseg
