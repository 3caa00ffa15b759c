#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expertseg/common.hpp"

namespace expertseg {

enum class MetricKind { Entropy, AvgProbability, MaNo, ITI };

std::string to_string(MetricKind m);
MetricKind parse_metric(const std::string& s);
/// Entropy ranks ascending (lower is better); the other metrics rank descending.
inline bool lower_is_better(MetricKind m) { return m == MetricKind::Entropy; }

enum class Pooling { Pixels, PerImage };
std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

/// Per-class estimated expert templates plus the settings that produced them.
struct ExpertSet {
  MetricKind metric = MetricKind::Entropy;
  std::size_t top_n = 4;
  double logit_scale = 100.0;
  Resolution resolution = Resolution::Grid;
  Pooling pooling = Pooling::Pixels;
  std::string source;                    // dataset name or "oracle-..." tag
  std::vector<std::string> class_names;  // may be empty
  std::vector<std::vector<std::size_t>> experts;  // per class, best first
  std::vector<std::vector<double>> scores;        // parallel to experts (may be empty)
  std::vector<std::size_t> fallback_classes;      // classes with no expert templates

  [[nodiscard]] std::size_t num_classes() const noexcept { return experts.size(); }
  /// Recomputes fallback_classes as the classes with an empty expert list.
  void refresh_fallback();
};

nlohmann::json to_json(const ExpertSet& e);
ExpertSet expert_set_from_json(const nlohmann::json& j);
void save_expert_set(const std::filesystem::path& path, const ExpertSet& e);
ExpertSet load_expert_set(const std::filesystem::path& path);

/// JSON number, or the strings "inf"/"-inf"/"nan" for non-finite values.
nlohmann::json json_number(double v);
double json_to_double(const nlohmann::json& j);

}  // namespace expertseg
