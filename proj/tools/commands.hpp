#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expertseg/common.hpp"
#include "expertseg/expert_fusion.hpp"
#include "expertseg/expert_set.hpp"

namespace expertseg::cli {

struct RunConfig {
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> experts;
  MetricKind metric = MetricKind::Entropy;
  std::size_t top_n = 4;
  FusionStrategy strategy = FusionStrategy::ExpertHighest;
  double logit_scale = 100.0;
  std::optional<std::size_t> subsample;
  std::uint64_t seed = 0;
  /// Resolution of selection statistics (select, analyze) or of evaluation (eval, oracle).
  std::optional<Resolution> resolution;
  std::size_t threads = 0;
  std::filesystem::path out = ".";
};

void validate(const RunConfig& cfg);

/// Writes <out>/experts.json.
nlohmann::json cmd_select(const RunConfig& cfg);

/// Writes <out>/report.json with the baseline and, given --experts, the fused result.
nlohmann::json cmd_eval(const RunConfig& cfg);

struct OracleOptions {
  std::string mode = "ratio";  // ratio | best
  std::vector<double> rhos{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t seeds = 10;
};

/// Writes <out>/report.json and <out>/oracle.csv.
nlohmann::json cmd_oracle(const RunConfig& cfg, const OracleOptions& opts);

/// Writes <out>/scatter.csv, <out>/quality.csv and <out>/analysis.json.
nlohmann::json cmd_analyze(const RunConfig& cfg);

/// Generates a synthetic dataset into out_dir. An empty spec_path uses the defaults.
nlohmann::json cmd_synth(const std::optional<std::filesystem::path>& spec_path, const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> seed = std::nullopt);

/// Parses argv and dispatches. Returns 0 on success, 2 on validation errors, 3 on I/O errors.
int run(int argc, char** argv);

}  // namespace expertseg::cli
