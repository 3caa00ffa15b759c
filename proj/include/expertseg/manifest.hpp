#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "expertseg/common.hpp"

namespace expertseg {

struct ManifestItem {
  std::string id;
  std::filesystem::path feature_path;               // resolved (absolute or cwd-relative)
  std::optional<std::filesystem::path> label_path;  // resolved
  GridShape feature_grid;
  GridShape label_size;
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> class_names;
  std::vector<std::string> template_strings;
  std::uint16_t ignore_index = 255;
  std::filesystem::path text_bank_path;
  std::size_t feature_dim = 0;
  std::vector<ManifestItem> items;
  /// Optional extra names per class, used only for cross-dataset class matching.
  std::map<std::string, std::vector<std::string>> class_aliases;
  std::string method;
  std::filesystem::path base_dir;

  [[nodiscard]] std::size_t num_classes() const noexcept { return class_names.size(); }
  [[nodiscard]] std::size_t num_templates() const noexcept { return template_strings.size(); }
  [[nodiscard]] bool fully_labeled() const;
};

/// Parses and eagerly validates a manifest: schema, K >= 2, M >= 1, unique ids,
/// and the header of every referenced tensor (existence, dtype, dims, shared D).
/// Relative paths resolve against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes a manifest with paths expressed relative to the manifest's directory
/// whenever they live under it.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

FeatureMap load_features(const ManifestItem& item);
LabelMap load_labels(const ManifestItem& item);

}  // namespace expertseg
