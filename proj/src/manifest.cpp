#include "expertseg/manifest.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "expertseg/tensor_store.hpp"

namespace expertseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(where + ": missing field '" + key + "'");
  return *it;
}

GridShape parse_grid(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned()) {
    throw ValidationError(where + ": expected [height, width]");
  }
  GridShape g{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
  if (g.height == 0 || g.width == 0) throw ValidationError(where + ": grid extents must be >= 1");
  return g;
}

std::vector<std::string> parse_string_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected a list of strings");
  std::vector<std::string> out;
  for (const auto& s : j) {
    if (!s.is_string()) throw ValidationError(where + ": expected a list of strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string portable(const fs::path& p, const fs::path& base) {
  if (!base.empty()) {
    const auto rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.generic_string();
}

TensorHeader checked_header(const fs::path& p, const std::string& where) {
  if (!fs::exists(p)) throw ValidationError(where + ": dangling file reference " + p.string());
  return read_tensor_header(p);
}

}  // namespace

bool DatasetManifest::fully_labeled() const {
  if (items.empty()) return false;
  for (const auto& it : items) {
    if (!it.label_path) return false;
  }
  return true;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  const std::string where = path.string();
  if (!doc.is_object()) throw ValidationError(where + ": manifest must be a JSON object");

  DatasetManifest m;
  m.base_dir = path.parent_path();
  m.name = doc.value("name", path.stem().string());
  m.method = doc.value("method", std::string{});
  m.class_names = parse_string_list(require(doc, "class_names", where), where + ".class_names");
  m.template_strings = parse_string_list(require(doc, "template_strings", where), where + ".template_strings");
  if (m.class_names.size() < 2) throw ValidationError(where + ": need at least 2 classes");
  if (m.template_strings.empty()) throw ValidationError(where + ": need at least 1 template");
  if (auto it = doc.find("ignore_index"); it != doc.end()) {
    if (!it->is_number_unsigned() || it->get<std::uint64_t>() > 65535) {
      throw ValidationError(where + ": ignore_index must be an integer in [0, 65535]");
    }
    m.ignore_index = it->get<std::uint16_t>();
  }
  if (m.ignore_index < m.class_names.size()) {
    throw ValidationError(where + ": ignore_index collides with a class index");
  }
  if (auto it = doc.find("class_aliases"); it != doc.end()) {
    if (!it->is_object()) throw ValidationError(where + ": class_aliases must be an object");
    for (const auto& [name, aliases] : it->items()) {
      m.class_aliases[name] = parse_string_list(aliases, where + ".class_aliases");
    }
  }

  const std::size_t K = m.class_names.size();
  const std::size_t M = m.template_strings.size();
  m.text_bank_path = resolve(m.base_dir, require(doc, "text_bank", where).get<std::string>());
  const auto bank = checked_header(m.text_bank_path, where + ".text_bank");
  if (bank.dims.size() != 3 || bank.dims[0] != M || bank.dims[1] != K) {
    throw ValidationError(where + ": text bank must have shape (M=" + std::to_string(M) + ", K=" +
                          std::to_string(K) + ", D)");
  }
  if (bank.dtype != DType::F32 && bank.dtype != DType::F64) {
    throw ValidationError(where + ": text bank must be f32 or f64");
  }
  m.feature_dim = bank.dims[2];
  if (auto it = doc.find("feature_dim"); it != doc.end() && it->get<std::size_t>() != m.feature_dim) {
    throw ValidationError(where + ": feature_dim disagrees with text bank D");
  }

  const auto& items = require(doc, "items", where);
  if (!items.is_array()) throw ValidationError(where + ": items must be a list");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& j = items[i];
    const std::string iw = where + ".items[" + std::to_string(i) + "]";
    ManifestItem item;
    item.id = require(j, "id", iw).get<std::string>();
    if (!ids.insert(item.id).second) throw ValidationError(iw + ": duplicate item id '" + item.id + "'");
    item.feature_path = resolve(m.base_dir, require(j, "feature_path", iw).get<std::string>());
    item.feature_grid = parse_grid(require(j, "feature_grid", iw), iw + ".feature_grid");
    item.label_size = parse_grid(require(j, "label_size", iw), iw + ".label_size");
    if (item.label_size.height < item.feature_grid.height || item.label_size.width < item.feature_grid.width) {
      throw ValidationError(iw + ": label_size must not be smaller than feature_grid");
    }

    const auto fh = checked_header(item.feature_path, iw + ".feature_path");
    if (fh.dtype != DType::F32 && fh.dtype != DType::F64) throw ValidationError(iw + ": features must be f32 or f64");
    if (fh.dims.size() != 3 || fh.dims[0] != item.feature_grid.height || fh.dims[1] != item.feature_grid.width) {
      throw ValidationError(iw + ": feature tensor dims do not match feature_grid");
    }
    if (fh.dims[2] != m.feature_dim) throw ValidationError(iw + ": feature D differs from text bank D");

    if (auto lp = j.find("label_path"); lp != j.end() && !lp->is_null()) {
      item.label_path = resolve(m.base_dir, lp->get<std::string>());
      const auto lh = checked_header(*item.label_path, iw + ".label_path");
      if (lh.dtype != DType::U8 && lh.dtype != DType::U16) throw ValidationError(iw + ": labels must be u8 or u16");
      if (lh.dims.size() != 2 || lh.dims[0] != item.label_size.height || lh.dims[1] != item.label_size.width) {
        throw ValidationError(iw + ": label tensor dims do not match label_size");
      }
    }
    m.items.push_back(std::move(item));
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  const fs::path base = path.parent_path();
  json doc;
  doc["name"] = m.name;
  if (!m.method.empty()) doc["method"] = m.method;
  doc["class_names"] = m.class_names;
  doc["template_strings"] = m.template_strings;
  doc["ignore_index"] = m.ignore_index;
  doc["text_bank"] = portable(m.text_bank_path, base);
  doc["feature_dim"] = m.feature_dim;
  if (!m.class_aliases.empty()) doc["class_aliases"] = m.class_aliases;
  json items = json::array();
  for (const auto& it : m.items) {
    json j;
    j["id"] = it.id;
    j["feature_path"] = portable(it.feature_path, base);
    if (it.label_path) j["label_path"] = portable(*it.label_path, base);
    j["feature_grid"] = {it.feature_grid.height, it.feature_grid.width};
    j["label_size"] = {it.label_size.height, it.label_size.width};
    items.push_back(std::move(j));
  }
  doc["items"] = std::move(items);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureMap load_features(const ManifestItem& item) {
  const TensorFile t = read_tensor(item.feature_path);
  if (t.rank() != 3) throw ValidationError(item.feature_path.string() + ": features must be rank 3");
  FeatureMap f;
  f.height = t.dims[0];
  f.width = t.dims[1];
  f.dim = t.dims[2];
  if (t.dtype == DType::F32) {
    f.values = t.to_f32();
  } else {
    const auto d = t.as_f64();
    f.values.assign(d.begin(), d.end());
  }
  return f;
}

LabelMap load_labels(const ManifestItem& item) {
  if (!item.label_path) throw ValidationError("item '" + item.id + "' has no labels");
  const TensorFile t = read_tensor(*item.label_path);
  if (t.rank() != 2) throw ValidationError(item.label_path->string() + ": labels must be rank 2");
  LabelMap l;
  l.height = t.dims[0];
  l.width = t.dims[1];
  l.labels = t.as_labels();
  return l;
}

}  // namespace expertseg
