#include "expertseg/expert_set.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace expertseg {
using nlohmann::json;

std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::Entropy: return "entropy";
    case MetricKind::AvgProbability: return "avgprob";
    case MetricKind::MaNo: return "mano";
    case MetricKind::ITI: return "iti";
  }
  return "?";
}

MetricKind parse_metric(const std::string& s) {
  if (s == "entropy") return MetricKind::Entropy;
  if (s == "avgprob") return MetricKind::AvgProbability;
  if (s == "mano") return MetricKind::MaNo;
  if (s == "iti") return MetricKind::ITI;
  throw ValidationError("unknown metric '" + s + "' (expected entropy|avgprob|mano|iti)");
}

std::string to_string(Pooling p) { return p == Pooling::Pixels ? "pixels" : "per-image"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "pixels") return Pooling::Pixels;
  if (s == "per-image") return Pooling::PerImage;
  throw ValidationError("unknown pooling '" + s + "' (expected pixels|per-image)");
}

void ExpertSet::refresh_fallback() {
  fallback_classes.clear();
  for (std::size_t k = 0; k < experts.size(); ++k) {
    if (experts[k].empty()) fallback_classes.push_back(k);
  }
}

json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double json_to_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ValidationError("expected a number");
}

json to_json(const ExpertSet& e) {
  json j;
  j["metric"] = to_string(e.metric);
  j["N"] = e.top_n;
  j["logit_scale"] = e.logit_scale;
  j["resolution"] = to_string(e.resolution);
  j["pooling"] = to_string(e.pooling);
  j["source"] = e.source;
  j["num_classes"] = e.experts.size();
  if (!e.class_names.empty()) j["class_names"] = e.class_names;
  j["fallback_classes"] = e.fallback_classes;
  json experts = json::object();
  json scores = json::object();
  for (std::size_t k = 0; k < e.experts.size(); ++k) {
    experts[std::to_string(k)] = e.experts[k];
    if (k < e.scores.size()) {
      json row = json::array();
      for (double s : e.scores[k]) row.push_back(json_number(s));
      scores[std::to_string(k)] = std::move(row);
    }
  }
  j["experts"] = std::move(experts);
  j["scores"] = std::move(scores);
  return j;
}

ExpertSet expert_set_from_json(const json& j) {
  try {
    ExpertSet e;
    e.metric = parse_metric(j.at("metric").get<std::string>());
    e.top_n = j.at("N").get<std::size_t>();
    e.logit_scale = j.at("logit_scale").get<double>();
    e.resolution = parse_resolution(j.at("resolution").get<std::string>());
    e.pooling = parse_pooling(j.value("pooling", std::string("pixels")));
    e.source = j.value("source", std::string{});
    if (j.contains("class_names")) e.class_names = j.at("class_names").get<std::vector<std::string>>();
    const auto& experts = j.at("experts");
    std::size_t K = j.value("num_classes", experts.size());
    if (!e.class_names.empty() && e.class_names.size() != K) {
      throw ValidationError("class_names length does not match num_classes");
    }
    e.experts.assign(K, {});
    for (const auto& [key, list] : experts.items()) {
      const std::size_t k = std::stoul(key);
      if (k >= K) throw ValidationError("expert class index " + key + " out of range");
      e.experts[k] = list.get<std::vector<std::size_t>>();
    }
    if (auto it = j.find("scores"); it != j.end() && !it->empty()) {
      e.scores.assign(K, {});
      for (const auto& [key, list] : it->items()) {
        const std::size_t k = std::stoul(key);
        if (k >= K) throw ValidationError("score class index " + key + " out of range");
        for (const auto& v : list) e.scores[k].push_back(json_to_double(v));
      }
    }
    e.refresh_fallback();
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed expert set: ") + ex.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError("malformed expert set: non-integer class key");
  }
}

void save_expert_set(const std::filesystem::path& path, const ExpertSet& e) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json(e).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ExpertSet load_expert_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ValidationError(path.string() + ": invalid JSON: " + ex.what());
  }
  return expert_set_from_json(j);
}

}  // namespace expertseg
