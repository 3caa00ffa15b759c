#include "expertseg/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>

#include "expertseg/rng.hpp"

namespace expertseg {

void ConfusionMatrix::accumulate(const PredMap& pred, const LabelMap& gt, std::uint16_t ignore_index) {
  if (pred.grid() != gt.grid()) {
    throw ValidationError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                          " does not match ground truth " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < gt.pixels(); ++i) {
    const std::uint16_t g = gt.labels[i];
    if (g == ignore_index) continue;
    const std::uint16_t p = pred.labels[i];
    if (p >= k_) throw ValidationError("prediction " + std::to_string(p) + " out of range [0, K)");
    if (g >= k_) throw ValidationError("ground-truth label " + std::to_string(g) + " out of range [0, K)");
    ++counts_[g * k_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ValidationError("cannot merge confusion matrices of different K");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix accumulate_confusion(const PredMap& pred, const LabelMap& gt, std::size_t num_classes,
                                     std::uint16_t ignore_index) {
  ConfusionMatrix cm(num_classes);
  cm.accumulate(pred, gt, ignore_index);
  return cm;
}

IouResult iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t K = cm.num_classes();
  IouResult r;
  r.iou.assign(K, 0.0);
  r.present.assign(K, 0);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    r.iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
    r.present[k] = 1;
    total += r.iou[k];
    ++present;
  }
  r.miou = present == 0 ? 0.0 : total / static_cast<double>(present);
  return r;
}

TrueExpertTable true_experts_from_iou(std::size_t num_templates, std::size_t num_classes,
                                      std::vector<double> template_iou, std::vector<double> clip_iou,
                                      std::vector<std::uint8_t> present) {
  if (template_iou.size() != num_templates * num_classes || clip_iou.size() != num_classes) {
    throw ValidationError("IoU table shape mismatch");
  }
  TrueExpertTable t;
  t.num_templates = num_templates;
  t.num_classes = num_classes;
  t.template_iou = std::move(template_iou);
  t.clip_iou = std::move(clip_iou);
  t.present = present.empty() ? std::vector<std::uint8_t>(num_classes, 1) : std::move(present);
  t.experts.assign(num_classes, {});
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t m = 0; m < num_templates; ++m) {
      if (t.iou(m, k) > t.clip_iou[k]) t.experts[k].push_back(m);
    }
  }
  return t;
}

QualityReport expert_quality(const ExpertSet& estimated, std::span<const std::vector<std::size_t>> truth) {
  if (truth.size() != estimated.num_classes()) throw ValidationError("expert quality: class counts differ");
  if (estimated.top_n == 0) throw ValidationError("expert quality: N must be >= 1");
  QualityReport r;
  r.top_n = estimated.top_n;
  const std::size_t K = truth.size();
  r.per_class.assign(K, 0.0);
  r.intersections.assign(K, 0);
  r.short_list.assign(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    const std::set<std::size_t> t(truth[k].begin(), truth[k].end());
    std::size_t hit = 0;
    for (auto m : estimated.experts[k]) hit += t.count(m);
    r.intersections[k] = hit;
    r.short_list[k] = estimated.experts[k].size() < estimated.top_n ? 1 : 0;
    r.per_class[k] = 100.0 * static_cast<double>(hit) / static_cast<double>(estimated.top_n);
  }
  r.mean = K == 0 ? 0.0 : std::accumulate(r.per_class.begin(), r.per_class.end(), 0.0) / static_cast<double>(K);
  return r;
}

QualityReport expert_quality(const ExpertSet& estimated, const TrueExpertTable& truth) {
  return expert_quality(estimated, truth.experts);
}

std::size_t oracle_expert_count(double rho, std::size_t top_n) {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(top_n) + 0.5));
}

OracleDraw oracle_ratio_experts(const TrueExpertTable& truth, double rho, std::size_t top_n, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in [0, 1]");
  if (top_n == 0) throw ValidationError("N must be >= 1");
  const std::size_t want_expert = oracle_expert_count(rho, top_n);
  const std::size_t want_other = top_n - want_expert;

  OracleDraw d;
  d.experts.top_n = top_n;
  d.experts.source = "oracle-ratio";
  d.experts.experts.resize(truth.num_classes);
  Rng rng(seed);
  for (std::size_t k = 0; k < truth.num_classes; ++k) {
    const auto& pos = truth.experts[k];
    std::vector<std::size_t> neg;
    for (std::size_t m = 0; m < truth.num_templates; ++m) {
      if (!std::binary_search(pos.begin(), pos.end(), m)) neg.push_back(m);
    }
    if (pos.size() < want_expert || neg.size() < want_other) d.clamped_classes.push_back(k);
    auto picks = rng.sample(pos, want_expert);
    const auto others = rng.sample(neg, want_other);
    picks.insert(picks.end(), others.begin(), others.end());
    d.experts.experts[k] = std::move(picks);
  }
  d.experts.refresh_fallback();
  return d;
}

ExpertSet oracle_best_experts(const TrueExpertTable& truth, std::size_t top_n) {
  if (top_n == 0) throw ValidationError("N must be >= 1");
  ExpertSet e;
  e.top_n = top_n;
  e.source = "oracle-best";
  e.experts.resize(truth.num_classes);
  e.scores.resize(truth.num_classes);
  for (std::size_t k = 0; k < truth.num_classes; ++k) {
    std::vector<std::size_t> order(truth.num_templates);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return truth.iou(a, k) > truth.iou(b, k); });
    order.resize(std::min(top_n, order.size()));
    for (auto m : order) e.scores[k].push_back(truth.iou(m, k));
    e.experts[k] = std::move(order);
  }
  e.refresh_fallback();
  return e;
}

std::vector<double> best_expert_gap(const TrueExpertTable& truth) {
  std::vector<double> gap(truth.num_classes, 0.0);
  for (std::size_t k = 0; k < truth.num_classes; ++k) {
    double best = -1.0;
    for (std::size_t m = 0; m < truth.num_templates; ++m) best = std::max(best, truth.iou(m, k));
    gap[k] = best - truth.clip_iou[k];
  }
  return gap;
}

std::string normalize_class_name(const std::string& name) {
  auto first = std::find_if_not(name.begin(), name.end(), [](unsigned char c) { return std::isspace(c); });
  auto last = std::find_if_not(name.rbegin(), name.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  std::string out = first < last ? std::string(first, last) : std::string{};
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

namespace {

std::set<std::string> name_keys(const ClassNames& c, std::size_t k) {
  std::set<std::string> keys{normalize_class_name(c.names[k])};
  if (auto it = c.aliases.find(c.names[k]); it != c.aliases.end()) {
    for (const auto& a : it->second) keys.insert(normalize_class_name(a));
  }
  return keys;
}

}  // namespace

TransferResult transfer_experts(const ExpertSet& source, const ClassNames& source_classes,
                                const ClassNames& target_classes) {
  if (source_classes.names.size() != source.num_classes()) {
    throw ValidationError("source class names do not match the expert set");
  }
  TransferResult r;
  r.experts = source;
  r.experts.class_names = target_classes.names;
  r.experts.experts.assign(target_classes.names.size(), {});
  r.experts.scores.assign(source.scores.empty() ? 0 : target_classes.names.size(), {});

  std::vector<std::set<std::string>> src_keys;
  for (std::size_t s = 0; s < source_classes.names.size(); ++s) src_keys.push_back(name_keys(source_classes, s));

  for (std::size_t t = 0; t < target_classes.names.size(); ++t) {
    const auto keys = name_keys(target_classes, t);
    std::optional<std::size_t> match;
    for (std::size_t s = 0; s < src_keys.size() && !match; ++s) {
      for (const auto& key : keys) {
        if (src_keys[s].count(key)) {
          match = s;
          break;
        }
      }
    }
    if (match && !source.experts[*match].empty()) {
      r.experts.experts[t] = source.experts[*match];
      if (!source.scores.empty()) r.experts.scores[t] = source.scores[*match];
      r.inherited.push_back(t);
    } else {
      r.fallback.push_back(t);
    }
  }
  r.experts.refresh_fallback();
  return r;
}

}  // namespace expertseg
