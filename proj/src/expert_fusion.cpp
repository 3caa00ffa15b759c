#include "expertseg/expert_fusion.hpp"

#include <algorithm>
#include <limits>
#include <optional>

namespace expertseg {

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::ExpertHighest: return "highest";
    case FusionStrategy::ExpertAverage: return "average";
    case FusionStrategy::ExpertDefault: return "default";
    case FusionStrategy::AverageAll: return "average-all";
  }
  return "?";
}

FusionStrategy parse_strategy(const std::string& s) {
  if (s == "highest") return FusionStrategy::ExpertHighest;
  if (s == "average") return FusionStrategy::ExpertAverage;
  if (s == "default") return FusionStrategy::ExpertDefault;
  if (s == "average-all") return FusionStrategy::AverageAll;
  throw ValidationError("unknown strategy '" + s + "' (expected highest|average|default|average-all)");
}

namespace {

void check_inputs(const NormalizedFeatures& features, std::span<const Classifier> experts, const Classifier* fallback,
                  const FusionConfig& cfg) {
  if (experts.empty()) throw ValidationError("fusion needs at least one expert classifier");
  const std::size_t K = experts.size();
  for (const auto& c : experts) {
    if (c.num_classes != K) throw ValidationError("each expert classifier must have K rows (K = #experts)");
    if (c.dim != features.dim) throw ValidationError("expert classifier dim does not match features");
  }
  if (needs_fallback(cfg.strategy)) {
    if (fallback == nullptr) throw ValidationError("strategy '" + to_string(cfg.strategy) + "' requires a fallback");
    if (fallback->num_classes != K || fallback->dim != features.dim) {
      throw ValidationError("fallback classifier shape does not match experts");
    }
  }
  if (!(cfg.logit_scale > 0.0)) throw ValidationError("logit_scale must be positive");
}

GridShape output_grid(const NormalizedFeatures& features, const FusionConfig& cfg, GridShape label_size) {
  if (cfg.resolution == Resolution::Grid || label_size.pixels() == 0) return features.grid();
  return label_size;
}

// Soft map of one classifier at the output resolution; also reports the bytes of
// the transient grid-level logits when an upsample was needed.
SoftSegMap soft_map(const NormalizedFeatures& features, const Classifier& c, const FusionConfig& cfg, GridShape out,
                    std::size_t* transient_bytes) {
  DenseMap logits = cosine_logits(features, c);
  if (logits.grid() != out) {
    if (transient_bytes) *transient_bytes = std::max(*transient_bytes, logits.values.size() * sizeof(double));
    logits = upsample_logits(logits, out, cfg.upsample);
  }
  for (std::size_t p = 0; p < logits.pixels(); ++p) {
    auto px = logits.pixel(p);
    softmax_pixel(px, cfg.logit_scale, px);
  }
  return {std::move(logits), cfg.logit_scale};
}

std::uint16_t argmax_scaled_sum(std::span<const double> sum, std::size_t count, std::vector<double>& scratch) {
  scratch.resize(sum.size());
  const double n = static_cast<double>(count);
  for (std::size_t j = 0; j < sum.size(); ++j) scratch[j] = sum[j] / n;
  return static_cast<std::uint16_t>(argmax_lowest(scratch));
}

}  // namespace

FusionResult fuse(const NormalizedFeatures& features, std::span<const Classifier> experts,
                  const Classifier* fallback, const FusionConfig& cfg, GridShape label_size) {
  check_inputs(features, experts, fallback, cfg);
  const std::size_t K = experts.size();
  const GridShape out = output_grid(features, cfg, label_size);
  const std::size_t P = out.pixels();

  std::size_t transient = 0;
  std::vector<SoftSegMap> maps;
  maps.reserve(K);
  for (const auto& c : experts) maps.push_back(soft_map(features, c, cfg, out, &transient));
  std::optional<SoftSegMap> fallback_map;
  if (needs_fallback(cfg.strategy)) fallback_map = soft_map(features, *fallback, cfg, out, &transient);

  FusionResult r;
  r.labels = PredMap(out.height, out.width);
  r.stats.pixels = P;
  r.working_bytes = (K + (fallback_map ? 1 : 0)) * P * K * sizeof(double) + transient;

  std::vector<std::size_t> self;
  std::vector<double> sum(K);
  std::vector<double> scratch;
  for (std::size_t p = 0; p < P; ++p) {
    self.clear();
    for (std::size_t k = 0; k < K; ++k) {
      if (argmax_lowest(maps[k].probs.pixel(p)) == k) self.push_back(k);
    }
    if (self.size() >= 2) ++r.stats.conflict_pixels;
    if (self.empty()) ++r.stats.empty_pixels;

    bool use_fallback = false;
    std::uint16_t label = 0;
    switch (cfg.strategy) {
      case FusionStrategy::ExpertHighest: {
        if (self.empty()) {
          use_fallback = true;
          break;
        }
        double best = -1.0;
        for (auto k : self) {
          const double own = maps[k].probs.pixel(p)[k];
          if (own > best) {
            best = own;
            label = static_cast<std::uint16_t>(k);
          }
        }
        break;
      }
      case FusionStrategy::ExpertAverage: {
        if (self.empty()) {
          use_fallback = true;
          break;
        }
        std::fill(sum.begin(), sum.end(), 0.0);
        for (auto k : self) {
          const auto q = maps[k].probs.pixel(p);
          for (std::size_t j = 0; j < K; ++j) sum[j] += q[j];
        }
        label = argmax_scaled_sum(sum, self.size(), scratch);
        break;
      }
      case FusionStrategy::ExpertDefault:
        if (self.size() == 1) {
          label = static_cast<std::uint16_t>(self.front());
        } else {
          use_fallback = true;
        }
        break;
      case FusionStrategy::AverageAll: {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) {
          const auto q = maps[k].probs.pixel(p);
          for (std::size_t j = 0; j < K; ++j) sum[j] += q[j];
        }
        label = argmax_scaled_sum(sum, K, scratch);
        break;
      }
    }
    if (use_fallback) {
      label = static_cast<std::uint16_t>(argmax_lowest(fallback_map->probs.pixel(p)));
      ++r.stats.fallback_pixels;
    }
    r.labels.labels[p] = label;
  }
  return r;
}

FusionResult fuse_streaming(const NormalizedFeatures& features, std::span<const Classifier> experts,
                            const Classifier* fallback, const FusionConfig& cfg, GridShape label_size) {
  check_inputs(features, experts, fallback, cfg);
  const std::size_t K = experts.size();
  const GridShape out = output_grid(features, cfg, label_size);
  const std::size_t P = out.pixels();
  const bool averaging = cfg.strategy == FusionStrategy::ExpertAverage || cfg.strategy == FusionStrategy::AverageAll;

  std::vector<std::uint32_t> self_count(P, 0);
  std::vector<double> best_own(P, -1.0);
  std::vector<std::uint16_t> best_k(P, 0);
  std::vector<double> sum(averaging ? P * K : 0, 0.0);
  std::vector<double> q(K);

  std::size_t transient = 0;
  std::size_t map_bytes = 0;
  for (std::size_t k = 0; k < K; ++k) {
    DenseMap logits = cosine_logits(features, experts[k]);
    if (logits.grid() != out) {
      transient = std::max(transient, logits.values.size() * sizeof(double));
      logits = upsample_logits(logits, out, cfg.upsample);
    }
    map_bytes = std::max(map_bytes, logits.values.size() * sizeof(double));
    for (std::size_t p = 0; p < P; ++p) {
      softmax_pixel(logits.pixel(p), cfg.logit_scale, q);
      const bool is_self = argmax_lowest(q) == k;
      if (is_self) {
        ++self_count[p];
        if (q[k] > best_own[p]) {
          best_own[p] = q[k];
          best_k[p] = static_cast<std::uint16_t>(k);
        }
      }
      if ((cfg.strategy == FusionStrategy::ExpertAverage && is_self) || cfg.strategy == FusionStrategy::AverageAll) {
        double* s = sum.data() + p * K;
        for (std::size_t j = 0; j < K; ++j) s[j] += q[j];
      }
    }
  }

  FusionResult r;
  r.labels = PredMap(out.height, out.width);
  r.stats.pixels = P;

  std::vector<std::uint8_t> wants_fallback(P, 0);
  bool any_fallback = false;
  std::vector<double> scratch;
  for (std::size_t p = 0; p < P; ++p) {
    const std::uint32_t n = self_count[p];
    if (n >= 2) ++r.stats.conflict_pixels;
    if (n == 0) ++r.stats.empty_pixels;
    switch (cfg.strategy) {
      case FusionStrategy::ExpertHighest:
        if (n == 0) wants_fallback[p] = 1;
        else r.labels.labels[p] = best_k[p];
        break;
      case FusionStrategy::ExpertAverage:
        if (n == 0) wants_fallback[p] = 1;
        else r.labels.labels[p] = argmax_scaled_sum({sum.data() + p * K, K}, n, scratch);
        break;
      case FusionStrategy::ExpertDefault:
        if (n == 1) r.labels.labels[p] = best_k[p];
        else wants_fallback[p] = 1;
        break;
      case FusionStrategy::AverageAll:
        r.labels.labels[p] = argmax_scaled_sum({sum.data() + p * K, K}, K, scratch);
        break;
    }
    any_fallback = any_fallback || wants_fallback[p];
  }

  if (any_fallback) {
    DenseMap logits = cosine_logits(features, *fallback);
    if (logits.grid() != out) {
      transient = std::max(transient, logits.values.size() * sizeof(double));
      logits = upsample_logits(logits, out, cfg.upsample);
    }
    map_bytes = std::max(map_bytes, logits.values.size() * sizeof(double));
    for (std::size_t p = 0; p < P; ++p) {
      if (!wants_fallback[p]) continue;
      softmax_pixel(logits.pixel(p), cfg.logit_scale, q);
      r.labels.labels[p] = static_cast<std::uint16_t>(argmax_lowest(q));
      ++r.stats.fallback_pixels;
    }
  }

  r.working_bytes = map_bytes + transient + sum.size() * sizeof(double) +
                    P * (sizeof(std::uint32_t) + sizeof(double) + sizeof(std::uint16_t) + sizeof(std::uint8_t)) +
                    q.size() * sizeof(double);
  return r;
}

std::vector<Classifier> expert_classifiers_with_fallback(const TextBank& bank, const ExpertSet& experts,
                                                         const Classifier& fallback, const ClassifierOptions& opts) {
  if (experts.num_classes() != bank.num_classes()) {
    throw ValidationError("expert set has " + std::to_string(experts.num_classes()) + " classes, bank has " +
                          std::to_string(bank.num_classes()));
  }
  std::vector<Classifier> out;
  out.reserve(bank.num_classes());
  for (std::size_t k = 0; k < bank.num_classes(); ++k) {
    const bool flagged = std::find(experts.fallback_classes.begin(), experts.fallback_classes.end(), k) !=
                         experts.fallback_classes.end();
    if (flagged || experts.experts[k].empty()) {
      out.push_back(fallback);
    } else {
      out.push_back(build_template_subset_classifier(bank, experts.experts[k], opts));
    }
  }
  return out;
}

}  // namespace expertseg
