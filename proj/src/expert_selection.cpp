#include "expertseg/expert_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace expertseg {

std::string to_string(ManoNormalizer n) {
  switch (n) {
    case ManoNormalizer::Softmax: return "softmax";
    case ManoNormalizer::Taylor: return "taylor";
    case ManoNormalizer::Gated: return "gated";
  }
  return "?";
}

ManoNormalizer parse_mano_normalizer(const std::string& s) {
  if (s == "softmax") return ManoNormalizer::Softmax;
  if (s == "taylor") return ManoNormalizer::Taylor;
  if (s == "gated") return ManoNormalizer::Gated;
  throw ValidationError("unknown MaNo normalizer '" + s + "' (expected softmax|taylor|gated)");
}

double entropy(std::span<const double> q) {
  double h = 0.0;
  for (double v : q) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

namespace {

// sum_j |normalized_j|^p / K for one pixel.
double mano_statistic(std::span<const double> logits, std::span<const double> q, double scale, double p,
                      bool taylor, std::vector<double>& scratch) {
  const std::size_t K = q.size();
  std::span<const double> normalized = q;
  if (taylor) {
    scratch.resize(K);
    double total = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const double z = scale * logits[j];
      scratch[j] = 1.0 + z + 0.5 * z * z;
      total += scratch[j];
    }
    for (auto& v : scratch) v /= total;
    normalized = scratch;
  }
  double s = 0.0;
  for (double v : normalized) s += std::pow(std::abs(v), p);
  return s / static_cast<double>(K);
}

// Mean KL(uniform || softmax(scale * logits)) over all pixels of one map.
double uniformity_gap(const DenseMap& logits, double scale) {
  const std::size_t K = logits.channels;
  double total = 0.0;
  for (std::size_t p = 0; p < logits.pixels(); ++p) {
    const auto z = logits.pixel(p);
    const double peak = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(scale * (v - peak));
    lse = std::log(lse);
    double mean_log_q = 0.0;
    for (double v : z) mean_log_q += scale * (v - peak) - lse;
    total += -mean_log_q / static_cast<double>(K) - std::log(static_cast<double>(K));
  }
  return total / static_cast<double>(logits.pixels());
}

}  // namespace

MetricAccumulator::MetricAccumulator(SelectionConfig config, std::size_t num_templates, std::size_t num_classes,
                                     std::size_t dim)
    : config_(config), m_(num_templates), k_(num_classes), d_(dim) {
  if (!(config_.logit_scale > 0.0)) throw ValidationError("logit_scale must be positive");
  if (config_.metric == MetricKind::MaNo && !(config_.mano_p > 0.0)) throw ValidationError("MaNo p must be > 0");
  sum_.assign(m_ * k_, 0.0);
  count_.assign(m_ * k_, 0);
  image_mean_sum_.assign(m_ * k_, 0.0);
  image_hits_.assign(m_ * k_, 0);
  class_means_.assign(config_.metric == MetricKind::ITI ? m_ * k_ : 0, {});
}

void MetricAccumulator::accumulate_image(const TextBank& bank, const FeatureMap& features, GridShape label_size) {
  const auto templates = build_all_single_template_classifiers(bank);
  accumulate_image(templates, normalize_features(features), label_size);
}

void MetricAccumulator::accumulate_image(std::span<const Classifier> templates, const NormalizedFeatures& features,
                                         GridShape label_size) {
  if (templates.size() != m_) throw ValidationError("expected one classifier per template");
  if (features.dim != d_) throw ValidationError("feature dim does not match accumulator dim");
  if (config_.resolution == Resolution::Label && label_size.pixels() == 0) label_size = features.grid();

  const double scale = config_.logit_scale;
  const bool per_image = config_.pooling == Pooling::PerImage;
  std::vector<double> q(k_);
  std::vector<double> scratch;
  std::vector<double> img_sum(k_);
  std::vector<std::uint64_t> img_count(k_);
  std::vector<double> feat_sum;  // ITI: K x D

  for (std::size_t m = 0; m < m_; ++m) {
    const Classifier& c = templates[m];
    if (c.num_classes != k_) throw ValidationError("classifier K does not match accumulator K");
    const DenseMap logits = logits_at(features, c, config_.resolution, label_size, config_.upsample);
    const GridShape out = logits.grid();
    const bool resampled = out != features.grid();

    bool taylor = config_.mano_normalizer == ManoNormalizer::Taylor;
    if (config_.metric == MetricKind::MaNo && config_.mano_normalizer == ManoNormalizer::Gated) {
      taylor = uniformity_gap(logits, scale) > config_.mano_gate_threshold;
    }
    std::fill(img_sum.begin(), img_sum.end(), 0.0);
    std::fill(img_count.begin(), img_count.end(), 0);
    if (config_.metric == MetricKind::ITI) feat_sum.assign(k_ * d_, 0.0);

    for (std::size_t p = 0; p < logits.pixels(); ++p) {
      const auto z = logits.pixel(p);
      softmax_pixel(z, scale, q);
      const std::size_t k = argmax_lowest(q);
      double stat = 0.0;
      switch (config_.metric) {
        case MetricKind::Entropy: stat = entropy(q); break;
        case MetricKind::AvgProbability: stat = q[k]; break;
        case MetricKind::MaNo: stat = mano_statistic(z, q, scale, config_.mano_p, taylor, scratch); break;
        case MetricKind::ITI: {
          std::size_t src = p;
          if (resampled) {
            const std::size_t sy = nearest_source_index(p / out.width, features.height, out.height);
            const std::size_t sx = nearest_source_index(p % out.width, features.width, out.width);
            src = sy * features.width + sx;
          }
          const auto f = features.pixel(src);
          double* dst = feat_sum.data() + k * d_;
          for (std::size_t d = 0; d < d_; ++d) dst[d] += f[d];
          break;
        }
      }
      sum_[m * k_ + k] += stat;
      ++count_[m * k_ + k];
      img_sum[k] += stat;
      ++img_count[k];
    }

    for (std::size_t k = 0; k < k_; ++k) {
      if (img_count[k] == 0) continue;
      if (per_image) {
        image_mean_sum_[m * k_ + k] += img_sum[k] / static_cast<double>(img_count[k]);
        ++image_hits_[m * k_ + k];
      }
      if (config_.metric == MetricKind::ITI) {
        auto& list = class_means_[m * k_ + k];
        const double n = static_cast<double>(img_count[k]);
        for (std::size_t d = 0; d < d_; ++d) list.push_back(feat_sum[k * d_ + d] / n);
      }
    }
  }
  ++images_;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  if (!(config_ == other.config_) || m_ != other.m_ || k_ != other.k_ || d_ != other.d_) {
    throw ValidationError("config mismatch: cannot merge accumulators with different settings");
  }
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    sum_[i] += other.sum_[i];
    count_[i] += other.count_[i];
    image_mean_sum_[i] += other.image_mean_sum_[i];
    image_hits_[i] += other.image_hits_[i];
  }
  for (std::size_t i = 0; i < class_means_.size(); ++i) {
    class_means_[i].insert(class_means_[i].end(), other.class_means_[i].begin(), other.class_means_[i].end());
  }
  images_ += other.images_;
}

MetricAccumulator merge(const MetricAccumulator& a, const MetricAccumulator& b) {
  MetricAccumulator out = a;
  out.merge(b);
  return out;
}

ScoreTable MetricAccumulator::finalize() const {
  ScoreTable t;
  t.num_templates = m_;
  t.num_classes = k_;
  t.metric = config_.metric;
  t.scores.assign(m_ * k_, std::numeric_limits<double>::quiet_NaN());
  t.valid.assign(m_ * k_, 0);
  t.counts = count_;

  if (config_.metric != MetricKind::ITI) {
    const bool per_image = config_.pooling == Pooling::PerImage;
    for (std::size_t i = 0; i < m_ * k_; ++i) {
      if (count_[i] == 0) continue;
      double s = per_image ? image_mean_sum_[i] / static_cast<double>(image_hits_[i])
                           : sum_[i] / static_cast<double>(count_[i]);
      if (config_.metric == MetricKind::MaNo) s = std::pow(s, 1.0 / config_.mano_p);
      t.scores[i] = s;
      t.valid[i] = 1;
    }
    return t;
  }

  // ITI: centroid of per-image class means; intra = mean squared distance of the
  // per-image means to it; inter = mean squared distance to the other classes' centroids.
  std::vector<double> centroids(k_ * d_);
  for (std::size_t m = 0; m < m_; ++m) {
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (std::size_t k = 0; k < k_; ++k) {
      const auto& list = class_means_[m * k_ + k];
      const std::size_t n = list.size() / d_;
      if (n == 0) continue;
      double* c = centroids.data() + k * d_;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < d_; ++d) c[d] += list[i * d_ + d];
      for (std::size_t d = 0; d < d_; ++d) c[d] /= static_cast<double>(n);
    }
    for (std::size_t k = 0; k < k_; ++k) {
      const auto& list = class_means_[m * k_ + k];
      const std::size_t n = list.size() / d_;
      if (count_[m * k_ + k] == 0 || n == 0) continue;
      const double* c = centroids.data() + k * d_;
      double intra = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double dist = 0.0;
        for (std::size_t d = 0; d < d_; ++d) dist += (c[d] - list[i * d_ + d]) * (c[d] - list[i * d_ + d]);
        intra += dist;
      }
      intra /= static_cast<double>(n);
      double inter = 0.0;
      std::size_t others = 0;
      for (std::size_t j = 0; j < k_; ++j) {
        if (j == k || class_means_[m * k_ + j].empty()) continue;
        const double* o = centroids.data() + j * d_;
        double dist = 0.0;
        for (std::size_t d = 0; d < d_; ++d) dist += (c[d] - o[d]) * (c[d] - o[d]);
        inter += dist;
        ++others;
      }
      if (others > 0) inter /= static_cast<double>(others);
      t.scores[m * k_ + k] = intra > 0.0 ? inter / intra : std::numeric_limits<double>::infinity();
      t.valid[m * k_ + k] = 1;
    }
  }
  return t;
}

ExpertSet select_experts(const ScoreTable& table, std::size_t top_n) {
  if (top_n == 0) throw ValidationError("N must be >= 1");
  const bool ascending = lower_is_better(table.metric);
  auto better = [ascending](double a, double b) { return ascending ? a < b : a > b; };

  ExpertSet e;
  e.metric = table.metric;
  e.top_n = top_n;
  e.experts.resize(table.num_classes);
  e.scores.resize(table.num_classes);
  for (std::size_t k = 0; k < table.num_classes; ++k) {
    // Bounded insertion: walking m upward and displacing only on a strictly
    // better score keeps ties in ascending template order.
    std::vector<std::pair<double, std::size_t>> top;
    top.reserve(top_n + 1);
    for (std::size_t m = 0; m < table.num_templates; ++m) {
      if (!table.is_valid(m, k)) continue;
      const double s = table.score(m, k);
      if (top.size() == top_n && !better(s, top.back().first)) continue;
      auto pos = std::find_if(top.begin(), top.end(), [&](const auto& e2) { return better(s, e2.first); });
      top.insert(pos, {s, m});
      if (top.size() > top_n) top.pop_back();
    }
    for (const auto& [s, m] : top) {
      e.experts[k].push_back(m);
      e.scores[k].push_back(s);
    }
  }
  e.refresh_fallback();
  return e;
}

}  // namespace expertseg
