#include "expertseg/dense_inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

namespace expertseg {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    auto i0 = static_cast<std::size_t>(s);
    if (i0 > src - 1) i0 = src - 1;
    const std::size_t i1 = std::min(i0 + 1, src - 1);
    taps[i] = {i0, i1, i1 == i0 ? 0.0 : s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

NormalizedFeatures normalize_features(const FeatureMap& features) {
  NormalizedFeatures out;
  out.height = features.height;
  out.width = features.width;
  out.dim = features.dim;
  out.rows.resize(features.pixels() * features.dim);
  for (std::size_t p = 0; p < features.pixels(); ++p) {
    const auto f = features.pixel(p);
    double s = 0.0;
    for (float v : f) s += static_cast<double>(v) * static_cast<double>(v);
    const double n = std::sqrt(s);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw ValidationError("zero-norm or non-finite feature vector at pixel (" + std::to_string(p / features.width) +
                            ", " + std::to_string(p % features.width) + ")");
    }
    double* dst = out.rows.data() + p * features.dim;
    for (std::size_t d = 0; d < features.dim; ++d) dst[d] = static_cast<double>(f[d]) / n;
  }
  return out;
}

DenseMap cosine_logits(const NormalizedFeatures& features, const Classifier& classifier) {
  if (features.dim != classifier.dim) {
    throw ValidationError("feature dim " + std::to_string(features.dim) + " does not match classifier dim " +
                          std::to_string(classifier.dim));
  }
  DenseMap out(features.height, features.width, classifier.num_classes);
  const auto P = static_cast<Eigen::Index>(features.pixels());
  const auto D = static_cast<Eigen::Index>(features.dim);
  const auto K = static_cast<Eigen::Index>(classifier.num_classes);
  Eigen::Map<const RowMatrix> x(features.rows.data(), P, D);
  Eigen::Map<const RowMatrix> w(classifier.weights.data(), K, D);
  Eigen::Map<RowMatrix> logits(out.values.data(), P, K);
  logits.noalias() = x * w.transpose();
  return out;
}

DenseMap cosine_logits(const FeatureMap& features, const Classifier& classifier) {
  return cosine_logits(normalize_features(features), classifier);
}

void softmax_pixel(std::span<const double> logits, double logit_scale, std::span<double> out) {
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logit_scale * (logits[k] - peak));
    total += out[k];
  }
  for (auto& v : out) v /= total;
}

SoftSegMap softmax_map(const DenseMap& logits, double logit_scale) {
  if (!(logit_scale > 0.0)) throw ValidationError("logit_scale must be positive");
  SoftSegMap s{DenseMap(logits.height, logits.width, logits.channels), logit_scale};
  for (std::size_t p = 0; p < logits.pixels(); ++p) softmax_pixel(logits.pixel(p), logit_scale, s.probs.pixel(p));
  return s;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

PredMap argmax_map(const DenseMap& scores) {
  PredMap out(scores.height, scores.width);
  for (std::size_t p = 0; p < scores.pixels(); ++p) {
    out.labels[p] = static_cast<std::uint16_t>(argmax_lowest(scores.pixel(p)));
  }
  return out;
}

std::size_t nearest_source_index(std::size_t i, std::size_t src, std::size_t dst) {
  return std::min(((2 * i + 1) * src) / (2 * dst), src - 1);
}

DenseMap upsample_logits(const DenseMap& logits, GridShape target, UpsampleMode mode) {
  if (target.height < logits.height || target.width < logits.width) {
    throw ValidationError("upsample target must not be smaller than the source grid");
  }
  if (target == logits.grid()) return logits;
  const std::size_t C = logits.channels;
  DenseMap out(target.height, target.width, C);
  if (mode == UpsampleMode::Nearest) {
    for (std::size_t y = 0; y < target.height; ++y) {
      const std::size_t sy = nearest_source_index(y, logits.height, target.height);
      for (std::size_t x = 0; x < target.width; ++x) {
        const std::size_t sx = nearest_source_index(x, logits.width, target.width);
        std::copy_n(logits.pixel(sy * logits.width + sx).data(), C, out.pixel(y * target.width + x).data());
      }
    }
    return out;
  }
  const auto ty = bilinear_taps(logits.height, target.height);
  const auto tx = bilinear_taps(logits.width, target.width);
  for (std::size_t y = 0; y < target.height; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < target.width; ++x) {
      const auto& b = tx[x];
      const auto v00 = logits.pixel(a.i0 * logits.width + b.i0);
      const auto v01 = logits.pixel(a.i0 * logits.width + b.i1);
      const auto v10 = logits.pixel(a.i1 * logits.width + b.i0);
      const auto v11 = logits.pixel(a.i1 * logits.width + b.i1);
      const double w00 = (1.0 - a.w1) * (1.0 - b.w1);
      const double w01 = (1.0 - a.w1) * b.w1;
      const double w10 = a.w1 * (1.0 - b.w1);
      const double w11 = a.w1 * b.w1;
      auto dst = out.pixel(y * target.width + x);
      for (std::size_t c = 0; c < C; ++c) dst[c] = w00 * v00[c] + w01 * v01[c] + w10 * v10[c] + w11 * v11[c];
    }
  }
  return out;
}

DenseMap logits_at(const NormalizedFeatures& features, const Classifier& classifier, Resolution resolution,
                   GridShape label_size, UpsampleMode mode) {
  DenseMap grid = cosine_logits(features, classifier);
  if (resolution == Resolution::Grid || label_size == grid.grid()) return grid;
  return upsample_logits(grid, label_size, mode);
}

}  // namespace expertseg
