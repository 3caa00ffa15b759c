#include "expertseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "expertseg/rng.hpp"
#include "expertseg/tensor_store.hpp"

namespace expertseg {

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  ds.bank = TextBank::from_tensor(read_tensor(ds.manifest.text_bank_path));
  return ds;
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(resolve_threads(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> subsample_items(std::size_t size, std::optional<std::size_t> count, std::uint64_t seed) {
  std::vector<std::size_t> all(size);
  std::iota(all.begin(), all.end(), 0);
  if (!count || *count >= size) return all;
  if (*count == 0) throw ValidationError("subsample must be >= 1");
  Rng rng(seed);
  auto picked = rng.sample(all, *count);
  std::sort(picked.begin(), picked.end());
  return picked;
}

namespace {

void require_nonempty(std::span<const std::size_t> items) {
  if (items.empty()) throw ValidationError("empty dataset: no images to process");
}

const ManifestItem& labeled_item(const Dataset& ds, std::size_t i) {
  const auto& item = ds.manifest.items[i];
  if (!item.label_path) throw ValidationError("missing labels for item '" + item.id + "'");
  return item;
}

std::vector<std::size_t> all_items(const Dataset& ds) {
  std::vector<std::size_t> v(ds.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

PredMap predict(const NormalizedFeatures& nf, const Classifier& c, const ManifestItem& item, const EvalOptions& opts) {
  return argmax_map(logits_at(nf, c, opts.resolution, item.label_size, opts.upsample));
}

// Ground truth at the prediction's resolution (labels are nearest-sampled for grid evaluation).
LabelMap truth_for(const LabelMap& labels, GridShape pred_grid) {
  if (labels.grid() == pred_grid) return labels;
  LabelMap out(pred_grid.height, pred_grid.width);
  for (std::size_t y = 0; y < pred_grid.height; ++y) {
    const std::size_t sy = nearest_source_index(y, labels.height, pred_grid.height);
    for (std::size_t x = 0; x < pred_grid.width; ++x) {
      const std::size_t sx = nearest_source_index(x, labels.width, pred_grid.width);
      out.labels[y * pred_grid.width + x] = labels.labels[sy * labels.width + sx];
    }
  }
  return out;
}

}  // namespace

MetricAccumulator accumulate_selection(const Dataset& ds, const SelectionConfig& cfg,
                                       std::span<const std::size_t> items, std::size_t threads) {
  require_nonempty(items);
  const auto templates = build_all_single_template_classifiers(ds.bank);
  const std::size_t M = ds.bank.num_templates(), K = ds.bank.num_classes(), D = ds.bank.dim();
  std::vector<MetricAccumulator> partial(items.size());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto& item = ds.manifest.items.at(items[i]);
    MetricAccumulator acc(cfg, M, K, D);
    acc.accumulate_image(templates, normalize_features(load_features(item)), item.label_size);
    partial[i] = std::move(acc);
  });
  MetricAccumulator total(cfg, M, K, D);
  for (const auto& p : partial) total.merge(p);
  return total;
}

ExpertSet run_selection(const Dataset& ds, const SelectionConfig& cfg, std::size_t top_n,
                        std::span<const std::size_t> items, std::size_t threads) {
  const auto acc = accumulate_selection(ds, cfg, items, threads);
  ExpertSet e = select_experts(acc.finalize(), top_n);
  e.metric = cfg.metric;
  e.logit_scale = cfg.logit_scale;
  e.resolution = cfg.resolution;
  e.pooling = cfg.pooling;
  e.class_names = ds.manifest.class_names;
  e.source = ds.manifest.name + " (" + std::to_string(items.size()) + " of " + std::to_string(ds.size()) + " images)";
  return e;
}

ConfusionMatrix evaluate_classifier(const Dataset& ds, const Classifier& classifier, const EvalOptions& opts) {
  const auto items = all_items(ds);
  require_nonempty(items);
  const std::size_t K = ds.bank.num_classes();
  std::vector<ConfusionMatrix> partial(items.size());
  parallel_for(items.size(), opts.threads, [&](std::size_t i) {
    const auto& item = labeled_item(ds, i);
    const auto nf = normalize_features(load_features(item));
    const auto pred = predict(nf, classifier, item, opts);
    partial[i] = accumulate_confusion(pred, truth_for(load_labels(item), pred.grid()), K, ds.manifest.ignore_index);
  });
  ConfusionMatrix total(K);
  for (const auto& p : partial) total.merge(p);
  return total;
}

TemplateEvaluation evaluate_templates(const Dataset& ds, const EvalOptions& opts) {
  const auto items = all_items(ds);
  require_nonempty(items);
  const std::size_t K = ds.bank.num_classes(), M = ds.bank.num_templates();
  const auto clip = build_average_classifier(ds.bank);
  const auto templates = build_all_single_template_classifiers(ds.bank);
  std::vector<TemplateEvaluation> partial(items.size());
  parallel_for(items.size(), opts.threads, [&](std::size_t i) {
    const auto& item = labeled_item(ds, i);
    const auto nf = normalize_features(load_features(item));
    const auto labels = load_labels(item);
    auto& out = partial[i];
    const auto pred = predict(nf, clip, item, opts);
    const auto gt = truth_for(labels, pred.grid());
    out.clip = accumulate_confusion(pred, gt, K, ds.manifest.ignore_index);
    for (const auto& t : templates) {
      out.templates.push_back(accumulate_confusion(predict(nf, t, item, opts), gt, K, ds.manifest.ignore_index));
    }
  });
  TemplateEvaluation total{ConfusionMatrix(K), std::vector<ConfusionMatrix>(M, ConfusionMatrix(K))};
  for (const auto& p : partial) {
    total.clip.merge(p.clip);
    for (std::size_t m = 0; m < M; ++m) total.templates[m].merge(p.templates[m]);
  }
  return total;
}

TrueExpertTable true_experts(const TemplateEvaluation& eval) {
  const std::size_t K = eval.clip.num_classes(), M = eval.templates.size();
  const auto clip = iou_per_class(eval.clip);
  std::vector<double> table(M * K);
  for (std::size_t m = 0; m < M; ++m) {
    const auto r = iou_per_class(eval.templates[m]);
    for (std::size_t k = 0; k < K; ++k) table[m * K + k] = r.iou[k];
  }
  return true_experts_from_iou(M, K, std::move(table), clip.iou, clip.present);
}

TrueExpertTable true_experts(const Dataset& ds, const EvalOptions& opts) {
  return true_experts(evaluate_templates(ds, opts));
}

FusionEvaluation evaluate_fusion(const Dataset& ds, const ExpertSet& experts, FusionStrategy strategy,
                                 double logit_scale, const EvalOptions& opts, bool streaming) {
  const auto items = all_items(ds);
  require_nonempty(items);
  const std::size_t K = ds.bank.num_classes();
  const auto clip = build_average_classifier(ds.bank);
  const auto classifiers = expert_classifiers_with_fallback(ds.bank, experts, clip);
  const FusionConfig cfg{strategy, logit_scale, opts.resolution, opts.upsample};

  struct Partial {
    ConfusionMatrix cm;
    FallbackStats stats;
    std::size_t bytes = 0;
  };
  std::vector<Partial> partial(items.size());
  parallel_for(items.size(), opts.threads, [&](std::size_t i) {
    const auto& item = labeled_item(ds, i);
    const auto nf = normalize_features(load_features(item));
    const auto r = streaming ? fuse_streaming(nf, classifiers, &clip, cfg, item.label_size)
                             : fuse(nf, classifiers, &clip, cfg, item.label_size);
    const auto gt = truth_for(load_labels(item), r.labels.grid());
    partial[i] = {accumulate_confusion(r.labels, gt, K, ds.manifest.ignore_index), r.stats, r.working_bytes};
  });
  FusionEvaluation total{ConfusionMatrix(K), {}, 0};
  for (const auto& p : partial) {
    total.confusion.merge(p.cm);
    total.stats.merge(p.stats);
    total.peak_working_bytes = std::max(total.peak_working_bytes, p.bytes);
  }
  return total;
}

TransferResult align_experts(const ExpertSet& experts, const Dataset& ds) {
  const auto& target = ds.manifest.class_names;
  if (experts.class_names.empty() || experts.class_names == target) {
    if (experts.num_classes() != target.size()) {
      throw ValidationError("expert set has " + std::to_string(experts.num_classes()) + " classes, dataset has " +
                            std::to_string(target.size()));
    }
    TransferResult r;
    r.experts = experts;
    r.experts.class_names = target;
    for (std::size_t k = 0; k < target.size(); ++k) {
      (experts.experts[k].empty() ? r.fallback : r.inherited).push_back(k);
    }
    return r;
  }
  return transfer_experts(experts, ClassNames{experts.class_names, {}}, ds.class_names());
}

}  // namespace expertseg
