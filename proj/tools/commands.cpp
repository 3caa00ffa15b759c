#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "expertseg/evaluation.hpp"
#include "expertseg/pipeline.hpp"
#include "expertseg/synthetic_bench.hpp"

namespace expertseg::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json iou_json(const IouResult& r) {
  json iou = json::array();
  for (std::size_t k = 0; k < r.iou.size(); ++k) iou.push_back(r.present[k] ? json(r.iou[k]) : json(nullptr));
  return json{{"miou", r.miou}, {"iou", std::move(iou)}};
}

// Timings go to stderr so reports stay byte-identical across runs.
class Timer {
 public:
  explicit Timer(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
    std::cerr << what_ << ": " << ms << " ms\n";
  }

 private:
  std::string what_;
  std::chrono::steady_clock::time_point start_;
};

SelectionConfig selection_config(const RunConfig& cfg) {
  SelectionConfig s;
  s.metric = cfg.metric;
  s.logit_scale = cfg.logit_scale;
  s.resolution = cfg.resolution.value_or(Resolution::Grid);
  return s;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.resolution = cfg.resolution.value_or(Resolution::Label);
  o.threads = cfg.threads;
  return o;
}

std::vector<std::size_t> selection_items(const RunConfig& cfg, const Dataset& ds) {
  if (ds.size() == 0) throw ValidationError("empty dataset: manifest lists no items");
  if (cfg.subsample && *cfg.subsample > ds.size()) {
    throw ValidationError("--subsample " + std::to_string(*cfg.subsample) + " exceeds dataset size " +
                          std::to_string(ds.size()));
  }
  return subsample_items(ds.size(), cfg.subsample, cfg.seed);
}

void require_labels(const Dataset& ds) {
  if (!ds.manifest.fully_labeled()) throw ValidationError("missing labels: evaluation needs a fully labeled manifest");
}

json dataset_json(const Dataset& ds) {
  return json{{"name", ds.manifest.name},
              {"images", ds.size()},
              {"num_classes", ds.manifest.num_classes()},
              {"num_templates", ds.manifest.num_templates()},
              {"class_names", ds.manifest.class_names}};
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void validate(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ValidationError("--manifest is required");
  if (cfg.top_n < 1) throw ValidationError("--topn must be >= 1");
  if (!(cfg.logit_scale > 0.0) || !std::isfinite(cfg.logit_scale)) {
    throw ValidationError("--logit-scale must be a positive finite number");
  }
  if (cfg.subsample && *cfg.subsample < 1) throw ValidationError("--subsample must be >= 1");
}

json cmd_select(const RunConfig& cfg) {
  validate(cfg);
  Timer t("select");
  const auto ds = load_dataset(cfg.manifest);
  const auto items = selection_items(cfg, ds);
  const auto experts = run_selection(ds, selection_config(cfg), cfg.top_n, items, cfg.threads);
  json doc = to_json(experts);
  json ids = json::array();
  for (auto i : items) ids.push_back(ds.manifest.items[i].id);
  doc["provenance"] = json{{"dataset", dataset_json(ds)},
                           {"subsample", cfg.subsample ? json(*cfg.subsample) : json(nullptr)},
                           {"seed", cfg.seed},
                           {"items", std::move(ids)}};
  write_json(cfg.out / "experts.json", doc);
  return doc;
}

json cmd_eval(const RunConfig& cfg) {
  validate(cfg);
  Timer t("eval");
  const auto ds = load_dataset(cfg.manifest);
  require_labels(ds);
  const auto opts = eval_options(cfg);
  const auto baseline = iou_per_class(evaluate_classifier(ds, build_average_classifier(ds.bank), opts));

  json report{{"dataset", dataset_json(ds)},
              {"logit_scale", cfg.logit_scale},
              {"resolution", to_string(opts.resolution)},
              {"baseline", iou_json(baseline)}};
  if (cfg.experts) {
    const auto loaded = load_expert_set(*cfg.experts);
    const auto aligned = align_experts(loaded, ds);
    const auto fused = evaluate_fusion(ds, aligned.experts, cfg.strategy, cfg.logit_scale, opts);
    const auto r = iou_per_class(fused.confusion);
    json f = iou_json(r);
    f["strategy"] = to_string(cfg.strategy);
    f["experts_source"] = loaded.source;
    f["pixels"] = fused.stats.pixels;
    f["fallback_pixels"] = fused.stats.fallback_pixels;
    f["conflict_pixels"] = fused.stats.conflict_pixels;
    f["empty_pixels"] = fused.stats.empty_pixels;
    f["fallback_fraction"] = fused.stats.fallback_fraction();
    f["inherited_classes"] = aligned.inherited;
    f["fallback_classes"] = aligned.fallback;
    report["fusion"] = std::move(f);
    report["delta_miou"] = r.miou - baseline.miou;
  }
  write_json(cfg.out / "report.json", report);
  return report;
}

json cmd_oracle(const RunConfig& cfg, const OracleOptions& opts) {
  validate(cfg);
  if (opts.mode != "ratio" && opts.mode != "best") throw ValidationError("--mode must be ratio or best");
  if (opts.seeds < 1) throw ValidationError("--seeds must be >= 1");
  Timer t("oracle");
  const auto ds = load_dataset(cfg.manifest);
  require_labels(ds);
  const auto eval = eval_options(cfg);
  const auto truth = true_experts(ds, eval);
  const double clip_miou = iou_per_class(evaluate_classifier(ds, build_average_classifier(ds.bank), eval)).miou;

  json report{{"dataset", dataset_json(ds)},
              {"mode", opts.mode},
              {"N", cfg.top_n},
              {"strategy", to_string(cfg.strategy)},
              {"logit_scale", cfg.logit_scale},
              {"baseline_miou", clip_miou}};
  std::string csv;
  json rows = json::array();
  if (opts.mode == "ratio") {
    csv = "rho,expert_draws,mean_miou,std_miou,seeds,clamped_classes\n";
    for (double rho : opts.rhos) {
      std::vector<double> mious;
      std::size_t clamped = 0;
      for (std::size_t s = 0; s < opts.seeds; ++s) {
        const auto draw = oracle_ratio_experts(truth, rho, cfg.top_n, cfg.seed + s);
        clamped += draw.clamped_classes.size();
        const auto fused = evaluate_fusion(ds, draw.experts, cfg.strategy, cfg.logit_scale, eval);
        mious.push_back(iou_per_class(fused.confusion).miou);
      }
      const auto draws = oracle_expert_count(rho, cfg.top_n);
      rows.push_back(json{{"rho", rho},
                          {"expert_draws", draws},
                          {"mean_miou", mean(mious)},
                          {"std_miou", stddev(mious)},
                          {"miou", mious},
                          {"clamped_classes", clamped}});
      csv += num(rho) + "," + std::to_string(draws) + "," + num(mean(mious)) + "," + num(stddev(mious)) + "," +
             std::to_string(opts.seeds) + "," + std::to_string(clamped) + "\n";
    }
  } else {
    csv = "N,miou\n";
    for (std::size_t n = 1; n <= cfg.top_n; ++n) {
      const auto fused = evaluate_fusion(ds, oracle_best_experts(truth, n), cfg.strategy, cfg.logit_scale, eval);
      const double m = iou_per_class(fused.confusion).miou;
      rows.push_back(json{{"N", n}, {"miou", m}});
      csv += std::to_string(n) + "," + num(m) + "\n";
    }
  }
  report["results"] = std::move(rows);
  write_json(cfg.out / "report.json", report);
  write_text(cfg.out / "oracle.csv", csv);
  return report;
}

json cmd_analyze(const RunConfig& cfg) {
  validate(cfg);
  Timer t("analyze");
  const auto ds = load_dataset(cfg.manifest);
  require_labels(ds);
  const auto items = selection_items(cfg, ds);
  const auto sel = selection_config(cfg);
  const auto table = accumulate_selection(ds, sel, items, cfg.threads).finalize();
  const auto experts = select_experts(table, cfg.top_n);
  const auto truth = true_experts(ds, eval_options(cfg));
  const auto quality = expert_quality(experts, truth);
  const std::size_t K = table.num_classes, M = table.num_templates;
  const auto& names = ds.manifest.class_names;

  std::string scatter = "template,class,class_name,score,iou,count,true_expert\n";
  std::size_t valid_rows = 0;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!table.is_valid(m, k)) continue;
      ++valid_rows;
      const bool is_true =
          std::find(truth.experts[k].begin(), truth.experts[k].end(), m) != truth.experts[k].end();
      scatter += std::to_string(m) + "," + std::to_string(k) + "," + csv_field(names[k]) + "," +
                 num(table.score(m, k)) + "," + num(truth.iou(m, k)) + "," +
                 std::to_string(table.counts[m * K + k]) + "," + (is_true ? "1" : "0") + "\n";
    }
  }
  // Reference rows: the template-averaged classifier's IoU per class.
  for (std::size_t k = 0; k < K; ++k) {
    scatter += "avg," + std::to_string(k) + "," + csv_field(names[k]) + ",," + num(truth.clip_iou[k]) + ",,\n";
  }

  std::string qcsv = "class,class_name,quality,intersections,short_list\n";
  for (std::size_t k = 0; k < K; ++k) {
    qcsv += std::to_string(k) + "," + csv_field(names[k]) + "," + num(quality.per_class[k]) + "," +
            std::to_string(quality.intersections[k]) + "," + std::to_string(quality.short_list[k]) + "\n";
  }
  qcsv += "mean,," + num(quality.mean) + ",,\n";

  json report{{"dataset", dataset_json(ds)},
              {"metric", to_string(cfg.metric)},
              {"N", cfg.top_n},
              {"valid_pairs", valid_rows},
              {"quality_mean", quality.mean},
              {"quality", quality.per_class},
              {"true_experts", truth.experts},
              {"selected_experts", experts.experts}};
  write_text(cfg.out / "scatter.csv", scatter);
  write_text(cfg.out / "quality.csv", qcsv);
  write_json(cfg.out / "analysis.json", report);
  return report;
}

json cmd_synth(const std::optional<fs::path>& spec_path, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  SynthSpec spec;
  if (spec_path) {
    std::ifstream in(*spec_path);
    if (!in) throw IoError("cannot open synth spec " + spec_path->string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ValidationError(spec_path->string() + ": invalid JSON: " + e.what());
    }
    spec = synth_spec_from_json(j);
  }
  if (seed) spec.seed = *seed;
  Timer t("synth");
  const auto ds = generate(spec, out_dir);
  return json{{"manifest", ds.manifest_path.generic_string()},
              {"images", ds.manifest.items.size()},
              {"planted_experts", ds.planted.experts}};
}

int run(int argc, char** argv) {
  CLI::App app{"Class-expert template selection and fusion for dense open-vocabulary segmentation"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string metric = "entropy", strategy = "highest", resolution;
  std::size_t subsample = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--manifest", cfg.manifest, "Dataset manifest (JSON)")->required();
    sub->add_option("--logit-scale", cfg.logit_scale, "Softmax temperature applied to cosine logits");
    sub->add_option("--resolution", resolution, "grid | label")->check(CLI::IsMember({"grid", "label"}));
    sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)");
    sub->add_option("--out", cfg.out, "Output directory");
    sub->add_option("--topn", cfg.top_n, "Experts per class (N)");
    sub->add_option("--seed", cfg.seed, "Seed for subsampling and oracle draws");
  };

  auto* select = app.add_subcommand("select", "Select per-class expert templates from unlabeled images");
  add_common(select);
  select->add_option("--metric", metric, "entropy | avgprob | mano | iti")
      ->check(CLI::IsMember({"entropy", "avgprob", "mano", "iti"}));
  select->add_option("--subsample", subsample, "Use a seeded random subset of N images");

  auto* eval = app.add_subcommand("eval", "Evaluate the averaged classifier and optionally fused experts");
  add_common(eval);
  std::string experts_path;
  eval->add_option("--experts", experts_path, "ExpertSet JSON from `select`");
  eval->add_option("--strategy", strategy, "highest | average | default | average-all")
      ->check(CLI::IsMember({"highest", "average", "default", "average-all"}));

  auto* oracle = app.add_subcommand("oracle", "Fuse oracle expert sets built from labels");
  add_common(oracle);
  OracleOptions oopts;
  oracle->add_option("--mode", oopts.mode, "ratio | best")->check(CLI::IsMember({"ratio", "best"}));
  oracle->add_option("--rho", oopts.rhos, "Expert ratios to sweep");
  oracle->add_option("--seeds", oopts.seeds, "Draws per ratio");
  oracle->add_option("--strategy", strategy, "highest | average | default | average-all")
      ->check(CLI::IsMember({"highest", "average", "default", "average-all"}));

  auto* analyze = app.add_subcommand("analyze", "Dump per-(template, class) score/IoU pairs and expert quality");
  add_common(analyze);
  analyze->add_option("--metric", metric, "entropy | avgprob | mano | iti")
      ->check(CLI::IsMember({"entropy", "avgprob", "mano", "iti"}));
  analyze->add_option("--subsample", subsample, "Use a seeded random subset of N images for selection");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted experts");
  std::string spec_path, synth_out = "synthetic";
  std::uint64_t synth_seed = 0;
  synth->add_option("spec", spec_path, "Synthetic spec JSON (defaults when omitted)");
  synth->add_option("--out", synth_out, "Output directory");
  auto* seed_opt = synth->add_option("--seed", synth_seed, "Override the spec's image seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cfg.metric = parse_metric(metric);
    cfg.strategy = parse_strategy(strategy);
    if (!resolution.empty()) cfg.resolution = parse_resolution(resolution);
    if (subsample > 0) cfg.subsample = subsample;
    if (!experts_path.empty()) cfg.experts = experts_path;

    json result;
    if (*select) {
      if (select->count("--subsample") && subsample == 0) throw ValidationError("--subsample must be >= 1");
      result = cmd_select(cfg);
      std::cout << (cfg.out / "experts.json").string() << "\n";
    } else if (*eval) {
      result = cmd_eval(cfg);
      std::cout << "baseline mIoU " << result["baseline"]["miou"].get<double>();
      if (result.contains("fusion")) std::cout << "  fused mIoU " << result["fusion"]["miou"].get<double>();
      std::cout << "\n";
    } else if (*oracle) {
      result = cmd_oracle(cfg, oopts);
      std::cout << (cfg.out / "oracle.csv").string() << "\n";
    } else if (*analyze) {
      if (analyze->count("--subsample") && subsample == 0) throw ValidationError("--subsample must be >= 1");
      result = cmd_analyze(cfg);
      std::cout << "expert quality " << result["quality_mean"].get<double>() << "%\n";
    } else if (*synth) {
      std::optional<fs::path> sp;
      if (!spec_path.empty()) sp = spec_path;
      result = cmd_synth(sp, synth_out, seed_opt->count() ? std::optional<std::uint64_t>(synth_seed) : std::nullopt);
      std::cout << result["manifest"].get<std::string>() << "\n";
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace expertseg::cli
