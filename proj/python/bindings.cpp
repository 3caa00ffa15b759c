#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "expertseg/classifier_bank.hpp"
#include "expertseg/dense_inference.hpp"
#include "expertseg/evaluation.hpp"
#include "expertseg/expert_fusion.hpp"
#include "expertseg/expert_selection.hpp"
#include "expertseg/pipeline.hpp"
#include "expertseg/synthetic_bench.hpp"
#include "expertseg/templates.hpp"
#include "expertseg/tensor_store.hpp"

namespace py = pybind11;
using namespace expertseg;

namespace {

using f64_array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using f32_array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using u16_array = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

void require_ndim(const py::array& a, py::ssize_t ndim, const char* what) {
  if (a.ndim() != ndim) {
    throw ValidationError(std::string(what) + " must have " + std::to_string(ndim) + " dimensions");
  }
}

TextBank bank_from(const f64_array& a) {
  require_ndim(a, 3, "text bank");
  const auto M = static_cast<std::size_t>(a.shape(0)), K = static_cast<std::size_t>(a.shape(1)),
             D = static_cast<std::size_t>(a.shape(2));
  return TextBank(M, K, D, std::vector<double>(a.data(), a.data() + a.size()));
}

Classifier classifier_from(const f64_array& a) {
  require_ndim(a, 2, "classifier");
  Classifier c;
  c.num_classes = static_cast<std::size_t>(a.shape(0));
  c.dim = static_cast<std::size_t>(a.shape(1));
  c.weights.assign(a.data(), a.data() + a.size());
  return c;
}

f64_array classifier_to(const Classifier& c) {
  f64_array out({c.num_classes, c.dim});
  std::memcpy(out.mutable_data(), c.weights.data(), c.weights.size() * sizeof(double));
  return out;
}

FeatureMap features_from(const f32_array& a) {
  require_ndim(a, 3, "features");
  FeatureMap f;
  f.height = static_cast<std::size_t>(a.shape(0));
  f.width = static_cast<std::size_t>(a.shape(1));
  f.dim = static_cast<std::size_t>(a.shape(2));
  f.values.assign(a.data(), a.data() + a.size());
  return f;
}

LabelGrid labels_from(const u16_array& a) {
  require_ndim(a, 2, "label map");
  LabelGrid g(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(g.labels.data(), a.data(), g.labels.size() * sizeof(std::uint16_t));
  return g;
}

py::array labels_to(const LabelGrid& g) {
  u16_array out({g.height, g.width});
  std::memcpy(out.mutable_data(), g.labels.data(), g.labels.size() * sizeof(std::uint16_t));
  return std::move(out);
}

f64_array dense_to(const DenseMap& m) {
  f64_array out({m.height, m.width, m.channels});
  std::memcpy(out.mutable_data(), m.values.data(), m.values.size() * sizeof(double));
  return out;
}

template <typename T>
py::array typed_array(const TensorFile& t, std::vector<T> values) {
  std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), values.data(), values.size() * sizeof(T));
  return std::move(out);
}

py::array tensor_to_numpy(const TensorFile& t) {
  switch (t.dtype) {
    case DType::F32: return typed_array(t, t.to_f32());
    case DType::F64: return typed_array(t, t.to_f64());
    case DType::U8: return typed_array(t, t.to_u8());
    case DType::U16: return typed_array(t, t.to_u16());
    case DType::I64: return typed_array(t, t.to_i64());
  }
  throw ValidationError("unknown dtype");
}

TensorFile numpy_to_tensor(const py::array& a) {
  std::vector<std::uint64_t> dims(a.shape(), a.shape() + a.ndim());
  const auto kind = a.dtype().kind();
  const auto size = a.dtype().itemsize();
  auto as = [&](auto tag) {
    using T = decltype(tag);
    return py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(a);
  };
  if (kind == 'f' && size == 4) {
    auto v = as(float{});
    return TensorFile::from_f32(dims, {v.data(), static_cast<std::size_t>(v.size())});
  }
  if (kind == 'f' && size == 8) {
    auto v = as(double{});
    return TensorFile::from_f64(dims, {v.data(), static_cast<std::size_t>(v.size())});
  }
  if (kind == 'u' && size == 1) {
    auto v = as(std::uint8_t{});
    return TensorFile::from_u8(dims, {v.data(), static_cast<std::size_t>(v.size())});
  }
  if (kind == 'u' && size == 2) {
    auto v = as(std::uint16_t{});
    return TensorFile::from_u16(dims, {v.data(), static_cast<std::size_t>(v.size())});
  }
  if (kind == 'i' && size == 8) {
    auto v = as(std::int64_t{});
    return TensorFile::from_i64(dims, {v.data(), static_cast<std::size_t>(v.size())});
  }
  throw ValidationError("unsupported array dtype (expected float32, float64, uint8, uint16 or int64)");
}

std::vector<std::size_t> items_for(const Dataset& ds, std::optional<std::size_t> subsample, std::uint64_t seed) {
  if (subsample && (*subsample == 0 || *subsample > ds.size())) {
    throw ValidationError("subsample must lie in [1, dataset size]");
  }
  return subsample_items(ds.size(), subsample, seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Class-expert prompt template selection and fusion engine";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("read_tensor", [](const std::filesystem::path& p) { return tensor_to_numpy(read_tensor(p)); },
        py::arg("path"));
  m.def("write_tensor", [](const std::filesystem::path& p, const py::array& a) { write_tensor(p, numpy_to_tensor(a)); },
        py::arg("path"), py::arg("array"));
  m.def("templates", [] {
    std::vector<std::string> out;
    for (auto t : imagenet_templates()) out.emplace_back(t);
    return out;
  });

  m.def("entropy", [](const f64_array& q) { return entropy({q.data(), static_cast<std::size_t>(q.size())}); },
        py::arg("q"));

  m.def("average_classifier", [](const f64_array& bank) { return classifier_to(build_average_classifier(bank_from(bank))); },
        py::arg("bank"), "Template-averaged K x D classifier from an M x K x D bank.");
  m.def(
      "subset_classifier",
      [](const f64_array& bank, const std::vector<std::size_t>& templates) {
        return classifier_to(build_template_subset_classifier(bank_from(bank), templates));
      },
      py::arg("bank"), py::arg("templates"));

  m.def(
      "cosine_logits",
      [](const f32_array& features, const f64_array& classifier) {
        return dense_to(cosine_logits(features_from(features), classifier_from(classifier)));
      },
      py::arg("features"), py::arg("classifier"));

  m.def(
      "select_experts",
      [](const f64_array& scores, py::array_t<bool, py::array::c_style | py::array::forcecast> valid,
         const std::string& metric, std::size_t top_n) {
        require_ndim(scores, 2, "scores");
        if (valid.ndim() != 2 || valid.shape(0) != scores.shape(0) || valid.shape(1) != scores.shape(1)) {
          throw ValidationError("valid mask must match the score matrix");
        }
        ScoreTable t;
        t.num_templates = static_cast<std::size_t>(scores.shape(0));
        t.num_classes = static_cast<std::size_t>(scores.shape(1));
        t.metric = parse_metric(metric);
        t.scores.assign(scores.data(), scores.data() + scores.size());
        t.valid.resize(t.scores.size());
        t.counts.assign(t.scores.size(), 0);
        for (std::size_t i = 0; i < t.valid.size(); ++i) {
          t.valid[i] = valid.data()[i] ? 1 : 0;
          t.counts[i] = t.valid[i];
        }
        return select_experts(t, top_n).experts;
      },
      py::arg("scores"), py::arg("valid"), py::arg("metric") = "entropy", py::arg("top_n") = kDefaultTopN);

  m.def(
      "fuse",
      [](const f32_array& features, const f64_array& experts, const f64_array& fallback, const std::string& strategy,
         double logit_scale, bool streaming) {
        require_ndim(experts, 3, "expert classifiers");
        const auto nf = normalize_features(features_from(features));
        const auto K = static_cast<std::size_t>(experts.shape(0));
        const auto D = static_cast<std::size_t>(experts.shape(2));
        std::vector<Classifier> cs(K);
        for (std::size_t k = 0; k < K; ++k) {
          cs[k].num_classes = static_cast<std::size_t>(experts.shape(1));
          cs[k].dim = D;
          cs[k].weights.assign(experts.data() + k * cs[k].num_classes * D,
                               experts.data() + (k + 1) * cs[k].num_classes * D);
        }
        const auto fb = classifier_from(fallback);
        const FusionConfig cfg{parse_strategy(strategy), logit_scale, Resolution::Grid, UpsampleMode::Bilinear};
        const auto r = streaming ? fuse_streaming(nf, cs, &fb, cfg) : fuse(nf, cs, &fb, cfg);
        py::dict stats;
        stats["pixels"] = r.stats.pixels;
        stats["fallback_pixels"] = r.stats.fallback_pixels;
        stats["conflict_pixels"] = r.stats.conflict_pixels;
        stats["empty_pixels"] = r.stats.empty_pixels;
        return py::make_tuple(labels_to(r.labels), stats);
      },
      py::arg("features"), py::arg("experts"), py::arg("fallback"), py::arg("strategy") = "highest",
      py::arg("logit_scale") = kDefaultLogitScale, py::arg("streaming") = true);

  m.def(
      "miou",
      [](const u16_array& pred, const u16_array& gt, std::size_t num_classes, std::uint16_t ignore_index) {
        const auto r = iou_per_class(accumulate_confusion(labels_from(pred), labels_from(gt), num_classes, ignore_index));
        std::vector<std::optional<double>> iou(num_classes);
        for (std::size_t k = 0; k < num_classes; ++k) {
          if (r.present[k]) iou[k] = r.iou[k];
        }
        return py::make_tuple(r.miou, iou);
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore_index") = 255);

  m.def(
      "expert_quality",
      [](const std::vector<std::vector<std::size_t>>& estimated, const std::vector<std::vector<std::size_t>>& truth,
         std::size_t top_n) {
        ExpertSet e;
        e.top_n = top_n;
        e.experts = estimated;
        const auto q = expert_quality(e, truth);
        return py::make_tuple(q.mean, q.per_class);
      },
      py::arg("estimated"), py::arg("truth"), py::arg("top_n"));

  m.def(
      "select_json",
      [](const std::filesystem::path& manifest, const std::string& metric, std::size_t top_n, double logit_scale,
         const std::string& resolution, std::optional<std::size_t> subsample, std::uint64_t seed, std::size_t threads) {
        py::gil_scoped_release release;
        const auto ds = load_dataset(manifest);
        SelectionConfig cfg;
        cfg.metric = parse_metric(metric);
        cfg.logit_scale = logit_scale;
        cfg.resolution = parse_resolution(resolution);
        return to_json(run_selection(ds, cfg, top_n, items_for(ds, subsample, seed), threads)).dump();
      },
      py::arg("manifest"), py::arg("metric") = "entropy", py::arg("top_n") = kDefaultTopN,
      py::arg("logit_scale") = kDefaultLogitScale, py::arg("resolution") = "grid", py::arg("subsample") = py::none(),
      py::arg("seed") = 0, py::arg("threads") = 0);

  m.def(
      "evaluate_json",
      [](const std::filesystem::path& manifest, std::optional<std::string> experts_json, const std::string& strategy,
         double logit_scale, const std::string& resolution, std::size_t threads) {
        py::gil_scoped_release release;
        const auto ds = load_dataset(manifest);
        EvalOptions opts;
        opts.resolution = parse_resolution(resolution);
        opts.threads = threads;
        const auto base = iou_per_class(evaluate_classifier(ds, build_average_classifier(ds.bank), opts));
        nlohmann::json out{{"baseline_miou", base.miou}, {"baseline_iou", base.iou}};
        if (experts_json) {
          const auto aligned = align_experts(expert_set_from_json(nlohmann::json::parse(*experts_json)), ds);
          const auto fused = evaluate_fusion(ds, aligned.experts, parse_strategy(strategy), logit_scale, opts);
          const auto r = iou_per_class(fused.confusion);
          out["fused_miou"] = r.miou;
          out["fused_iou"] = r.iou;
          out["fallback_fraction"] = fused.stats.fallback_fraction();
          out["inherited_classes"] = aligned.inherited;
          out["fallback_classes"] = aligned.fallback;
        }
        return out.dump();
      },
      py::arg("manifest"), py::arg("experts_json") = py::none(), py::arg("strategy") = "highest",
      py::arg("logit_scale") = kDefaultLogitScale, py::arg("resolution") = "label", py::arg("threads") = 0);

  m.def(
      "generate_synthetic_json",
      [](const std::string& spec_json, const std::filesystem::path& out_dir) {
        const auto spec = synth_spec_from_json(nlohmann::json::parse(spec_json));
        const auto ds = generate(spec, out_dir);
        return nlohmann::json{{"manifest", ds.manifest_path.string()}, {"planted_experts", ds.planted.experts}}.dump();
      },
      py::arg("spec_json"), py::arg("out_dir"));
}
