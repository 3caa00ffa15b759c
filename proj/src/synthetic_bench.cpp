#include "expertseg/synthetic_bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "expertseg/rng.hpp"
#include "expertseg/templates.hpp"
#include "expertseg/tensor_store.hpp"

namespace expertseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> gaussian(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

// Orthonormal basis of the prototype span, used to keep perturbations off every class direction.
std::vector<std::vector<double>> orthonormal_basis(const std::vector<std::vector<double>>& vs) {
  std::vector<std::vector<double>> basis;
  for (auto v : vs) {
    for (const auto& b : basis) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
    }
    normalize(v);
    basis.push_back(std::move(v));
  }
  return basis;
}

// min_angle_deg >= 90 draws an orthonormal set; otherwise rejection sampling.
std::vector<std::vector<double>> draw_prototypes(Rng& rng, std::size_t count, std::size_t dim, double min_angle_deg) {
  if (min_angle_deg >= 90.0) {
    std::vector<std::vector<double>> raw(count);
    for (auto& v : raw) v = gaussian(rng, dim);
    return orthonormal_basis(raw);
  }
  const double max_cos = std::cos(min_angle_deg * std::numbers::pi / 180.0);
  constexpr int kMaxAttempts = 100000;
  std::vector<std::vector<double>> protos;
  int attempts = 0;
  while (protos.size() < count) {
    if (++attempts > kMaxAttempts) {
      throw ValidationError("could not place " + std::to_string(count) + " prototypes in D=" + std::to_string(dim) +
                            " with min angle " + std::to_string(min_angle_deg) + " deg");
    }
    auto v = gaussian(rng, dim);
    normalize(v);
    bool ok = true;
    for (const auto& p : protos) ok = ok && dot(v, p) <= max_cos;
    if (ok) protos.push_back(std::move(v));
  }
  return protos;
}

std::string class_name(std::size_t pool_index) {
  std::string digits = std::to_string(pool_index);
  if (digits.size() < 2) digits.insert(digits.begin(), '0');
  return "class_" + digits;
}

std::vector<std::string> template_strings(std::size_t m) {
  const auto& all = imagenet_templates();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m; ++i) {
    out.push_back(i < all.size() ? std::string(all[i]) : "template " + std::to_string(i) + " of a {}.");
  }
  return out;
}

// Full pool sigma table, template-major.
std::vector<double> pool_sigma(const SynthSpec& spec, Rng& world) {
  const std::size_t M = spec.num_templates;
  const std::size_t P = spec.class_pool;
  if (!spec.sigma.empty()) return spec.sigma;
  const auto levels = spec.sigma_levels.empty() ? default_sigma_levels(M, spec.planted_experts) : spec.sigma_levels;
  const std::size_t E = spec.planted_experts;
  const std::size_t lo = P * E / M, hi = (P * E + M - 1) / M;
  constexpr int kMaxDraws = 100000;
  std::vector<std::vector<std::size_t>> perms(P, std::vector<std::size_t>(M));
  for (int draw = 0;; ++draw) {
    std::vector<std::size_t> expert_count(M, 0);
    for (auto& perm : perms) {
      std::iota(perm.begin(), perm.end(), 0);
      world.shuffle(perm);
      for (std::size_t r = 0; r < E; ++r) ++expert_count[perm[r]];
    }
    const bool even = std::all_of(expert_count.begin(), expert_count.end(),
                                  [&](std::size_t n) { return n >= lo && n <= hi; });
    if (!spec.balanced || even) break;
    if (draw + 1 >= kMaxDraws) throw ValidationError("synth: could not draw a balanced expert assignment");
  }
  std::vector<double> sigma(M * P);
  for (std::size_t c = 0; c < P; ++c) {
    for (std::size_t r = 0; r < M; ++r) sigma[perms[c][r] * P + c] = levels[r];
  }
  return sigma;
}

}  // namespace

std::vector<std::size_t> SynthSpec::classes() const {
  if (!class_subset.empty()) return class_subset;
  std::vector<std::size_t> all(class_pool);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

std::vector<double> default_sigma_levels(std::size_t num_templates, std::size_t planted_experts) {
  // Levels are spaced evenly in class signal c = 1 / sqrt(1 + sigma^2): planted
  // experts span c in [0.82, 1], the rest c in [0.05, 0.3].
  const std::size_t e = std::min(planted_experts, num_templates);
  const std::size_t rest = num_templates - e;
  auto level = [](double c) { return std::sqrt(1.0 / (c * c) - 1.0); };
  auto lerp = [](double a, double b, std::size_t i, std::size_t n) {
    return n <= 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<double> levels;
  for (std::size_t i = 0; i < e; ++i) levels.push_back(level(lerp(1.0, 0.82, i, e)));
  for (std::size_t i = 0; i < rest; ++i) levels.push_back(level(lerp(0.3, 0.05, i, rest)));
  return levels;
}

void validate(const SynthSpec& spec) {
  const std::size_t M = spec.num_templates;
  const std::size_t P = spec.class_pool;
  if (M < 1) throw ValidationError("synth: num_templates must be >= 1");
  if (P < 2) throw ValidationError("synth: class_pool must be >= 2");
  if (spec.dim <= P) throw ValidationError("synth: dim must exceed class_pool (perturbations need a free direction)");
  if (spec.grid.pixels() == 0) throw ValidationError("synth: grid extents must be >= 1");
  if (spec.label_scale < 1) throw ValidationError("synth: label_scale must be >= 1");
  if (spec.num_images < 1) throw ValidationError("synth: num_images must be >= 1");
  if (!(spec.pixel_noise >= 0.0)) throw ValidationError("synth: pixel_noise must be >= 0");
  if (spec.planted_experts < 1 || spec.planted_experts > M) {
    throw ValidationError("synth: planted_experts must lie in [1, num_templates]");
  }
  if (!(spec.shared_perturbation >= 0.0 && spec.shared_perturbation <= 1.0)) {
    throw ValidationError("synth: shared_perturbation must lie in [0, 1]");
  }
  if (!(spec.min_angle_deg >= 0.0 && spec.min_angle_deg <= 90.0)) {
    throw ValidationError("synth: min_angle_deg must lie in [0, 90]");
  }
  const auto k = spec.classes();
  if (k.size() < 2) throw ValidationError("synth: at least two classes are required");
  if (k.size() > 65535) throw ValidationError("synth: too many classes for u16 labels");
  std::set<std::size_t> seen;
  for (auto c : k) {
    if (c >= P) throw ValidationError("synth: class_subset index " + std::to_string(c) + " outside the pool");
    if (!seen.insert(c).second) throw ValidationError("synth: duplicate class_subset index " + std::to_string(c));
  }
  if (!spec.sigma.empty()) {
    if (spec.sigma.size() != M * P) throw ValidationError("synth: sigma must have num_templates * class_pool entries");
    for (std::size_t c = 0; c < P; ++c) {
      std::set<double> distinct;
      for (std::size_t m = 0; m < M; ++m) {
        const double s = spec.sigma[m * P + c];
        if (!(s >= 0.0 && std::isfinite(s))) throw ValidationError("synth: sigma values must be finite and >= 0");
        distinct.insert(s);
      }
      if (distinct.size() != M) {
        throw ValidationError("synth: sigma does not strictly order the templates of pool class " +
                              std::to_string(c));
      }
    }
  } else if (!spec.sigma_levels.empty()) {
    if (spec.sigma_levels.size() != M) throw ValidationError("synth: sigma_levels must have num_templates entries");
    for (std::size_t m = 0; m < M; ++m) {
      if (!(spec.sigma_levels[m] >= 0.0 && std::isfinite(spec.sigma_levels[m]))) {
        throw ValidationError("synth: sigma_levels must be finite and >= 0");
      }
      if (m > 0 && !(spec.sigma_levels[m] > spec.sigma_levels[m - 1])) {
        throw ValidationError("synth: sigma_levels must be strictly increasing");
      }
    }
  }
}

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("synth spec must be a JSON object");
  static const std::set<std::string> known{"name",          "K",           "M",        "D",
                                           "grid",          "label_scale", "images",   "pixel_noise",
                                           "sigma_levels",  "sigma",       "planted_experts",
                                           "min_angle_deg", "class_pool",  "class_subset", "shared_perturbation", "balanced",
                                           "seed",          "world_seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ValidationError("synth spec: unknown field '" + it.key() + "'");
  }
  SynthSpec s;
  try {
    s.name = j.value("name", s.name);
    s.num_templates = j.value("M", s.num_templates);
    s.dim = j.value("D", s.dim);
    if (j.contains("grid")) {
      const auto g = j.at("grid").get<std::vector<std::size_t>>();
      if (g.size() != 2) throw ValidationError("synth spec: grid must be [height, width]");
      s.grid = {g[0], g[1]};
    }
    s.label_scale = j.value("label_scale", s.label_scale);
    s.num_images = j.value("images", s.num_images);
    s.pixel_noise = j.value("pixel_noise", s.pixel_noise);
    s.sigma_levels = j.value("sigma_levels", s.sigma_levels);
    s.sigma = j.value("sigma", s.sigma);
    s.planted_experts = j.value("planted_experts", s.planted_experts);
    s.min_angle_deg = j.value("min_angle_deg", s.min_angle_deg);
    s.shared_perturbation = j.value("shared_perturbation", s.shared_perturbation);
    s.balanced = j.value("balanced", s.balanced);
    const std::size_t k = j.value("K", std::size_t{5});
    s.class_pool = j.value("class_pool", k);
    s.class_subset = j.value("class_subset", s.class_subset);
    if (s.class_subset.empty() && s.class_pool != k) {
      s.class_subset.resize(k);
      std::iota(s.class_subset.begin(), s.class_subset.end(), 0);
    }
    s.seed = j.value("seed", s.seed);
    if (j.contains("world_seed")) s.world_seed = j.at("world_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth spec: ") + e.what());
  }
  validate(s);
  return s;
}

json to_json(const SynthSpec& s) {
  json j{{"name", s.name},
         {"K", s.classes().size()},
         {"M", s.num_templates},
         {"D", s.dim},
         {"grid", {s.grid.height, s.grid.width}},
         {"label_scale", s.label_scale},
         {"images", s.num_images},
         {"pixel_noise", s.pixel_noise},
         {"planted_experts", s.planted_experts},
         {"min_angle_deg", s.min_angle_deg},
         {"shared_perturbation", s.shared_perturbation},
         {"balanced", s.balanced},
         {"class_pool", s.class_pool},
         {"class_subset", s.classes()},
         {"seed", s.seed},
         {"world_seed", s.effective_world_seed()}};
  if (!s.sigma.empty()) j["sigma"] = s.sigma;
  else j["sigma_levels"] = s.sigma_levels.empty() ? default_sigma_levels(s.num_templates, s.planted_experts)
                                                   : s.sigma_levels;
  return j;
}

json to_json(const PlantedTruth& p) {
  json sigma = json::array();
  for (std::size_t k = 0; k < p.num_classes; ++k) {
    json row = json::array();
    for (std::size_t m = 0; m < p.num_templates; ++m) row.push_back(p.sigma_at(m, k));
    sigma.push_back(std::move(row));
  }
  return json{{"num_templates", p.num_templates},
              {"num_classes", p.num_classes},
              {"pool_classes", p.pool_classes},
              {"sigma", std::move(sigma)},
              {"order", p.order},
              {"experts", p.experts}};
}

SynthDataset generate(const SynthSpec& spec, const fs::path& out_dir) {
  validate(spec);
  const std::size_t M = spec.num_templates;
  const std::size_t P = spec.class_pool;
  const std::size_t D = spec.dim;
  const auto classes = spec.classes();
  const std::size_t K = classes.size();

  // World: prototypes, corruption levels and directions for the whole pool.
  Rng world(splitmix(spec.effective_world_seed()));
  const auto protos = draw_prototypes(world, P, D, spec.min_angle_deg);
  const auto basis = orthonormal_basis(protos);
  const auto sigma_pool = pool_sigma(spec, world);

  auto off_prototypes = [&](std::vector<double> v) {
    for (const auto& b : basis) {
      const double proj = dot(v, b);
      for (std::size_t i = 0; i < D; ++i) v[i] -= proj * b[i];
    }
    normalize(v);
    return v;
  };
  std::vector<std::vector<double>> shared(P);
  for (auto& v : shared) v = off_prototypes(gaussian(world, D));
  const double a = std::sqrt(spec.shared_perturbation);
  const double b = std::sqrt(1.0 - spec.shared_perturbation);

  std::vector<double> bank_values(M * K * D);
  std::vector<double> pool_row;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t c = 0; c < P; ++c) {
      auto delta = off_prototypes(gaussian(world, D));
      for (std::size_t i = 0; i < D; ++i) delta[i] = a * shared[c][i] + b * delta[i];
      normalize(delta);
      const auto pos = std::find(classes.begin(), classes.end(), c);
      if (pos == classes.end()) continue;
      const auto k = static_cast<std::size_t>(pos - classes.begin());
      const double s = sigma_pool[m * P + c];
      pool_row.assign(D, 0.0);
      for (std::size_t i = 0; i < D; ++i) pool_row[i] = protos[c][i] + s * delta[i];
      normalize(pool_row);
      std::copy(pool_row.begin(), pool_row.end(), bank_values.begin() + static_cast<std::ptrdiff_t>((m * K + k) * D));
    }
  }
  // Round through f32 so the in-memory bank equals what a reader of the file sees.
  for (double& v : bank_values) v = static_cast<double>(static_cast<float>(v));
  TextBank bank(M, K, D, std::move(bank_values));

  PlantedTruth planted;
  planted.num_templates = M;
  planted.num_classes = K;
  planted.pool_classes = classes;
  planted.sigma.resize(M * K);
  planted.order.resize(K);
  planted.experts.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t m = 0; m < M; ++m) planted.sigma[m * K + k] = sigma_pool[m * P + classes[k]];
    auto& order = planted.order[k];
    order.resize(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return planted.sigma_at(a, k) < planted.sigma_at(b, k); });
    planted.experts[k].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.planted_experts));
    std::sort(planted.experts[k].begin(), planted.experts[k].end());
  }

  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.name = spec.name;
  manifest.method = "synthetic";
  for (auto c : classes) manifest.class_names.push_back(class_name(c));
  manifest.template_strings = template_strings(M);
  manifest.ignore_index = K <= 255 ? 255 : 65535;
  manifest.feature_dim = D;
  manifest.base_dir = out_dir;
  manifest.text_bank_path = out_dir / "text_bank.ovst";
  write_tensor(manifest.text_bank_path, bank.to_tensor_f32());

  // Images: Voronoi layouts over the dataset's classes, every class present.
  Rng images(splitmix(spec.seed ^ 0xD1B54A32D192ED03ULL));
  const GridShape g = spec.grid;
  const GridShape lab{g.height * spec.label_scale, g.width * spec.label_scale};
  const std::size_t num_sites = K + 3;
  const double noise_std = spec.pixel_noise / std::sqrt(static_cast<double>(D));
  std::vector<double> px(D);
  for (std::size_t n = 0; n < spec.num_images; ++n) {
    std::vector<std::uint16_t> site_class(num_sites);
    std::vector<std::uint16_t> perm(K);
    std::iota(perm.begin(), perm.end(), std::uint16_t{0});
    images.shuffle(perm);
    for (std::size_t s = 0; s < num_sites; ++s) {
      site_class[s] = s < K ? perm[s] : static_cast<std::uint16_t>(images.uniform_index(K));
    }
    std::vector<double> sy(num_sites), sx(num_sites);
    for (std::size_t s = 0; s < num_sites; ++s) {
      sy[s] = images.uniform() * static_cast<double>(g.height);
      sx[s] = images.uniform() * static_cast<double>(g.width);
    }
    auto class_at = [&](double y, double x) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < num_sites; ++s) {
        const double d = (y - sy[s]) * (y - sy[s]) + (x - sx[s]) * (x - sx[s]);
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      return site_class[best];
    };

    std::vector<float> feat(g.pixels() * D);
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const auto k = class_at(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5);
        const auto& proto = protos[classes[k]];
        for (std::size_t i = 0; i < D; ++i) px[i] = proto[i] + noise_std * images.normal();
        normalize(px);
        float* dst = feat.data() + (y * g.width + x) * D;
        for (std::size_t i = 0; i < D; ++i) dst[i] = static_cast<float>(px[i]);
      }
    }
    std::vector<std::uint16_t> labels(lab.pixels());
    const double inv = 1.0 / static_cast<double>(spec.label_scale);
    for (std::size_t y = 0; y < lab.height; ++y) {
      for (std::size_t x = 0; x < lab.width; ++x) {
        labels[y * lab.width + x] =
            class_at((static_cast<double>(y) + 0.5) * inv, (static_cast<double>(x) + 0.5) * inv);
      }
    }

    std::string id = std::to_string(n);
    id.insert(id.begin(), id.size() < 4 ? 4 - id.size() : 0, '0');
    id = "img_" + id;
    ManifestItem item;
    item.id = id;
    item.feature_path = out_dir / "features" / (id + ".ovst");
    item.label_path = out_dir / "labels" / (id + ".ovst");
    item.feature_grid = g;
    item.label_size = lab;
    write_tensor(item.feature_path, TensorFile::from_f32({g.height, g.width, D}, feat));
    write_tensor(*item.label_path, TensorFile::from_u16({lab.height, lab.width}, labels));
    manifest.items.push_back(std::move(item));
  }

  const fs::path manifest_path = out_dir / "manifest.json";
  save_manifest(manifest_path, manifest);
  {
    std::ofstream out(out_dir / "planted.json");
    if (!out) throw IoError("cannot write " + (out_dir / "planted.json").string());
    json doc = to_json(planted);
    doc["spec"] = to_json(spec);
    out << doc.dump(2) << '\n';
  }
  return {manifest_path, std::move(manifest), std::move(bank), std::move(planted)};
}

}  // namespace expertseg
