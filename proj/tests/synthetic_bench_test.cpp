#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "expertseg/pipeline.hpp"
#include "expertseg/synthetic_bench.hpp"
#include "expertseg/tensor_store.hpp"
#include "test_util.hpp"

using namespace expertseg;
using testutil::TempDir;

namespace {

SynthSpec seeded(std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  return s;
}

std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = testutil::slurp(e.path());
  }
  return out;
}

}  // namespace

TEST(Synth, RejectsAllZeroSigma) {
  auto s = seeded(0);
  s.sigma.assign(s.num_templates * s.class_pool, 0.0);
  EXPECT_THROW(validate(s), ValidationError);
  TempDir dir("syn");
  EXPECT_THROW(generate(s, dir.path()), ValidationError);
}

TEST(Synth, RejectsNonStrictLevels) {
  auto s = seeded(0);
  s.sigma_levels = {0, 0.1, 0.2, 0.2, 1, 2, 3, 4};
  EXPECT_THROW(validate(s), ValidationError);
  s.sigma_levels = {0, 0.1, 0.2};
  EXPECT_THROW(validate(s), ValidationError);
}

TEST(Synth, SpecValidation) {
  auto bad = [](auto mutate) {
    auto s = seeded(0);
    mutate(s);
    EXPECT_THROW(validate(s), ValidationError);
  };
  bad([](SynthSpec& s) { s.num_templates = 0; });
  bad([](SynthSpec& s) { s.dim = 5; });
  bad([](SynthSpec& s) { s.num_images = 0; });
  bad([](SynthSpec& s) { s.planted_experts = 9; });
  bad([](SynthSpec& s) { s.shared_perturbation = 1.5; });
  bad([](SynthSpec& s) { s.min_angle_deg = 120; });
  bad([](SynthSpec& s) { s.class_subset = {1}; });
  bad([](SynthSpec& s) { s.class_subset = {0, 0, 1}; });
  bad([](SynthSpec& s) { s.class_subset = {0, 5}; });
  EXPECT_NO_THROW(validate(seeded(0)));
}

TEST(Synth, DefaultLevels) {
  const auto l = default_sigma_levels(8, 4);
  ASSERT_EQ(l.size(), 8u);
  EXPECT_EQ(l[0], 0.0);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_GT(l[i], l[i - 1]);
  // Experts keep cosine 1/sqrt(1 + s^2) to the prototype above 0.8, the rest below 0.31.
  for (std::size_t i = 0; i < 4; ++i) EXPECT_GE(1.0 / std::sqrt(1 + l[i] * l[i]), 0.8);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_LE(1.0 / std::sqrt(1 + l[i] * l[i]), 0.31);
}

TEST(Synth, SameSeedByteIdentical) {
  TempDir a("syn"), b("syn"), c("syn");
  generate(seeded(5), a.path());
  generate(seeded(5), b.path());
  generate(seeded(6), c.path());
  const auto ta = tree(a.path()), tb = tree(b.path()), tc = tree(c.path());
  EXPECT_EQ(ta.size(), 2u + 2u * 20u + 1u);
  EXPECT_EQ(ta, tb);
  EXPECT_NE(ta.at("features/img_0000.ovst"), tc.at("features/img_0000.ovst"));
}

TEST(Synth, LayoutAndLabels) {
  TempDir dir("syn");
  auto s = seeded(1);
  s.label_scale = 2;
  s.num_images = 3;
  const auto d = generate(s, dir.path());
  const auto m = load_manifest(d.manifest_path);
  EXPECT_EQ(m.num_classes(), 5u);
  EXPECT_EQ(m.num_templates(), 8u);
  EXPECT_EQ(m.feature_dim, 32u);
  EXPECT_EQ(m.class_names[3], "class_03");
  ASSERT_EQ(m.items.size(), 3u);
  for (const auto& item : m.items) {
    EXPECT_EQ(item.feature_grid, (GridShape{16, 16}));
    EXPECT_EQ(item.label_size, (GridShape{32, 32}));
    const auto l = load_labels(item);
    const std::set<std::uint16_t> present(l.labels.begin(), l.labels.end());
    EXPECT_EQ(present.size(), 5u);
    // Labels are rasterized at label resolution: only region boundaries split a feature cell.
    int uniform = 0;
    for (std::size_t y = 0; y < 32; y += 2)
      for (std::size_t x = 0; x < 32; x += 2) {
        const auto v = l.labels[y * 32 + x];
        uniform += v == l.labels[y * 32 + x + 1] && v == l.labels[(y + 1) * 32 + x] &&
                   v == l.labels[(y + 1) * 32 + x + 1];
      }
    EXPECT_GT(uniform, 256 * 3 / 4);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "planted.json"));
}

TEST(Synth, PlantedTruthStructure) {
  TempDir dir("syn");
  auto s = seeded(2);
  s.class_pool = 8;
  const auto d = generate(s, dir.path());
  const auto& p = d.planted;
  ASSERT_EQ(p.num_classes, 8u);
  std::vector<int> per_template(8, 0);
  for (std::size_t k = 0; k < 8; ++k) {
    ASSERT_EQ(p.experts[k].size(), 4u);
    for (std::size_t i = 1; i < 8; ++i) EXPECT_LT(p.sigma_at(p.order[k][i - 1], k), p.sigma_at(p.order[k][i], k));
    std::vector<std::size_t> top(p.order[k].begin(), p.order[k].begin() + 4);
    std::sort(top.begin(), top.end());
    EXPECT_EQ(top, p.experts[k]);
    for (auto m : p.experts[k]) ++per_template[m];
  }
  for (int c : per_template) EXPECT_EQ(c, 4);  // 8 * 4 / 8 exactly
}

TEST(Synth, SharedWorldSharesEmbeddings) {
  TempDir a("syn"), b("syn");
  SynthSpec sa, sb;
  sa.class_pool = sb.class_pool = 8;
  sa.world_seed = sb.world_seed = 42;
  sa.seed = 1;
  sb.seed = 2;
  sa.class_subset = {0, 1, 2, 3, 4};
  sb.class_subset = {3, 4, 5, 6, 7};
  const auto da = generate(sa, a.path()), db = generate(sb, b.path());
  EXPECT_EQ(da.manifest.class_names[3], db.manifest.class_names[0]);
  for (std::size_t m = 0; m < 8; ++m) {
    EXPECT_TRUE(std::ranges::equal(da.bank.embedding(m, 3), db.bank.embedding(m, 0)));
    EXPECT_TRUE(std::ranges::equal(da.bank.embedding(m, 4), db.bank.embedding(m, 1)));
  }
  EXPECT_EQ(da.planted.experts[3], db.planted.experts[0]);
}

TEST(Synth, JsonSpecRoundTrip) {
  auto s = seeded(3);
  s.class_pool = 6;
  s.class_subset = {5, 0, 2};
  s.world_seed = 9;
  const auto back = synth_spec_from_json(to_json(s));
  EXPECT_EQ(back.class_subset, s.class_subset);
  EXPECT_EQ(back.world_seed, s.world_seed);
  EXPECT_EQ(back.num_templates, s.num_templates);
  EXPECT_EQ(back.pixel_noise, s.pixel_noise);
  EXPECT_THROW(synth_spec_from_json({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(synth_spec_from_json({{"grid", {1, 2, 3}}}), ValidationError);
  const auto k3 = synth_spec_from_json({{"K", 3}, {"class_pool", 6}});
  EXPECT_EQ(k3.classes(), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Synth, TrueExpertsRecoverPlanted) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    TempDir dir("syn");
    const auto d = generate(seeded(seed), dir.path());
    const auto ds = load_dataset(d.manifest_path);
    const auto t = true_experts(ds);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(t.experts[k], d.planted.experts[k]) << "seed " << seed;
  }
}

TEST(Synth, IouRankAgreesWithCorruption) {
  std::size_t pairs = 0, agree = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TempDir dir("syn");
    const auto d = generate(seeded(seed), dir.path());
    const auto t = true_experts(load_dataset(d.manifest_path));
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t a = 0; a < 8; ++a)
        for (std::size_t b = a + 1; b < 8; ++b) {
          ++pairs;
          const bool cleaner_a = d.planted.sigma_at(a, k) < d.planted.sigma_at(b, k);
          if ((t.iou(a, k) > t.iou(b, k)) == cleaner_a && t.iou(a, k) != t.iou(b, k)) ++agree;
        }
  }
  EXPECT_GE(double(agree) / double(pairs), 0.95) << agree << " / " << pairs;
}
