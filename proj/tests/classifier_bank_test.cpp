#include <gtest/gtest.h>

#include <numeric>

#include "expertseg/classifier_bank.hpp"
#include "test_util.hpp"

using namespace expertseg;

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void expect_unit_rows(const Classifier& c) {
  for (std::size_t k = 0; k < c.num_classes; ++k) EXPECT_NEAR(norm(c.row(k)), 1.0, 1e-12);
}

}  // namespace

TEST(ClassifierBank, AverageOfOneTemplateEqualsSingle) {
  Rng rng(1);
  const auto bank = testutil::random_bank(rng, 1, 4, 6);
  const auto a = build_average_classifier(bank);
  const auto s = build_single_template_classifier(bank, 0);
  ASSERT_EQ(a.weights.size(), s.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_NEAR(a.weights[i], s.weights[i], 1e-15);
}

TEST(ClassifierBank, OppositeEmbeddingsCancel) {
  std::vector<double> v{1, 2, 0, /*class1*/ 0, 1, 0, /*m=1*/ -1, -2, 0, 0, 1, 0};
  const TextBank bank(2, 2, 3, v);
  EXPECT_THROW(build_average_classifier(bank), ValidationError);
}

TEST(ClassifierBank, IdenticalEmbeddingsGiveNormalizedVector) {
  std::vector<double> v;
  for (int m = 0; m < 3; ++m) v.insert(v.end(), {3, 4, 0, 0, 0, 2});
  const auto c = build_average_classifier(TextBank(3, 2, 3, v));
  EXPECT_NEAR(c.weights[0], 0.6, 1e-15);
  EXPECT_NEAR(c.weights[1], 0.8, 1e-15);
  EXPECT_NEAR(c.weights[5], 1.0, 1e-15);
}

TEST(ClassifierBank, SingleTemplateNormalizes) {
  std::vector<double> v{2, 0, 0, 0, 1, 0, /*m=1*/ 0, 0, 1, 1, 0, 0};
  const TextBank bank(2, 2, 3, v);
  const auto c0 = build_single_template_classifier(bank, 0);
  EXPECT_EQ(c0.weights, (std::vector<double>{1, 0, 0, 0, 1, 0}));
  const auto c1 = build_single_template_classifier(bank, 1);
  EXPECT_EQ(c1.weights, (std::vector<double>{0, 0, 1, 1, 0, 0}));
  EXPECT_THROW(build_single_template_classifier(bank, 2), ValidationError);
}

TEST(ClassifierBank, RenormalizeFlag) {
  std::vector<double> v{1, 0, 0, 1, /*m=1*/ 0, 1, 1, 0};
  const TextBank bank(2, 2, 2, v);
  const auto raw = build_average_classifier(bank, {.renormalize_mean = false});
  EXPECT_NEAR(norm(raw.row(0)), std::sqrt(0.5), 1e-15);
  expect_unit_rows(build_average_classifier(bank));
}

TEST(ClassifierBank, FullSubsetEqualsAverage) {
  Rng rng(2);
  const auto bank = testutil::random_bank(rng, 5, 3, 8);
  std::vector<std::size_t> all(5);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(build_template_subset_classifier(bank, all).weights, build_average_classifier(bank).weights);
}

TEST(ClassifierBank, SingletonExpertListsEqualSingleTemplate) {
  Rng rng(3);
  const auto bank = testutil::random_bank(rng, 4, 3, 5);
  const std::vector<std::vector<std::size_t>> lists{{2}, {0}, {3}};
  const auto experts = build_expert_classifiers(bank, lists);
  ASSERT_EQ(experts.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(experts[k].weights, build_single_template_classifier(bank, lists[k][0]).weights);
  }
}

TEST(ClassifierBank, ExpertClassifiersHaveKUnitRows) {
  Rng rng(4);
  const auto bank = testutil::random_bank(rng, 8, 5, 16);
  std::vector<std::vector<std::size_t>> lists;
  for (std::size_t k = 0; k < 5; ++k) lists.push_back(rng.sample(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}, 4));
  for (const auto& c : build_expert_classifiers(bank, lists)) {
    EXPECT_EQ(c.num_classes, 5u);
    expect_unit_rows(c);
  }
  lists[2].clear();
  EXPECT_THROW(build_expert_classifiers(bank, lists), ValidationError);
}

TEST(ClassifierBank, SubsetOrderIsIrrelevantBitwise) {
  Rng rng(5);
  const auto bank = testutil::random_bank(rng, 10, 4, 12);
  std::vector<std::size_t> t{7, 1, 4, 9, 2};
  const auto ref = build_template_subset_classifier(bank, t);
  for (int rep = 0; rep < 20; ++rep) {
    rng.shuffle(t);
    EXPECT_EQ(build_template_subset_classifier(bank, t).weights, ref.weights);
  }
}

TEST(ClassifierBank, SubsetRejectsOutOfRangeAndEmpty) {
  Rng rng(6);
  const auto bank = testutil::random_bank(rng, 3, 2, 4);
  const std::vector<std::size_t> bad{0, 3};
  EXPECT_THROW(build_template_subset_classifier(bank, bad), ValidationError);
  const std::vector<std::size_t> empty;
  EXPECT_THROW(build_template_subset_classifier(bank, empty), ValidationError);
}

TEST(ClassifierBank, BankValidation) {
  EXPECT_THROW(TextBank(2, 2, 2, std::vector<double>(7, 1.0)), ValidationError);
  std::vector<double> v(8, 1.0);
  v[4] = v[5] = 0.0;
  EXPECT_THROW(TextBank(2, 2, 2, v), ValidationError);
}

TEST(ClassifierBank, SelectClassesAndTensorRoundTrip) {
  Rng rng(7);
  const auto bank = testutil::random_bank(rng, 3, 4, 2);
  const std::vector<std::size_t> pick{3, 1};
  const auto sub = bank.select_classes(pick);
  ASSERT_EQ(sub.num_classes(), 2u);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_TRUE(std::equal(sub.embedding(m, 0).begin(), sub.embedding(m, 0).end(), bank.embedding(m, 3).begin()));
    EXPECT_TRUE(std::equal(sub.embedding(m, 1).begin(), sub.embedding(m, 1).end(), bank.embedding(m, 1).begin()));
  }
  const auto back = TextBank::from_tensor(bank.to_tensor_f32());
  for (std::size_t i = 0; i < bank.values().size(); ++i) {
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(bank.values()[i])));
  }
}
