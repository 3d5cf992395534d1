#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "multimae/objective.hpp"
#include "test_util.hpp"

using namespace multimae;
using namespace testutil;

namespace {

// One modality, grid of 2 tokens visible out of `grid2`.
MaskPlan plan_with(Modality m, std::vector<std::size_t> visible) {
  MaskPlan p;
  p.modalities = {m};
  p.counts = {visible.size()};
  p.visible = {std::move(visible)};
  return p;
}

double dot_grad_at_rows(const T64& pred, std::size_t row, std::size_t width) {
  double s = 0.0;
  for (std::size_t k = 0; k < width; ++k) s += std::abs(pred.grad()[row * width + k]);
  return s;
}

}  // namespace

TEST(PatchStandardize, ConstantPatchIsZero) {
  std::vector<double> v(8, 3.0);
  for (double x : per_patch_standardize_values<double>(v, 8)) EXPECT_EQ(x, 0.0);
}

TEST(PatchStandardize, AlternatingPatchUnchanged) {
  std::vector<double> v{1, -1, 1, -1, 1, -1};
  const auto out = per_patch_standardize_values<double>(v, 6);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], v[i], 1e-6);
}

TEST(PatchStandardize, RandomPatchStatistics) {
  Rng rng(4);
  std::vector<double> v(5 * 48);
  for (auto& x : v) x = rng.uniform(-3.0, 7.0);
  const auto out = per_patch_standardize_values<double>(v, 48);
  for (std::size_t p = 0; p < 5; ++p) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < 48; ++j) mu += out[p * 48 + j];
    mu /= 48;
    for (std::size_t j = 0; j < 48; ++j) sq += (out[p * 48 + j] - mu) * (out[p * 48 + j] - mu);
    EXPECT_NEAR(mu, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / 48), 1.0, 1e-4);
  }
}

TEST(PatchStandardize, PatchDimOneIsDimensionError) {
  std::vector<double> v(4, 1.0);
  EXPECT_THROW(per_patch_standardize_values<double>(v, 1), DimensionError);
}

TEST(MaskedMse, ZeroPredUnitTargetIsOne) {
  auto pred = T64::zeros({1, 3, 4});
  std::vector<double> target(12, 1.0);
  const std::vector<MaskPlan> plans{plan_with(Modality::rgb, {1})};
  EXPECT_DOUBLE_EQ(masked_mse(pred, target, plans, Modality::rgb).item(), 1.0);
}

TEST(MaskedMse, VisibleTargetPerturbationIsInvisible) {
  auto pred = random_leaf({2, 4, 3}, 1);
  Rng rng(2);
  std::vector<double> target(24);
  for (auto& x : target) x = rng.uniform(-1, 1);
  const std::vector<MaskPlan> plans{plan_with(Modality::rgb, {0, 2}), plan_with(Modality::rgb, {3})};
  const double base = masked_mse(pred, target, plans, Modality::rgb).item();
  auto t2 = target;
  for (std::size_t k = 0; k < 3; ++k) {
    t2[0 * 3 + k] += 5.0;
    t2[2 * 3 + k] -= 2.0;
    t2[(4 + 3) * 3 + k] += 1.0;
  }
  EXPECT_EQ(masked_mse(pred, t2, plans, Modality::rgb).item(), base);
}

TEST(MaskedMse, GradientZeroAtVisibleRows) {
  auto pred = random_leaf({2, 4, 3}, 3);
  std::vector<double> target(24, 0.5);
  const std::vector<MaskPlan> plans{plan_with(Modality::rgb, {0, 2}), plan_with(Modality::rgb, {3})};
  masked_mse(pred, target, plans, Modality::rgb).backward();
  for (std::size_t row : {0u, 2u, 7u}) EXPECT_EQ(dot_grad_at_rows(pred, row, 3), 0.0);
  for (std::size_t row : {1u, 3u, 4u, 5u, 6u}) EXPECT_GT(dot_grad_at_rows(pred, row, 3), 0.0);
}

TEST(MaskedMse, GradientMatchesFiniteDifferences) {
  auto pred = random_leaf({2, 4, 3}, 5);
  Rng rng(6);
  std::vector<double> target(24);
  for (auto& x : target) x = rng.uniform(-1, 1);
  const std::vector<MaskPlan> plans{plan_with(Modality::rgb, {1}), plan_with(Modality::rgb, {0, 3})};
  expect_grads("masked_mse", {pred}, [&] { return masked_mse(pred, target, plans, Modality::rgb); });
}

TEST(MaskedL1, ZeroPredMinusTwoTargetIsTwo) {
  auto pred = T64::zeros({1, 4, 2});
  std::vector<double> target(8, -2.0);
  const std::vector<MaskPlan> plans{plan_with(Modality::depth, {0})};
  EXPECT_DOUBLE_EQ(masked_l1(pred, target, plans, Modality::depth).item(), 2.0);
}

TEST(MaskedL1, IdenticalTensorsGiveZero) {
  auto pred = random_leaf({1, 4, 2}, 7);
  const std::vector<double> target(pred.data().begin(), pred.data().end());
  const std::vector<MaskPlan> plans{plan_with(Modality::depth, {2})};
  EXPECT_EQ(masked_l1(pred, target, plans, Modality::depth).item(), 0.0);
}

TEST(MaskedL1, SubgradientAtZeroIsZero) {
  auto pred = T64::from_data({1, 1, 2}, {1.0, 1.0}, true);
  const std::vector<double> target{1.0, 0.0};
  const std::vector<MaskPlan> plans{plan_with(Modality::depth, {})};
  masked_l1(pred, target, plans, Modality::depth).backward();
  EXPECT_EQ(pred.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(pred.grad()[1], 0.5);
}

TEST(MaskedL1, GradientMatchesFiniteDifferencesAwayFromKinks) {
  auto pred = random_leaf({1, 4, 3}, 8);
  std::vector<double> target(12);
  // Keep every residual at least 0.5 away from zero.
  for (std::size_t i = 0; i < 12; ++i) target[i] = pred.data()[i] + (i % 2 ? 0.7 : -0.9);
  const std::vector<MaskPlan> plans{plan_with(Modality::depth, {1})};
  expect_grads("masked_l1", {pred}, [&] { return masked_l1(pred, target, plans, Modality::depth); });
}

TEST(MaskedL1, InvalidPixelsExcludedFromAverage) {
  auto pred = T64::zeros({1, 2, 2});
  const std::vector<double> target{4.0, 100.0, 2.0, 2.0};
  const std::vector<double> weights{1.0, 0.0, 1.0, 1.0};
  const std::vector<MaskPlan> plans{plan_with(Modality::depth, {})};
  EXPECT_DOUBLE_EQ(masked_l1(pred, target, plans, Modality::depth, weights).item(), 8.0 / 3.0);
}

TEST(MaskedCrossEntropy, UniformLogitsGiveLogClassCount) {
  auto logits = T64::zeros({1, 2, 16 * 133});
  std::vector<std::uint8_t> classes(2 * 16, 5);
  const std::vector<MaskPlan> plans{plan_with(Modality::semseg, {1})};
  EXPECT_NEAR(masked_cross_entropy(logits, classes, 133, plans).item(), std::log(133.0), 1e-12);
  EXPECT_NEAR(std::log(133.0), 4.890, 5e-4);
}

TEST(MaskedCrossEntropy, LargeMarginCorrectLogitsApproachZero) {
  const std::size_t C = 4;
  std::vector<std::uint8_t> classes{0, 3, 2, 1};
  std::vector<double> v(4 * C, 0.0);
  for (std::size_t p = 0; p < 4; ++p) v[p * C + classes[p]] = 50.0;
  auto logits = T64::from_data({1, 1, 4 * C}, v);
  const std::vector<MaskPlan> plans{plan_with(Modality::semseg, {})};
  EXPECT_LT(masked_cross_entropy(logits, classes, C, plans).item(), 1e-20);
}

TEST(MaskedCrossEntropy, MatchesIndependentLogSumExp) {
  const std::size_t C = 7, pixels = 5;
  auto logits = random_leaf({1, 1, pixels * C}, 9, -4.0, 4.0);
  const std::vector<std::uint8_t> classes{0, 6, 3, 3, 1};
  double oracle = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    double mx = -1e300;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits.data()[p * C + c]);
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(logits.data()[p * C + c] - mx);
    oracle += mx + std::log(se) - logits.data()[p * C + classes[p]];
  }
  oracle /= pixels;
  const std::vector<MaskPlan> plans{plan_with(Modality::semseg, {})};
  EXPECT_NEAR(masked_cross_entropy(logits, classes, C, plans).item(), oracle, 1e-6);
}

TEST(MaskedCrossEntropy, InvalidClassIsDataError) {
  auto logits = T64::zeros({1, 1, 4 * 3});
  const std::vector<std::uint8_t> classes{0, 1, 2, 3};
  const std::vector<MaskPlan> plans{plan_with(Modality::semseg, {})};
  EXPECT_THROW(masked_cross_entropy(logits, classes, 3, plans), DataError);
}

TEST(MaskedCrossEntropy, GradientZeroAtVisibleAndMatchesFiniteDifferences) {
  const std::size_t C = 3;
  auto logits = random_leaf({1, 3, 4 * C}, 10);
  const std::vector<std::uint8_t> classes{0, 1, 2, 0, 1, 1, 2, 2, 0, 0, 2, 1};
  const std::vector<MaskPlan> plans{plan_with(Modality::semseg, {1})};
  expect_grads("masked_ce", {logits}, [&] { return masked_cross_entropy(logits, classes, C, plans); });
  logits.zero_grad();
  masked_cross_entropy(logits, classes, C, plans).backward();
  EXPECT_EQ(dot_grad_at_rows(logits, 1, 4 * C), 0.0);
  EXPECT_GT(dot_grad_at_rows(logits, 0, 4 * C), 0.0);
}

namespace {

TaskTerm<double> fixed_term(Task t, double value, double count = 1.0) {
  TaskTerm<double> term;
  term.task = t;
  term.error_sum = T64::scalar(value * count, true);
  term.count = count;
  return term;
}

}  // namespace

TEST(TotalLoss, MeanOfTwoTasks) {
  std::vector<TaskTerm<double>> terms{fixed_term(Task::rgb, 1.0), fixed_term(Task::depth, 3.0)};
  EXPECT_DOUBLE_EQ(total_loss(terms).item(), 2.0);
}

TEST(TotalLoss, SingleTaskIsIdentity) {
  std::vector<TaskTerm<double>> terms{fixed_term(Task::semseg, 0.75, 4.0)};
  EXPECT_DOUBLE_EQ(total_loss(terms).item(), 0.75);
}

TEST(TotalLoss, GradientWrtEachTaskIsOneOverCount) {
  std::vector<TaskTerm<double>> terms{fixed_term(Task::rgb, 1.0), fixed_term(Task::rgb_standardized, 2.0),
                                      fixed_term(Task::depth, 3.0), fixed_term(Task::semseg, 4.0)};
  total_loss(terms).backward();
  for (const auto& t : terms) EXPECT_DOUBLE_EQ(t.error_sum.grad()[0], 0.25);
}

TEST(TotalLoss, PermutationInvariant) {
  std::vector<TaskTerm<double>> a{fixed_term(Task::rgb, 0.3), fixed_term(Task::depth, 1.7),
                                  fixed_term(Task::semseg, 2.2)};
  std::vector<TaskTerm<double>> b{a[2], a[0], a[1]};
  EXPECT_DOUBLE_EQ(total_loss(a).item(), total_loss(b).item());
}

TEST(TotalLoss, ZeroCountTaskExcluded) {
  std::vector<TaskTerm<double>> terms{fixed_term(Task::rgb, 1.0), fixed_term(Task::depth, 0.0, 0.0)};
  LossReport report;
  EXPECT_DOUBLE_EQ(total_loss(terms, &report).item(), 1.0);
  EXPECT_EQ(report.masked_counts[1], 0.0);
  EXPECT_EQ(report.losses[1], 0.0);
}

TEST(TotalLoss, EmptyIsContractError) {
  EXPECT_THROW(total_loss(std::vector<TaskTerm<double>>{}), ContractError);
}

TEST(TotalLoss, ExtremePlansAreFinite) {
  auto pred = random_leaf({1, 4, 2}, 11);
  const std::vector<double> target(8, 0.1);
  // All masked.
  const std::vector<MaskPlan> none{plan_with(Modality::rgb, {})};
  // All visible except one token.
  const std::vector<MaskPlan> one{plan_with(Modality::rgb, {0, 1, 3})};
  // Fully visible.
  const std::vector<MaskPlan> all{plan_with(Modality::rgb, {0, 1, 2, 3})};
  for (const auto* plans : {&none, &one, &all}) {
    std::vector<TaskTerm<double>> terms{masked_mse_term(Task::rgb, pred, std::span<const double>(target), masked_rows(*plans, Modality::rgb, 4))};
    EXPECT_TRUE(std::isfinite(total_loss(terms).item()));
  }
}

TEST(LossReport, StructuredLine) {
  LossReport r;
  r.step = 12;
  r.lr = 1e-3;
  r.tasks = {Task::rgb, Task::semseg};
  r.losses = {0.5, 2.0};
  r.total = 1.25;
  EXPECT_EQ(r.to_line(), "step=12 lr=1.000000000e-03 rgb=5.000000000e-01 semseg=2.000000000e+00 total=1.250000000e+00");
}
