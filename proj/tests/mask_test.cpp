#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "multimae/mask.hpp"

using namespace multimae;

namespace {

const std::vector<Modality> kThree{Modality::rgb, Modality::depth, Modality::semseg};

std::vector<std::size_t> alloc(std::vector<double> lambda, std::size_t v, std::vector<std::size_t> caps) {
  return allocate_counts(lambda, v, caps);
}

}  // namespace

TEST(Proportions, SingleModalityIsOne) {
  Rng rng(1);
  DirichletParams p;
  p.num_modalities = 1;
  EXPECT_EQ(sample_proportions(p, rng), std::vector<double>{1.0});
}

TEST(Proportions, EqualGivesExactThirds) {
  Rng rng(1);
  DirichletParams p;
  p.alpha = std::nullopt;
  const auto l = sample_proportions(p, rng);
  for (double x : l) EXPECT_EQ(x, 1.0 / 3.0);
}

TEST(Proportions, AlphaOneMoments) {
  Rng rng(2024);
  DirichletParams p;
  const int n = 100000;
  std::vector<double> mean(3, 0.0), sq(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto l = sample_proportions(p, rng);
    EXPECT_NEAR(std::accumulate(l.begin(), l.end(), 0.0), 1.0, 1e-12);
    for (int m = 0; m < 3; ++m) {
      mean[m] += l[m];
      sq[m] += l[m] * l[m];
    }
  }
  for (int m = 0; m < 3; ++m) {
    const double mu = mean[m] / n;
    const double var = sq[m] / n - mu * mu;
    EXPECT_NEAR(mu, 1.0 / 3.0, 0.005);
    EXPECT_NEAR(var, 1.0 / 18.0, 0.003);
  }
}

TEST(Proportions, SmallAlphaStaysOnSimplex) {
  Rng rng(5);
  DirichletParams p;
  p.alpha = 0.01;
  for (int i = 0; i < 1000; ++i) {
    const auto l = sample_proportions(p, rng);
    for (double x : l) {
      EXPECT_TRUE(std::isfinite(x));
      EXPECT_GE(x, 0.0);
    }
    EXPECT_NEAR(std::accumulate(l.begin(), l.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Proportions, InvalidAlphaIsConfigError) {
  DirichletParams p;
  p.alpha = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_THROW(parse_alpha("0"), ConfigError);
  EXPECT_THROW(parse_alpha("abc"), ConfigError);
  EXPECT_FALSE(parse_alpha("equal").has_value());
  EXPECT_DOUBLE_EQ(*parse_alpha("0.2"), 0.2);
}

TEST(Allocate, EqualThirdsOf98) {
  EXPECT_EQ(alloc({1.0 / 3, 1.0 / 3, 1.0 / 3}, 98, {196, 196, 196}), (std::vector<std::size_t>{33, 33, 32}));
}

TEST(Allocate, SimplexCorner) {
  EXPECT_EQ(alloc({1, 0, 0}, 98, {196, 196, 196}), (std::vector<std::size_t>{98, 0, 0}));
}

TEST(Allocate, HalfQuarterQuarter) {
  EXPECT_EQ(alloc({0.5, 0.25, 0.25}, 98, {196, 196, 196}), (std::vector<std::size_t>{49, 25, 24}));
}

TEST(Allocate, BudgetAboveCapsIsConfigError) {
  EXPECT_THROW(alloc({0.5, 0.5}, 10, {4, 4}), ConfigError);
}

TEST(Allocate, OverflowSpillsByRemainder) {
  // Corner proportions with a cap of 16 at desk scale.
  const auto c = alloc({0.9, 0.04, 0.06}, 16 + 4, {16, 16, 16});
  EXPECT_EQ(c[0], 16u);
  EXPECT_EQ(c[0] + c[1] + c[2], 20u);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_LE(c[m], 16u);
}

TEST(Allocate, LargestRemainderErrorBelowOneWithoutCaps) {
  Rng rng(3);
  DirichletParams p;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto l = sample_proportions(p, rng);
    const std::size_t V = 1 + rng.below(200);
    const auto c = allocate_counts(l, V, std::vector<std::size_t>(3, 1000));
    EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::size_t{0}), V);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_LT(std::abs(static_cast<double>(c[m]) - l[m] * V), 1.0);
  }
}

TEST(Allocate, EqualSplitDiffersByAtMostOne) {
  for (std::size_t V = 0; V <= 48; ++V) {
    const auto c = alloc({1.0 / 3, 1.0 / 3, 1.0 / 3}, V, {16, 16, 16});
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
    EXPECT_LE(*hi - *lo, 1u);
    EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::size_t{0}), V);
  }
}

TEST(Allocate, RelabelingPermutesCounts) {
  Rng rng(17);
  DirichletParams p;
  const std::vector<std::size_t> perm{2, 0, 1};
  for (int trial = 0; trial < 500; ++trial) {
    const auto l = sample_proportions(p, rng);
    std::vector<double> lp(3);
    for (std::size_t m = 0; m < 3; ++m) lp[m] = l[perm[m]];
    const auto c = alloc(l, 98, {196, 196, 196});
    const auto cp = alloc(lp, 98, {196, 196, 196});
    for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(cp[m], c[perm[m]]);
  }
}

TEST(VisibleIndices, FullAndEmpty) {
  Rng rng(1);
  const std::vector<std::size_t> counts{16, 0}, caps{16, 16};
  const auto idx = sample_visible_indices(counts, caps, rng);
  std::vector<std::size_t> all(16);
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_EQ(idx[0], all);
  EXPECT_TRUE(idx[1].empty());
}

TEST(VisibleIndices, UniformWithoutReplacement) {
  Rng rng(7);
  const std::vector<std::size_t> counts{49}, caps{196};
  std::vector<double> freq(196, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto idx = sample_visible_indices(counts, caps, rng);
    ASSERT_EQ(std::set<std::size_t>(idx[0].begin(), idx[0].end()).size(), 49u);
    for (std::size_t j : idx[0]) freq[j] += 1.0;
  }
  for (double f : freq) EXPECT_NEAR(f / n, 0.25, 0.01);
}

TEST(BuildPlan, SameSeedSamePlan) {
  DirichletParams p;
  const std::vector<std::size_t> caps{196, 196, 196};
  const auto a = build_mask_plan(p, kThree, caps, 42);
  const auto b = build_mask_plan(p, kThree, caps, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.seed, 42u);
  EXPECT_NE(a, build_mask_plan(p, kThree, caps, 43));
}

TEST(BuildPlan, VitBaseBudgetIsOneSixth) {
  DirichletParams p;
  const std::vector<std::size_t> caps{196, 196, 196};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto plan = build_mask_plan(p, kThree, caps, seed);
    EXPECT_EQ(plan.total_visible(), 98u);
    EXPECT_EQ(plan.total_visible() * 6, 588u);
    for (std::size_t m = 0; m < 3; ++m) {
      EXPECT_LE(plan.counts[m], 196u);
      EXPECT_EQ(plan.visible[m].size(), plan.counts[m]);
      EXPECT_TRUE(std::is_sorted(plan.visible[m].begin(), plan.visible[m].end()));
      EXPECT_EQ(std::adjacent_find(plan.visible[m].begin(), plan.visible[m].end()), plan.visible[m].end());
    }
  }
}

TEST(BuildPlan, SmallAlphaConcentratesOnOneModality) {
  const std::vector<std::size_t> caps{196, 196, 196};
  auto dominated = [&](double alpha) {
    DirichletParams p;
    p.alpha = alpha;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      const auto plan = build_mask_plan(p, kThree, caps, seed);
      const auto mx = *std::max_element(plan.counts.begin(), plan.counts.end());
      n += static_cast<double>(mx) / 98.0 > 0.9;
    }
    return n / 10000.0;
  };
  EXPECT_GT(dominated(0.2), dominated(1.0));
}

TEST(BuildPlan, ModalityCountMismatchIsContractError) {
  DirichletParams p;
  const std::vector<Modality> two{Modality::rgb, Modality::depth};
  const std::vector<std::size_t> caps{16, 16};
  EXPECT_THROW(build_mask_plan(p, two, caps, 1), ContractError);
}

TEST(PlanText, RoundTrip) {
  DirichletParams p;
  p.num_visible = 16;
  const std::vector<std::size_t> caps{16, 16, 16};
  const auto plan = build_mask_plan(p, kThree, caps, 9);
  const auto text = mask_plan_to_text(plan);
  EXPECT_EQ(text.rfind("seed=9\nrgb:", 0), 0u);
  EXPECT_EQ(mask_plan_from_text(text), plan);
}

TEST(PlanText, MalformedIsFormatError) {
  EXPECT_THROW(mask_plan_from_text("seed=1\nrgb 1,2\n"), FormatError);
  EXPECT_THROW(mask_plan_from_text("seed=1\nlidar:1,2\n"), FormatError);
  EXPECT_THROW(mask_plan_from_text("seed=1\nrgb:1,x\n"), FormatError);
  EXPECT_THROW(mask_plan_from_text("seed=1\nrgb:1,1\n"), FormatError);
}

TEST(FullPlan, EveryIndexVisible) {
  const std::vector<std::size_t> caps{4, 4, 4};
  const auto plan = full_mask_plan(kThree, caps);
  EXPECT_EQ(plan.total_visible(), 12u);
  for (Modality m : kThree)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(plan.is_visible(m, i));
}
