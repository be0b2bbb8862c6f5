#include <gtest/gtest.h>

#include "checks.hpp"

namespace {

void expect_ok(const checks::Outcome& o, std::size_t min_cases) {
  EXPECT_GE(o.cases, min_cases);
  EXPECT_EQ(o.failures, 0u) << o.first_failure;
}

TEST(Properties, ScoresAreBounded) { expect_ok(checks::boundedness(1, 150), 100); }

TEST(Properties, AttentionWeightsSumToOne) {
  expect_ok(checks::attention_normalization(2, 500), 100);
}

TEST(Properties, TinyTemperatureGivesUniformAttention) {
  expect_ok(checks::uniform_limit(3, 200), 100);
}

TEST(Properties, RankingIgnoresQueryScale) { expect_ok(checks::scale_invariance(4, 150), 100); }

TEST(Properties, FusionIsMonotoneInGlobalScore) {
  expect_ok(checks::monotone_fusion(5, 10000), 100);
}

TEST(Properties, ExtremeAlphaDegeneratesToOneScore) {
  expect_ok(checks::alpha_degeneracy(6, 150), 100);
}

TEST(Properties, EngineMatchesNaiveOracle) { expect_ok(checks::oracle_equivalence(7, 5, 10), 5); }

TEST(Properties, AttentionAtLargeTemperatureStaysFinite) {
  std::vector<float> q{1, 0};
  std::vector<float> t{1, 0, -1, 0};
  auto w = xmodal::attention_weights(q, {t, 2, 2}, 1e6);
  EXPECT_NEAR(w[0], 1.0, 1e-12);
  EXPECT_NEAR(w[1], 0.0, 1e-12);
}

}  // namespace
