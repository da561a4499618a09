#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "causalrank/metrics.hpp"
#include "ndcg_oracle.hpp"

using namespace causalrank;

namespace {

std::vector<double> quarter_relevance(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> q(0, 4);
  std::vector<double> r(static_cast<std::size_t>(n));
  for (auto& v : r) v = q(rng) / 4.0;
  r[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, n - 1)(rng))] = 0.25 * (1 + q(rng) % 4);
  return r;
}

std::vector<int> shuffled(std::mt19937_64& rng, int n) {
  std::vector<int> o(static_cast<std::size_t>(n));
  std::iota(o.begin(), o.end(), 0);
  std::shuffle(o.begin(), o.end(), rng);
  return o;
}

std::vector<int> ideal_order(const std::vector<double>& rel) {
  return rank_by_score(rel);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

}  // namespace

TEST(Metrics, IdealOrderingScoresOne) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rel = quarter_relevance(rng, 10);
    EXPECT_EQ(ndcg({ideal_order(rel), rel}), 1.0);
  }
}

TEST(Metrics, SingleRelevantTruncation) {
  const std::vector<double> rel{1, 0, 0, 0};
  EXPECT_EQ(ndcg({{0, 1, 2, 3}, rel}), 1.0);
  EXPECT_EQ(ndcg({{1, 0, 2, 3}, rel}), 0.0);
  EXPECT_EQ(ndcg({{3, 2, 1, 0}, rel}), 0.0);
}

TEST(Metrics, HandComputedValue) {
  // k = 2; DCG = 0.5/log2(2) + 0 ; IDCG = 1 + 0.5/log2(3)
  const std::vector<double> rel{0.0, 1.0, 0.5};
  EXPECT_NEAR(ndcg({{2, 0, 1}, rel}), 0.5 / (1.0 + 0.5 / std::log2(3.0)), 1e-15);
}

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rel = quarter_relevance(rng, 10);
    const auto order = shuffled(rng, 10);
    EXPECT_NEAR(ndcg({order, rel}), testutil::brute_force_ndcg(order, rel), 1e-12);
  }
}

TEST(Metrics, Errors) {
  EXPECT_EQ(code_of([] { ndcg({{0, 1}, {0.0, 0.0}}); }), ErrorCode::NoRelevantCandidates);
  EXPECT_EQ(code_of([] { ndcg({{0, 0}, {1.0, 0.0}}); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([] { ndcg({{0}, {1.0, 0.0}}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([] { mrr({{0, 1}, {1.0, 0.0}}, 2); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([] { mean_rank_of({{0, 1}, {1.0, 0.0}}, [](int) { return false; }); }), ErrorCode::NoMatch);
}

TEST(Metrics, ReciprocalRank) {
  const RankingResult r{{3, 1, 0, 2}, {0, 0, 0, 0}};
  EXPECT_EQ(mrr(r, 3), 1.0);
  EXPECT_EQ(mrr(r, 2), 0.25);
}

TEST(Metrics, MeanRank) {
  const RankingResult r{{3, 1, 0, 2}, {0, 0, 0, 0}};
  EXPECT_EQ(mean_rank_of(r, [](int c) { return c == 3; }), 1.0);
  EXPECT_EQ(mean_rank_of(r, [](int c) { return c == 1 || c == 2; }), 3.0);
}

TEST(Metrics, UniformRandomMeanRank) {
  std::mt19937_64 rng(3);
  const int n = 20;
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) total += mean_rank_of({shuffled(rng, n), std::vector<double>(n, 0.0)}, [](int c) { return c == 7; });
  EXPECT_NEAR(total / trials, (n + 1) / 2.0, 0.05 * (n + 1) / 2.0);
}

TEST(Metrics, StableTieBreaking) {
  EXPECT_EQ(rank_by_score(std::vector<double>{0.5, 1.0, 0.5, 1.0}), (std::vector<int>{1, 3, 0, 2}));
}

// Invariants -------------------------------------------------------------------

TEST(Metrics, BoundedAndOneOnlyForIdealTopK) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const auto rel = quarter_relevance(rng, 8);
    const auto order = shuffled(rng, 8);
    const double v = ndcg({order, rel});
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-15);
    const auto k = static_cast<std::size_t>(std::count_if(rel.begin(), rel.end(), [](double x) { return x > 0; }));
    std::vector<double> top, best;
    for (std::size_t j = 0; j < k; ++j) top.push_back(rel[static_cast<std::size_t>(order[j])]);
    auto ideal = rel;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    best.assign(ideal.begin(), ideal.begin() + static_cast<long>(k));
    EXPECT_EQ(std::abs(v - 1.0) < 1e-12, top == best);
  }
}

TEST(Metrics, InvariantUnderPermutingEqualRelevance) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rel = quarter_relevance(rng, 10);
    auto order = shuffled(rng, 10);
    const double before = ndcg({order, rel});
    // swap two positions holding equal relevance
    for (std::size_t a = 0; a < order.size(); ++a)
      for (std::size_t b = a + 1; b < order.size(); ++b)
        if (rel[static_cast<std::size_t>(order[a])] == rel[static_cast<std::size_t>(order[b])]) {
          std::swap(order[a], order[b]);
          EXPECT_NEAR(ndcg({order, rel}), before, 1e-14);
          std::swap(order[a], order[b]);
        }
  }
}

TEST(Metrics, AdjacentSwapTowardIdealNeverHurts) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const auto rel = quarter_relevance(rng, 10);
    auto order = shuffled(rng, 10);
    for (std::size_t j = 0; j + 1 < order.size(); ++j) {
      if (rel[static_cast<std::size_t>(order[j + 1])] > rel[static_cast<std::size_t>(order[j])]) {
        const double before = ndcg({order, rel});
        std::swap(order[j], order[j + 1]);
        EXPECT_GE(ndcg({order, rel}), before - 1e-15);
        std::swap(order[j], order[j + 1]);
      }
    }
  }
}
