#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "causalrank/qtype.hpp"

using namespace causalrank;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

Dataset qtype_world(std::uint64_t seed, int n = 400) {
  WorldSpec s;
  s.n_candidates = 30;
  s.pool_size = 60;
  s.qtype_strength = 1.0;
  s.seed = seed;
  return generate(s, n);
}

std::vector<int> ids(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(QType, FitMatchesDirectCount) {
  const auto d = qtype_world(1);
  QTypeTableSpec spec;
  spec.relevance_threshold = 0.75;
  const auto t = fit_qtype_table(spec, d);
  std::map<std::pair<int, int>, long> direct;
  for (const auto& inst : d.instances)
    for (std::size_t c = 0; c < inst.size(); ++c)
      if (inst.observed_relevance[c] >= 0.75) ++direct[{inst.qtype, inst.candidates[c].pool_id}];
  long total = 0;
  for (int q = 0; q < t.n_types(); ++q)
    for (const auto& [id, n] : t.counts(q)) {
      EXPECT_EQ(n, (direct[{q, id}]));
      total += n;
    }
  long expected = 0;
  for (const auto& kv : direct) expected += kv.second;
  EXPECT_EQ(total, expected);
}

TEST(QType, InvariantToInstanceOrder) {
  const auto d = qtype_world(2);
  auto which = detail::all_indices(d);
  const auto t = fit_qtype_table({}, d, which);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(which.begin(), which.end(), rng);
    EXPECT_TRUE(fit_qtype_table({}, d, which) == t);
  }
}

TEST(QType, CountsConcentrateOnTheCommonAnswer) {
  QTypeTable t(QTypeTableSpec{2, 0, 0.0, 1.0});
  std::mt19937_64 rng(3);
  std::discrete_distribution<int> pick({6, 1, 1, 1, 1});
  for (int k = 0; k < 2000; ++k) t.add(1, pick(rng));
  const auto p = t.prior(1, ids(5));
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), 0);
  EXPECT_GT(p[0], 0.5);
}

TEST(QType, MinCountThreshold) {
  QTypeTable t(QTypeTableSpec{1, 5, 0.0, 1.0});
  t.add(0, 10, 5);
  t.add(0, 11, 6);
  EXPECT_EQ(t.mass(0, 10), 0.0);
  EXPECT_EQ(t.mass(0, 11), 6.0);
  const auto p = t.prior(0, std::vector<int>{10, 11});
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.0);
}

TEST(QType, EmptyTypeGivesUniformPrior) {
  const QTypeTable t(QTypeTableSpec{3, 5, 0.0, 1.0});
  for (double v : t.prior(2, ids(8))) EXPECT_DOUBLE_EQ(v, 1.0 / 8.0);
  const QTypeTable smoothed(QTypeTableSpec{3, 5, 1.0, 1.0});
  for (double v : smoothed.prior(2, ids(8))) EXPECT_DOUBLE_EQ(v, 1.0 / 8.0);
}

TEST(QType, PriorsSumToOne) {
  const auto d = qtype_world(4);
  const auto t = fit_qtype_table({8, 2, 0.5, 0.75}, d);
  for (const auto& inst : d.instances) {
    const auto p = t.prior(inst.qtype, inst.candidates);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    EXPECT_GE(*std::min_element(p.begin(), p.end()), 0.0);
  }
}

TEST(QType, Errors) {
  const QTypeTable t(QTypeTableSpec{3, 5, 1.0, 1.0});
  EXPECT_EQ(code_of([&] { t.prior(3, ids(2)); }), ErrorCode::UnknownType);
  EXPECT_EQ(code_of([&] { t.count(-1, 0); }), ErrorCode::UnknownType);
  const auto d = qtype_world(5, 10);
  EXPECT_EQ(code_of([&] { fit_qtype_table({}, d, {}); }), ErrorCode::EmptyDataset);
  EXPECT_EQ(code_of([] { QTypeTable(QTypeTableSpec{0, 5, 1.0, 1.0}); }), ErrorCode::ConfigError);
}

TEST(QType, ConvergesToTheAnswerDistribution) {
  const std::vector<double> truth{0.4, 0.25, 0.15, 0.1, 0.05, 0.03, 0.02};
  std::discrete_distribution<int> pick(truth.begin(), truth.end());
  std::mt19937_64 rng(6);
  QTypeTable t(QTypeTableSpec{1, 0, 0.0, 1.0});
  for (int k = 0; k < 10000; ++k) t.add(0, pick(rng));
  const auto p = t.prior(0, ids(static_cast<int>(truth.size())));
  double tv = 0.0;
  for (std::size_t c = 0; c < truth.size(); ++c) tv += 0.5 * std::abs(p[c] - truth[c]);
  EXPECT_LT(tv, 0.02);
}

TEST(QType, JsonRoundTrip) {
  const auto d = qtype_world(7);
  const auto t = fit_qtype_table({8, 1, 0.25, 0.75}, d);
  const auto back = qtype_table_from_json(to_json(t));
  EXPECT_TRUE(back == t);
  EXPECT_EQ(to_json(back).dump(), to_json(t).dump());
  EXPECT_EQ(code_of([] { qtype_table_from_json(nlohmann::json{{"format", "x"}}); }), ErrorCode::ParseError);
}

TEST(QType, PrefixTypeIndex) {
  PrefixTypeIndex idx(3);
  EXPECT_EQ(idx.type_of({"What", "color", "is", "it"}), 0);
  EXPECT_EQ(idx.type_of({"what", "COLOR", "are"}), 0);
  EXPECT_EQ(idx.type_of({"is", "there"}), 1);
  EXPECT_EQ(idx.type_of({"how", "many"}), 2);
  EXPECT_EQ(idx.type_of({"where", "is"}), 2);
  EXPECT_EQ(idx.lookup({"is", "there", "a"}), 1);
  EXPECT_EQ(idx.lookup({"why"}), 2);
  EXPECT_EQ(idx.types().size(), 2u);
}
