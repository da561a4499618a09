#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "causalrank/scorer.hpp"

using namespace causalrank;

namespace {

Dataset tiny_world(std::uint64_t seed = 1, int n = 60) {
  WorldSpec s;
  s.n_candidates = 20;
  s.pool_size = 60;
  s.feat_dim = 8;
  s.bias_strength = 0.5;
  s.seed = seed;
  return generate(s, n);
}

ScorerParams random_params(Variant v, Eigen::Index dim, std::uint64_t seed, Eigen::Index n_dict = 6) {
  auto p = init_params(v, dim, dim, seed, n_dict, 5, 0.3);
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index k = 0; k < p.w_g.size(); ++k) p.w_g.data()[k] = n(rng);
  for (Eigen::Index k = 0; k < p.bias.size(); ++k) p.bias.data()[k] = n(rng);
  return p;
}

Targets targets_of(const DialogInstance& inst) { return {inst.gt_index, inst.observed_relevance}; }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

const Variant kVariants[] = {Variant::Baseline, Variant::P1, Variant::P1Dict, Variant::BaselineDict};
const LossKind kLosses[] = {LossKind::CE, LossKind::R0, LossKind::R1, LossKind::R2, LossKind::R3};

}  // namespace

class ScorerGradient : public ::testing::TestWithParam<std::tuple<Variant, LossKind>> {};

TEST_P(ScorerGradient, MatchesCentralDifferences) {
  const auto [variant, kind] = GetParam();
  const auto d = tiny_world(3, 50);
  for (std::size_t n = 0; n < d.instances.size(); ++n) {
    const auto& inst = d.instances[n];
    const auto p = random_params(variant, 8, 100 + n);
    const auto t = targets_of(inst);
    const Eigen::VectorXd analytic = grad(p, inst, kind, t).grad.flat();
    const Eigen::VectorXd theta = p.flat();
    Eigen::VectorXd numeric(theta.size());
    auto probe = p;
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Eigen::VectorXd x = theta;
      x(k) += h;
      probe.set_flat(x);
      const double up = loss_at(probe, inst, kind, t);
      x(k) -= 2 * h;
      probe.set_flat(x);
      const double down = loss_at(probe, inst, kind, t);
      numeric(k) = (up - down) / (2 * h);
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
    ASSERT_LT((analytic - numeric).norm() / scale, 1e-5) << "instance " << n;
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariantsAndLosses, ScorerGradient,
                         ::testing::Combine(::testing::ValuesIn(kVariants), ::testing::ValuesIn(kLosses)),
                         [](const auto& info) {
                           return std::string(to_string(std::get<0>(info.param))) + "_" +
                                  std::string(to_string(std::get<1>(info.param)));
                         });

TEST(Scorer, EmptyDictionaryReducesToP1) {
  const auto d = tiny_world();
  auto p = random_params(Variant::P1Dict, 8, 5);
  p.d_u.setZero();
  auto q = p;
  q.variant = Variant::P1;
  for (const auto& inst : d.instances) EXPECT_EQ(forward(p, inst).logits, forward(q, inst).logits);
}

TEST(Scorer, AttentionIsADistribution) {
  const auto d = tiny_world();
  const auto p = random_params(Variant::P1Dict, 8, 6);
  for (const auto& inst : d.instances) {
    const auto f = forward_pass(p, inst);
    EXPECT_NEAR(f.alpha.sum(), 1.0, 1e-12);
    EXPECT_GE(f.alpha.minCoeff(), 0.0);
  }
}

// The dictionary output is the normalised weighted geometric mean of the
// per-row softmaxes; it approaches the arithmetic expectation as rows merge.
TEST(Scorer, DictionaryIsNormalisedGeometricMean) {
  const auto d = tiny_world();
  const auto& inst = d.instances[0];
  for (double spread : {1.0, 1e-2, 1e-4}) {
    auto p = random_params(Variant::P1Dict, 8, 7, 2);
    p.d_u.row(1) = p.d_u.row(0) + spread * Eigen::RowVectorXd::Ones(8);
    const auto f = forward_pass(p, inst);
    const auto& a = f.alpha;
    Eigen::VectorXd log_geo = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(inst.size()));
    Eigen::VectorXd arith = Eigen::VectorXd::Zero(log_geo.size());
    for (Eigen::Index r = 0; r < 2; ++r) {
      const Eigen::VectorXd logits = inst.candidate_embeddings * (p.d_u.row(r).transpose() + f.m);
      const Eigen::VectorXd probs = detail::softmax(logits);
      log_geo += a(r) * probs.array().log().matrix();
      arith += a(r) * probs;
    }
    Eigen::VectorXd geo = log_geo.array().exp();
    geo /= geo.sum();
    EXPECT_LT((geo - f.scores.probs).cwiseAbs().maxCoeff(), 1e-12);
    const double gap = 0.5 * (arith - f.scores.probs).cwiseAbs().sum();
    if (spread <= 1e-4) {
      EXPECT_LT(gap, 1e-6);
    }
  }
}

TEST(Scorer, ZeroLossTargetsGiveZeroGradient) {
  const auto d = tiny_world();
  for (auto v : kVariants) {
    const auto p = random_params(v, 8, 8);
    for (std::size_t n = 0; n < 10; ++n) {
      const auto& inst = d.instances[n];
      const auto probs = forward(p, inst).probs;
      Targets t{0, {}};
      for (Eigen::Index c = 0; c < probs.size(); ++c) t.relevance.push_back(probs(c) / probs.maxCoeff());
      const auto g = grad(p, inst, LossKind::R0, t);
      EXPECT_NEAR(g.loss, 0.0, 1e-12);
      EXPECT_LT(g.grad.flat().cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Scorer, R1BiasGradientIsEmbeddingWeightedResidual) {
  const auto d = tiny_world();
  const auto p = random_params(Variant::P1, 8, 9);
  for (std::size_t n = 0; n < 10; ++n) {
    const auto& inst = d.instances[n];
    const auto t = targets_of(inst);
    const auto s = normalized(t.relevance).s;
    const Eigen::VectorXd residual = forward(p, inst).probs - Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    const Eigen::VectorXd expected = inst.candidate_embeddings.transpose() * residual;
    EXPECT_LT((grad(p, inst, LossKind::R1, t).grad.bias.col(0) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Scorer, P1IgnoresHistoryWhenGateIsFlat) {
  const auto d = tiny_world();
  auto p1 = random_params(Variant::P1, 8, 10);
  p1.w_g.setZero();
  auto base = p1;
  base.variant = Variant::Baseline;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t k = 0; k < 10; ++k) {
    auto inst = d.instances[k];
    const auto before_p1 = forward(p1, inst).logits;
    const auto before_base = forward(base, inst).logits;
    for (Eigen::Index j = 0; j < inst.h_feat.size(); ++j) inst.h_feat(j) += n(rng);
    EXPECT_EQ(forward(p1, inst).logits, before_p1);
    EXPECT_GT((forward(base, inst).logits - before_base).norm(), 1e-6);
  }
}

TEST(Scorer, RankingIgnoresLogitShift) {
  const auto d = tiny_world();
  const auto p = random_params(Variant::Baseline, 8, 11);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto s = forward(p, d.instances[k]);
    ScoreVector shifted = s;
    shifted.logits.array() += 37.5;
    shifted.probs = detail::softmax(shifted.logits);
    EXPECT_EQ(rank(s), rank(shifted));
    EXPECT_EQ(rank(s), rank_by_score(std::vector<double>(s.logits.data(), s.logits.data() + s.logits.size())));
  }
}

TEST(Scorer, MixWithPrior) {
  const auto d = tiny_world();
  const auto p = random_params(Variant::P1, 8, 12);
  const auto s = forward(p, d.instances[0]);
  const auto k = static_cast<std::size_t>(s.probs.size());
  EXPECT_EQ(rank(mix_with_prior(s, std::vector<double>(k, 1.0 / static_cast<double>(k)))), rank(s));
  std::vector<double> one_hot(k, 0.0);
  one_hot[7] = 1.0;
  const auto mixed = mix_with_prior(s, one_hot);
  EXPECT_EQ(rank(mixed).front(), 7);
  EXPECT_NEAR(mixed.probs(7), 1.0, 1e-15);
  EXPECT_EQ(code_of([&] { mix_with_prior(s, std::vector<double>(k - 1, 1.0 / static_cast<double>(k - 1))); }),
            ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { mix_with_prior(s, std::vector<double>(k, 1.0)); }), ErrorCode::NotNormalized);
  auto negative = std::vector<double>(k, 0.0);
  negative[0] = 1.5;
  negative[1] = -0.5;
  EXPECT_EQ(code_of([&] { mix_with_prior(s, negative); }), ErrorCode::NotNormalized);
}

TEST(Scorer, DimensionChecks) {
  const auto d = tiny_world();
  const auto p = random_params(Variant::P1, 7, 13);
  EXPECT_EQ(code_of([&] { forward(p, d.instances[0]); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { ScorerParams::zeros(Variant::P1, 0, 4); }), ErrorCode::DimensionMismatch);
  auto q = random_params(Variant::P1, 8, 13);
  EXPECT_EQ(code_of([&] { q.set_flat(Eigen::VectorXd::Zero(3)); }), ErrorCode::DimensionMismatch);
}

TEST(Scorer, CheckpointRoundTrip) {
  for (auto v : kVariants) {
    const auto p = random_params(v, 8, 14);
    std::stringstream ss;
    save_checkpoint(ss, p, 77);
    const auto text = ss.str();
    const auto ck = load_checkpoint(ss);
    EXPECT_TRUE(ck.params == p);
    EXPECT_EQ(ck.seed, 77u);
    std::stringstream again;
    save_checkpoint(again, ck.params, ck.seed);
    EXPECT_EQ(again.str(), text);
    std::stringstream truncated(text.substr(0, text.size() - 3));
    EXPECT_EQ(code_of([&] { load_checkpoint(truncated); }), ErrorCode::ParseError);
  }
  std::stringstream junk("hello\n");
  EXPECT_EQ(code_of([&] { load_checkpoint(junk); }), ErrorCode::ParseError);
}

TEST(Scorer, DictionaryInitUsesFrequentAnswers) {
  const auto d = tiny_world(15, 100);
  auto p = random_params(Variant::P1Dict, 8, 15, 4);
  init_dictionary(p, d, d.indices(Split::Train), 0.5, 1.0);
  for (Eigen::Index r = 0; r < p.n_dict(); ++r) {
    bool found = false;
    for (const auto& inst : d.instances)
      for (Eigen::Index c = 0; c < inst.candidate_embeddings.rows(); ++c)
        found = found || inst.candidate_embeddings.row(c) == p.d_u.row(r);
    EXPECT_TRUE(found) << "row " << r;
  }
}
