#pragma once

// Synthetic confounded answer-ranking worlds.
//
// Each instance is drawn along H -> U, (H, U) -> Q, I, then the candidate
// scores. Causal relevance depends on (Q, I) only. What an annotator reports
// additionally depends on their latent preference U and, optionally, on
// planted history cues (answer length, shared words, a "yes" in the history).
//
// Users come in antipodal pairs with opposite taste vectors, so partners
// favour candidates at opposite ends of the same axis. H only decides which
// pair is active, which keeps the interventional answer distribution close to
// the causal ranking even under heavy bias.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "causalrank/errors.hpp"

namespace causalrank {

struct WorldSpec {
  int n_users = 8;
  int n_qtypes = 8;
  int n_candidates = 100;
  int feat_dim = 16;
  double bias_strength = 0.5;
  double length_bias_strength = 0.0;
  double word_bias_strength = 0.0;
  double shortcut_strength = 0.0;
  /// Weight of the per-question-type answer popularity in causal relevance.
  double qtype_strength = 0.0;
  int pool_size = 300;
  int max_history_rounds = 9;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& why) { return Error(ErrorCode::InvalidSpec, why); };
    if (n_users < 1 || n_qtypes < 1 || n_candidates < 1) throw bad("counts must be >= 1");
    if (feat_dim < 8) throw bad("feat_dim must be >= 8");
    if (pool_size < std::max(n_candidates, 2)) throw bad("pool_size must be >= n_candidates and >= 2");
    if (max_history_rounds < 0) throw bad("max_history_rounds must be >= 0");
    for (double s : {bias_strength, length_bias_strength, word_bias_strength, shortcut_strength}) {
      if (!(s >= 0.0 && s <= 1.0)) throw bad("strengths must lie in [0,1]");
    }
    if (!(qtype_strength >= 0.0) || !std::isfinite(qtype_strength)) throw bad("qtype_strength must be >= 0");
  }

  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

inline void to_json(nlohmann::json& j, const WorldSpec& s) {
  j = {{"n_users", s.n_users},
       {"n_qtypes", s.n_qtypes},
       {"n_candidates", s.n_candidates},
       {"feat_dim", s.feat_dim},
       {"bias_strength", s.bias_strength},
       {"length_bias_strength", s.length_bias_strength},
       {"word_bias_strength", s.word_bias_strength},
       {"shortcut_strength", s.shortcut_strength},
       {"qtype_strength", s.qtype_strength},
       {"pool_size", s.pool_size},
       {"max_history_rounds", s.max_history_rounds},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, WorldSpec& s) {
  WorldSpec d;
  s.n_users = j.value("n_users", d.n_users);
  s.n_qtypes = j.value("n_qtypes", d.n_qtypes);
  s.n_candidates = j.value("n_candidates", d.n_candidates);
  s.feat_dim = j.value("feat_dim", d.feat_dim);
  s.bias_strength = j.value("bias_strength", d.bias_strength);
  s.length_bias_strength = j.value("length_bias_strength", d.length_bias_strength);
  s.word_bias_strength = j.value("word_bias_strength", d.word_bias_strength);
  s.shortcut_strength = j.value("shortcut_strength", d.shortcut_strength);
  s.qtype_strength = j.value("qtype_strength", d.qtype_strength);
  s.pool_size = j.value("pool_size", d.pool_size);
  s.max_history_rounds = j.value("max_history_rounds", d.max_history_rounds);
  s.seed = j.value("seed", d.seed);
}

inline constexpr int kMinTokenLength = 1;
inline constexpr int kMaxTokenLength = 12;
inline constexpr int kYesAnswer = 0;  // pool id
inline constexpr int kNoAnswer = 1;   // pool id
inline constexpr int kYesToken = 0;
inline constexpr int kNoToken = 1;
inline constexpr int kTopics = 8;
inline constexpr int kTokensPerTopic = 8;
inline constexpr double kNeutralLength = 6.5;

struct Candidate {
  int pool_id = 0;
  int length = 1;
  std::vector<int> tokens;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// What the history reveals to the annotator, and which planted cues fired
/// for this instance. Estimators never read the flags.
struct HistoryContext {
  std::vector<int> answer_lengths;
  std::vector<int> tokens;  // multiset over all history answers
  int topic = 0;
  bool yes_in_history = false;
  bool length_event = false;
  bool word_event = false;
  bool shortcut_event = false;

  double mean_answer_length() const {
    if (answer_lengths.empty()) return kNeutralLength;
    return std::accumulate(answer_lengths.begin(), answer_lengths.end(), 0.0) /
           static_cast<double>(answer_lengths.size());
  }

  friend bool operator==(const HistoryContext&, const HistoryContext&) = default;
};

enum class Split { Train, Val };

struct DialogInstance {
  Eigen::VectorXd h_feat;
  Eigen::VectorXd q_feat;
  Eigen::VectorXd i_feat;
  int qtype = 0;
  int u_true = 0;  // hidden from estimators
  std::vector<Candidate> candidates;
  /// Row c is the embedding of candidate c.
  Eigen::MatrixXd candidate_embeddings;
  std::vector<double> causal_relevance;
  std::vector<double> observed_relevance;
  /// The single answer given by the annotating user: argmax of their unrounded mix.
  int gt_index = 0;
  HistoryContext history;

  std::size_t size() const noexcept { return candidates.size(); }

  bool operator==(const DialogInstance& o) const {
    return h_feat == o.h_feat && q_feat == o.q_feat && i_feat == o.i_feat && qtype == o.qtype &&
           u_true == o.u_true && candidates == o.candidates && candidate_embeddings == o.candidate_embeddings &&
           causal_relevance == o.causal_relevance && observed_relevance == o.observed_relevance &&
           gt_index == o.gt_index && history == o.history;
  }
};

// ---------------------------------------------------------------------------
// Hidden world parameters

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class Rng>
Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * n(rng);
  return m;
}

inline std::vector<double> softmax_probs(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(logits(i) - mx);
    z += out[static_cast<std::size_t>(i)];
  }
  for (auto& v : out) v /= z;
  return out;
}

template <class Rng>
int categorical(Rng& rng, const std::vector<double>& probs) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double r = unit(rng);
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    r -= probs[k];
    if (r < 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

inline double length_feature(double len) { return (len - kNeutralLength) / 3.5; }

}  // namespace detail

struct PoolAnswer {
  int length = 1;
  int topic = 0;
  std::vector<int> tokens;
  Eigen::VectorXd embedding;
};

/// The generator's hidden parameters, fully determined by the spec.
class World {
 public:
  explicit World(WorldSpec spec) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(spec_.seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL);
    const int d = spec_.feat_dim;
    const int content = d - 4;

    topic_cand_ = detail::gaussian(rng, kTopics, content, 1.0);
    topic_hist_ = detail::gaussian(rng, kTopics, d - 2, 1.0);

    std::uniform_int_distribution<int> len_dist(kMinTokenLength, kMaxTokenLength);
    std::uniform_int_distribution<int> topic_dist(0, kTopics - 1);
    std::uniform_int_distribution<int> tok_in_topic(0, kTokensPerTopic - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    pool_.resize(static_cast<std::size_t>(spec_.pool_size));
    for (int a = 0; a < spec_.pool_size; ++a) {
      auto& p = pool_[static_cast<std::size_t>(a)];
      p.embedding = Eigen::VectorXd::Zero(d);
      p.embedding(0) = 1.0;
      Eigen::VectorXd noise = detail::gaussian(rng, content, 1, 0.6);
      if (a == kYesAnswer || a == kNoAnswer) {
        p.length = 1;
        p.topic = -1;
        p.tokens = {a == kYesAnswer ? kYesToken : kNoToken};
        p.embedding.tail(content) = noise;
        if (a == kYesAnswer) p.embedding(3) = 1.0;
      } else {
        p.length = len_dist(rng);
        p.topic = topic_dist(rng);
        for (int t = 0; t < p.length; ++t) {
          const int topic = unit(rng) < 0.8 ? p.topic : topic_dist(rng);
          p.tokens.push_back(token_of(topic, tok_in_topic(rng)));
        }
        p.embedding.tail(content) = topic_cand_.row(p.topic).transpose() + noise;
      }
      // equal content norms, so no answer is favoured by every taste direction
      p.embedding.tail(content) *= std::sqrt(static_cast<double>(content)) / p.embedding.tail(content).norm();
      const double lz = detail::length_feature(p.length);
      p.embedding(1) = lz;
      p.embedding(2) = lz * lz - 1.0;
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    causal_q_ = detail::gaussian(rng, d, d, inv_sqrt_d);
    causal_i_ = detail::gaussian(rng, d, d, inv_sqrt_d);

    qtype_vec_ = detail::gaussian(rng, spec_.n_qtypes, d, 1.0);
    if (spec_.n_qtypes > 1) qtype_vec_.rowwise() -= qtype_vec_.colwise().mean();
    qtype_pop_ = Eigen::MatrixXd::Zero(spec_.n_qtypes, spec_.pool_size);
    for (int t = 0; t < spec_.n_qtypes; ++t) {
      for (int a = 0; a < spec_.pool_size; ++a) {
        if (unit(rng) < 0.1) qtype_pop_(t, a) = 0.5 + unit(rng);
      }
    }

    history_to_q_ = detail::gaussian(rng, d, d - 2, 0.7 * inv_sqrt_d * std::sqrt(2.0));

    const int pairs = spec_.n_users / 2;
    n_groups_ = pairs + (spec_.n_users % 2);
    user_offset_ = Eigen::MatrixXd::Zero(spec_.n_users, d);
    taste_ = Eigen::MatrixXd::Zero(spec_.n_users, d);
    for (int g = 0; g < pairs; ++g) {
      Eigen::RowVectorXd off = detail::gaussian(rng, 1, d, 1.0);
      Eigen::RowVectorXd taste = detail::gaussian(rng, 1, d, 1.0);
      taste(0) = 0.0;
      user_offset_.row(2 * g) = off;
      user_offset_.row(2 * g + 1) = -off;
      taste_.row(2 * g) = taste;
      taste_.row(2 * g + 1) = -taste;
    }
    group_logits_ = detail::gaussian(rng, n_groups_, d, 0.3);
    qtype_from_h_ = detail::gaussian(rng, spec_.n_qtypes, d, 0.5);
    qtype_from_u_ = detail::gaussian(rng, spec_.n_users, spec_.n_qtypes, 0.5);
  }

  const WorldSpec& spec() const noexcept { return spec_; }
  const std::vector<PoolAnswer>& pool() const noexcept { return pool_; }
  int n_groups() const noexcept { return n_groups_; }

  static int token_of(int topic, int k) { return 2 + topic * kTokensPerTopic + k; }

  int group_of(int u) const { return u / 2; }
  int group_size(int g) const { return (2 * g + 1 < spec_.n_users) ? 2 : 1; }

  /// P(u | h).
  std::vector<double> user_prior(const Eigen::VectorXd& h) const {
    const auto group = detail::softmax_probs(group_logits_ * h);
    std::vector<double> out(static_cast<std::size_t>(spec_.n_users));
    for (int u = 0; u < spec_.n_users; ++u) {
      out[static_cast<std::size_t>(u)] = group[static_cast<std::size_t>(group_of(u))] / group_size(group_of(u));
    }
    return out;
  }

  /// P(qtype | h, u).
  std::vector<double> qtype_distribution(const Eigen::VectorXd& h, int u) const {
    Eigen::VectorXd logits = qtype_from_h_ * h + qtype_from_u_.row(u).transpose();
    return detail::softmax_probs(logits);
  }

  /// Deterministic part of q given (h, u, qtype); the generator adds
  /// isotropic noise with standard deviation `q_noise()`.
  Eigen::VectorXd question_mean(const Eigen::VectorXd& h, int u, int qtype) const {
    const Eigen::Index d = spec_.feat_dim;
    return qtype_vec_.row(qtype).transpose() + history_to_q_ * h.tail(d - 2) + 0.8 * user_offset_.row(u).transpose();
  }
  static double q_noise() { return 0.5; }

  /// Causal relevance of each candidate from (q, i) alone. Scores above a
  /// fixed cut get a quarter step per `kRelevanceStep` of excess, capped at 1;
  /// if nothing clears the cut the best candidate gets 0.25.
  std::vector<double> causal_relevance(const Eigen::VectorXd& q, const Eigen::VectorXd& i, int qtype,
                                       const std::vector<Candidate>& cands, const Eigen::MatrixXd& emb) const {
    const auto k = cands.size();
    const Eigen::VectorXd dir = causal_q_ * q + causal_i_ * i;
    Eigen::VectorXd z = emb * dir / std::sqrt(static_cast<double>(spec_.feat_dim));
    for (std::size_t c = 0; c < k; ++c) {
      z(static_cast<Eigen::Index>(c)) += spec_.qtype_strength * qtype_pop_(qtype, cands[c].pool_id);
    }
    std::vector<double> rel(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      const double excess = z(static_cast<Eigen::Index>(c)) - kRelevanceCut;
      if (excess > 0.0) rel[c] = std::min(1.0, std::ceil(excess / kRelevanceStep) / 4.0);
    }
    if (k > 0 && std::all_of(rel.begin(), rel.end(), [](double v) { return v == 0.0; })) {
      Eigen::Index best;
      z.maxCoeff(&best);
      rel[static_cast<std::size_t>(best)] = 0.25;
    }
    return rel;
  }

  static int overlap(const Candidate& c, const HistoryContext& hist) {
    std::set<int> hist_tokens(hist.tokens.begin(), hist.tokens.end());
    int n = 0;
    for (int t : c.tokens) n += hist_tokens.count(t) ? 1 : 0;
    return n;
  }

  /// Preference of user u over the candidates: a temperature softmax of the
  /// taste affinity, reweighted by whichever history cues fired. Sums to 1.
  std::vector<double> preference(int u, const std::vector<Candidate>& cands, const Eigen::MatrixXd& emb,
                                 const HistoryContext& hist) const {
    const auto k = cands.size();
    Eigen::VectorXd logit = emb * taste_.row(u).transpose() / kTasteTemperature;
    const double hl = hist.mean_answer_length();
    for (std::size_t c = 0; c < k; ++c) {
      auto& a = logit(static_cast<Eigen::Index>(c));
      if (hist.length_event) {
        const double diff = cands[c].length - hl;
        a -= diff * diff / (2.0 * 1.5 * 1.5);
      }
      if (hist.word_event && overlap(cands[c], hist) == 0) a += std::log(0.25);
    }
    Eigen::VectorXd w = (logit.array() - logit.maxCoeff()).exp();
    if (hist.shortcut_event) {
      for (std::size_t c = 0; c < k; ++c) {
        if (cands[c].pool_id == kYesAnswer) w(static_cast<Eigen::Index>(c)) = 2.0 * w.maxCoeff();
      }
    }
    w /= w.sum();
    return std::vector<double>(w.data(), w.data() + w.size());
  }

  /// What user u thinks of each candidate: max-normalised mix of causal
  /// relevance and preference.
  std::vector<double> relevance_mix(const std::vector<double>& causal, const std::vector<double>& pref) const {
    const double b = spec_.bias_strength;
    if (b == 0.0) return causal;
    std::vector<double> mix(causal.size());
    for (std::size_t c = 0; c < mix.size(); ++c) mix[c] = (1.0 - b) * causal[c] + b * pref[c];
    const double mx = *std::max_element(mix.begin(), mix.end());
    for (auto& v : mix) v /= mx;
    return mix;
  }

  /// The mix as annotated: rounded to the nearest quarter step.
  std::vector<double> observed_relevance(const std::vector<double>& causal, const std::vector<double>& pref) const {
    auto rel = relevance_mix(causal, pref);
    for (auto& v : rel) v = std::round(4.0 * v) / 4.0;
    return rel;
  }

  /// P(A | Q, H, I, u): user u picks candidates in proportion to the mix.
  std::vector<double> answer_distribution(const DialogInstance& inst, int u) const {
    auto rel = relevance_mix(inst.causal_relevance,
                             preference(u, inst.candidates, inst.candidate_embeddings, inst.history));
    const double z = std::accumulate(rel.begin(), rel.end(), 0.0);
    for (auto& v : rel) v /= z;
    return rel;
  }

  /// Posterior P(u | h, q, qtype) under the generator.
  std::vector<double> user_posterior(const DialogInstance& inst) const {
    const auto prior = user_prior(inst.h_feat);
    std::vector<double> logp(prior.size());
    for (int u = 0; u < spec_.n_users; ++u) {
      const auto qt = qtype_distribution(inst.h_feat, u);
      const double r2 = (inst.q_feat - question_mean(inst.h_feat, u, inst.qtype)).squaredNorm();
      logp[static_cast<std::size_t>(u)] = std::log(prior[static_cast<std::size_t>(u)]) +
                                          std::log(qt[static_cast<std::size_t>(inst.qtype)]) -
                                          r2 / (2.0 * q_noise() * q_noise());
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (auto& v : logp) z += (v = std::exp(v - mx));
    for (auto& v : logp) v /= z;
    return logp;
  }

  template <class Rng>
  DialogInstance sample_instance(Rng& rng) const {
    const int d = spec_.feat_dim;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> topic_dist(0, kTopics - 1);
    std::uniform_int_distribution<int> tok_in_topic(0, kTokensPerTopic - 1);
    std::uniform_int_distribution<int> style_dist(kMinTokenLength, kMaxTokenLength);
    std::uniform_int_distribution<int> jitter(-1, 1);
    std::uniform_int_distribution<int> rounds_dist(0, spec_.max_history_rounds);

    DialogInstance inst;
    auto& hist = inst.history;

    // H
    const int rounds = rounds_dist(rng);
    hist.topic = topic_dist(rng);
    const int style = style_dist(rng);
    const int yes_round = (rounds > 0 && unit(rng) < 0.5) ? std::uniform_int_distribution<int>(0, rounds - 1)(rng) : -1;
    for (int r = 0; r < rounds; ++r) {
      if (r == yes_round) {
        hist.answer_lengths.push_back(1);
        hist.tokens.push_back(kYesToken);
        hist.yes_in_history = true;
        continue;
      }
      const int len = std::clamp(style + jitter(rng), kMinTokenLength, kMaxTokenLength);
      hist.answer_lengths.push_back(len);
      for (int t = 0; t < len; ++t) {
        const int topic = unit(rng) < 0.8 ? hist.topic : topic_dist(rng);
        hist.tokens.push_back(token_of(topic, tok_in_topic(rng)));
      }
    }
    inst.h_feat = Eigen::VectorXd::Zero(d);
    inst.h_feat(0) = detail::length_feature(hist.mean_answer_length());
    inst.h_feat(1) = hist.yes_in_history ? 1.0 : 0.0;
    inst.h_feat.tail(d - 2) = 0.8 * topic_hist_.row(hist.topic).transpose() + detail::gaussian(rng, d - 2, 1, 0.3);

    // U | H
    inst.u_true = detail::categorical(rng, user_prior(inst.h_feat));

    // Q | H, U
    inst.qtype = detail::categorical(rng, qtype_distribution(inst.h_feat, inst.u_true));
    inst.q_feat = question_mean(inst.h_feat, inst.u_true, inst.qtype) + detail::gaussian(rng, d, 1, q_noise());

    // I
    inst.i_feat = detail::gaussian(rng, d, 1, 1.0);

    // candidates: yes/no always present, the rest drawn from the pool
    const int k = spec_.n_candidates;
    std::vector<int> ids;
    if (k >= 2) {
      ids = {kYesAnswer, kNoAnswer};
      std::vector<int> rest(static_cast<std::size_t>(spec_.pool_size - 2));
      std::iota(rest.begin(), rest.end(), 2);
      for (int n = 0; n < k - 2; ++n) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(n), rest.size() - 1);
        std::swap(rest[static_cast<std::size_t>(n)], rest[pick(rng)]);
        ids.push_back(rest[static_cast<std::size_t>(n)]);
      }
      for (std::size_t n = ids.size() - 1; n > 0; --n) {
        std::uniform_int_distribution<std::size_t> pick(0, n);
        std::swap(ids[n], ids[pick(rng)]);
      }
    } else {
      ids = {std::uniform_int_distribution<int>(0, spec_.pool_size - 1)(rng)};
    }
    inst.candidate_embeddings.resize(k, d);
    for (int c = 0; c < k; ++c) {
      const auto& p = pool_[static_cast<std::size_t>(ids[static_cast<std::size_t>(c)])];
      inst.candidates.push_back({ids[static_cast<std::size_t>(c)], p.length, p.tokens});
      inst.candidate_embeddings.row(c) = p.embedding.transpose();
    }

    inst.causal_relevance = causal_relevance(inst.q_feat, inst.i_feat, inst.qtype, inst.candidates,
                                             inst.candidate_embeddings);

    // planted history cues
    hist.length_event = rounds > 0 && unit(rng) < spec_.length_bias_strength;
    hist.word_event = rounds > 0 && unit(rng) < spec_.word_bias_strength;
    hist.shortcut_event = hist.yes_in_history && unit(rng) < spec_.shortcut_strength;

    const auto pref = preference(inst.u_true, inst.candidates, inst.candidate_embeddings, hist);
    const auto mix = relevance_mix(inst.causal_relevance, pref);
    inst.observed_relevance = observed_relevance(inst.causal_relevance, pref);
    inst.gt_index = static_cast<int>(std::max_element(mix.begin(), mix.end()) - mix.begin());
    return inst;
  }

 private:
  static constexpr double kTasteTemperature = 2.0;
  static constexpr double kRelevanceCut = 0.75;
  static constexpr double kRelevanceStep = 0.6;

  WorldSpec spec_;
  std::vector<PoolAnswer> pool_;
  Eigen::MatrixXd topic_cand_, topic_hist_;
  Eigen::MatrixXd causal_q_, causal_i_;
  Eigen::MatrixXd qtype_vec_, qtype_pop_;
  Eigen::MatrixXd history_to_q_;
  Eigen::MatrixXd user_offset_, taste_;
  Eigen::MatrixXd group_logits_, qtype_from_h_, qtype_from_u_;
  int n_groups_ = 1;
};

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  WorldSpec spec;
  std::shared_ptr<const World> world;
  std::vector<DialogInstance> instances;
  std::vector<Split> splits;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < splits.size(); ++n) {
      if (splits[n] == s) out.push_back(n);
    }
    return out;
  }
};

/// Draws n instances; the last floor(n * val_fraction) are tagged Val.
/// Bit-for-bit reproducible from (spec, n, val_fraction).
inline Dataset generate(const WorldSpec& spec, int n, double val_fraction = 0.2) {
  if (n < 1) throw Error(ErrorCode::InvalidSpec, "instance count must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error(ErrorCode::InvalidSpec, "val_fraction must be in [0,1)");
  Dataset ds;
  ds.spec = spec;
  ds.world = std::make_shared<const World>(spec);
  std::mt19937_64 rng(spec.seed ^ 0xD1B54A32D192ED03ULL);
  ds.instances.reserve(static_cast<std::size_t>(n));
  const int n_val = static_cast<int>(std::floor(n * val_fraction));
  for (int k = 0; k < n; ++k) {
    ds.instances.push_back(ds.world->sample_instance(rng));
    ds.splits.push_back(k < n - n_val ? Split::Train : Split::Val);
  }
  return ds;
}

/// sum_u P(A | Q, H, I, u) P(u | H) with the generator's own conditionals.
inline std::vector<double> oracle_interventional(const Dataset& d, const DialogInstance& inst) {
  const auto prior = d.world->user_prior(inst.h_feat);
  std::vector<double> out(inst.size(), 0.0);
  for (int u = 0; u < d.spec.n_users; ++u) {
    const auto pa = d.world->answer_distribution(inst, u);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += prior[static_cast<std::size_t>(u)] * pa[c];
  }
  return out;
}

/// sum_u P(A | Q, H, I, u) P(u | Q, H, I): the observational answer
/// distribution a likelihood-trained model would target.
inline std::vector<double> observational_distribution(const Dataset& d, const DialogInstance& inst) {
  const auto post = d.world->user_posterior(inst);
  std::vector<double> out(inst.size(), 0.0);
  for (int u = 0; u < d.spec.n_users; ++u) {
    const auto pa = d.world->answer_distribution(inst, u);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += post[static_cast<std::size_t>(u)] * pa[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// History-bias probes

using Ranking = std::vector<int>;

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx <= 1e-12 * n || syy <= 1e-12 * n) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline void check_rankings(const std::vector<Ranking>& ranked, const std::vector<std::size_t>& which,
                           const Dataset& d) {
  if (ranked.size() != which.size()) throw Error(ErrorCode::LengthMismatch, "one ranking per instance required");
  for (std::size_t k = 0; k < which.size(); ++k) {
    if (which[k] >= d.instances.size()) throw Error(ErrorCode::IndexOutOfRange, "instance index");
    if (ranked[k].size() != d.instances[which[k]].size()) {
      throw Error(ErrorCode::LengthMismatch, "ranking length differs from candidate count");
    }
  }
}

inline std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> v(d.instances.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace detail

struct LengthCurvePoint {
  int history_length = 0;  // rounded mean history-answer length
  double mean_top_length = 0.0;
  int count = 0;
};

struct LengthProbe {
  double correlation = 0.0;
  std::vector<LengthCurvePoint> curve;
};

/// Correlation between the mean history-answer length and the length of the
/// top-ranked candidate, over instances that have a history. `which[k]` names
/// the instance ranked by `ranked[k]`.
inline LengthProbe bias_probe_length(const std::vector<Ranking>& ranked, const Dataset& d,
                                     const std::vector<std::size_t>& which) {
  detail::check_rankings(ranked, which, d);
  std::vector<double> hist_len, top_len;
  std::vector<LengthCurvePoint> curve(kMaxTokenLength);
  for (int b = 0; b < kMaxTokenLength; ++b) curve[static_cast<std::size_t>(b)].history_length = b + 1;
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& inst = d.instances[which[k]];
    if (inst.history.answer_lengths.empty() || ranked[k].empty()) continue;
    const double hl = inst.history.mean_answer_length();
    const double tl = inst.candidates[static_cast<std::size_t>(ranked[k].front())].length;
    hist_len.push_back(hl);
    top_len.push_back(tl);
    const int bin = std::clamp(static_cast<int>(std::lround(hl)), kMinTokenLength, kMaxTokenLength) - 1;
    auto& pt = curve[static_cast<std::size_t>(bin)];
    pt.mean_top_length += tl;
    ++pt.count;
  }
  for (auto& pt : curve) {
    if (pt.count > 0) pt.mean_top_length /= pt.count;
  }
  return {detail::pearson(hist_len, top_len), curve};
}

inline LengthProbe bias_probe_length(const std::vector<Ranking>& ranked, const Dataset& d) {
  return bias_probe_length(ranked, d, detail::all_indices(d));
}

/// Tokens of the top-k candidates that also occur in the history answers,
/// summed over instances.
inline long bias_probe_wordmatch(const std::vector<Ranking>& ranked, const Dataset& d,
                                 const std::vector<std::size_t>& which, int top = 10) {
  detail::check_rankings(ranked, which, d);
  long total = 0;
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& inst = d.instances[which[k]];
    const auto limit = std::min<std::size_t>(static_cast<std::size_t>(top), ranked[k].size());
    for (std::size_t r = 0; r < limit; ++r) {
      total += World::overlap(inst.candidates[static_cast<std::size_t>(ranked[k][r])], inst.history);
    }
  }
  return total;
}

inline long bias_probe_wordmatch(const std::vector<Ranking>& ranked, const Dataset& d, int top = 10) {
  return bias_probe_wordmatch(ranked, d, detail::all_indices(d), top);
}

/// Expected word-match count when every ranking is a uniform permutation.
inline double expected_wordmatch_uniform(const Dataset& d, const std::vector<std::size_t>& which, int top = 10) {
  double total = 0.0;
  for (auto n : which) {
    const auto& inst = d.instances[n];
    if (inst.size() == 0) continue;
    double sum = 0.0;
    for (const auto& c : inst.candidates) sum += World::overlap(c, inst.history);
    total += sum * std::min<double>(top, static_cast<double>(inst.size())) / static_cast<double>(inst.size());
  }
  return total;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON: a header line with the world settings, then one instance per line.

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline nlohmann::json instance_to_json(const DialogInstance& inst, Split split) {
  nlohmann::json j;
  j["split"] = split == Split::Train ? "train" : "val";
  j["h"] = detail::vec_json(inst.h_feat);
  j["q"] = detail::vec_json(inst.q_feat);
  j["i"] = detail::vec_json(inst.i_feat);
  j["qtype"] = inst.qtype;
  j["u_true"] = inst.u_true;
  j["gt"] = inst.gt_index;
  auto cands = nlohmann::json::array();
  for (std::size_t c = 0; c < inst.size(); ++c) {
    cands.push_back({{"id", inst.candidates[c].pool_id},
                     {"len", inst.candidates[c].length},
                     {"tokens", inst.candidates[c].tokens},
                     {"emb", detail::vec_json(inst.candidate_embeddings.row(static_cast<Eigen::Index>(c)).transpose())}});
  }
  j["candidates"] = cands;
  j["causal"] = inst.causal_relevance;
  j["observed"] = inst.observed_relevance;
  const auto& h = inst.history;
  j["history"] = {{"lengths", h.answer_lengths}, {"tokens", h.tokens}, {"topic", h.topic},
                  {"yes", h.yes_in_history},     {"length_event", h.length_event},
                  {"word_event", h.word_event},  {"shortcut_event", h.shortcut_event}};
  return j;
}

inline std::pair<DialogInstance, Split> instance_from_json(const nlohmann::json& j) {
  DialogInstance inst;
  inst.h_feat = detail::json_vec(j.at("h"));
  inst.q_feat = detail::json_vec(j.at("q"));
  inst.i_feat = detail::json_vec(j.at("i"));
  inst.qtype = j.at("qtype").get<int>();
  inst.u_true = j.at("u_true").get<int>();
  inst.gt_index = j.at("gt").get<int>();
  const auto& cands = j.at("candidates");
  const auto k = static_cast<Eigen::Index>(cands.size());
  const auto dim = k > 0 ? static_cast<Eigen::Index>(cands.at(0).at("emb").size()) : 0;
  inst.candidate_embeddings.resize(k, dim);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& cj = cands.at(static_cast<std::size_t>(c));
    inst.candidates.push_back(
        {cj.at("id").get<int>(), cj.at("len").get<int>(), cj.at("tokens").get<std::vector<int>>()});
    auto e = detail::json_vec(cj.at("emb"));
    if (e.size() != dim) throw Error(ErrorCode::DimensionMismatch, "candidate embedding width");
    inst.candidate_embeddings.row(c) = e.transpose();
  }
  inst.causal_relevance = j.at("causal").get<std::vector<double>>();
  inst.observed_relevance = j.at("observed").get<std::vector<double>>();
  const auto& h = j.at("history");
  inst.history.answer_lengths = h.at("lengths").get<std::vector<int>>();
  inst.history.tokens = h.at("tokens").get<std::vector<int>>();
  inst.history.topic = h.at("topic").get<int>();
  inst.history.yes_in_history = h.at("yes").get<bool>();
  inst.history.length_event = h.at("length_event").get<bool>();
  inst.history.word_event = h.at("word_event").get<bool>();
  inst.history.shortcut_event = h.at("shortcut_event").get<bool>();
  const auto split = j.at("split").get<std::string>() == "val" ? Split::Val : Split::Train;
  return {std::move(inst), split};
}

inline void save_dataset(std::ostream& os, const Dataset& d) {
  nlohmann::json header;
  header["format"] = "causalrank-dataset";
  header["version"] = 1;
  header["world"] = d.spec;
  header["count"] = d.instances.size();
  os << header.dump() << '\n';
  for (std::size_t n = 0; n < d.instances.size(); ++n) os << instance_to_json(d.instances[n], d.splits[n]).dump() << '\n';
}

inline Dataset load_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "empty dataset stream");
  Dataset d;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "causalrank-dataset") throw Error(ErrorCode::ParseError, "not a dataset file");
    d.spec = header.at("world").get<WorldSpec>();
    d.world = std::make_shared<const World>(d.spec);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto [inst, split] = instance_from_json(nlohmann::json::parse(line));
      d.instances.push_back(std::move(inst));
      d.splits.push_back(split);
    }
    if (header.contains("count") && header.at("count").get<std::size_t>() != d.instances.size()) {
      throw Error(ErrorCode::ParseError, "instance count does not match header");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  save_dataset(os, d);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return load_dataset(is);
}

}  // namespace causalrank
