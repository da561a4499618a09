#pragma once

// Bilinear answer scorers. A candidate with embedding e scores e^T (u_bar + m)
// where m fuses the question, image and (for the baseline) history, and u_bar
// is the attention-weighted dictionary vector standing in for E[u | H].

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "causalrank/errors.hpp"
#include "causalrank/losses.hpp"
#include "causalrank/metrics.hpp"
#include "causalrank/world.hpp"

namespace causalrank {

enum class Variant {
  Baseline,      // history fused into m (H -> A present)
  P1,            // history only gates the question
  P1Dict,        // P1 plus the hidden dictionary
  BaselineDict,  // dictionary while keeping the history shortcut
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::P1: return "p1";
    case Variant::P1Dict: return "p1_dict";
    case Variant::BaselineDict: return "baseline_dict";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "p1") return Variant::P1;
  if (s == "p1_dict") return Variant::P1Dict;
  if (s == "baseline_dict") return Variant::BaselineDict;
  throw Error(ErrorCode::ConfigError, "unknown variant '" + std::string(s) + "'");
}

inline bool fuses_history(Variant v) { return v == Variant::Baseline || v == Variant::BaselineDict; }
inline bool uses_dictionary(Variant v) { return v == Variant::P1Dict || v == Variant::BaselineDict; }

struct ScorerParams {
  Variant variant = Variant::P1;
  Eigen::MatrixXd w_q;   // hidden x input
  Eigen::MatrixXd w_i;   // hidden x input
  Eigen::MatrixXd w_h;   // hidden x input, used only when history is fused
  Eigen::MatrixXd w_g;   // input x input, question gate from history
  Eigen::MatrixXd bias;  // hidden x 1
  Eigen::MatrixXd d_u;   // n_dict x hidden
  Eigen::MatrixXd w1;    // attn x input, L = W1 h
  Eigen::MatrixXd w2;    // attn x hidden, K_n = W2 D_u[n]

  Eigen::Index input_dim() const { return w_q.cols(); }
  Eigen::Index hidden_dim() const { return w_q.rows(); }
  Eigen::Index n_dict() const { return d_u.rows(); }
  Eigen::Index attn_dim() const { return w1.rows(); }

  static ScorerParams zeros(Variant variant, Eigen::Index input_dim, Eigen::Index hidden_dim, Eigen::Index n_dict = 16,
                            Eigen::Index attn_dim = 0) {
    if (input_dim < 1 || hidden_dim < 1 || n_dict < 1) {
      throw Error(ErrorCode::DimensionMismatch, "scorer dimensions must be >= 1");
    }
    if (attn_dim < 1) attn_dim = hidden_dim;
    ScorerParams p;
    p.variant = variant;
    p.w_q = Eigen::MatrixXd::Zero(hidden_dim, input_dim);
    p.w_i = Eigen::MatrixXd::Zero(hidden_dim, input_dim);
    p.w_h = Eigen::MatrixXd::Zero(hidden_dim, input_dim);
    p.w_g = Eigen::MatrixXd::Zero(input_dim, input_dim);
    p.bias = Eigen::MatrixXd::Zero(hidden_dim, 1);
    p.d_u = Eigen::MatrixXd::Zero(n_dict, hidden_dim);
    p.w1 = Eigen::MatrixXd::Zero(attn_dim, input_dim);
    p.w2 = Eigen::MatrixXd::Zero(attn_dim, hidden_dim);
    return p;
  }

  /// Same shapes and variant, all zeros.
  ScorerParams zeros_like() const { return zeros(variant, input_dim(), hidden_dim(), n_dict(), attn_dim()); }

  template <class F>
  void for_each_block(F&& f) {
    f("w_q", w_q);
    f("w_i", w_i);
    f("w_h", w_h);
    f("w_g", w_g);
    f("bias", bias);
    f("d_u", d_u);
    f("w1", w1);
    f("w2", w2);
  }

  template <class F>
  void for_each_block(F&& f) const {
    const_cast<ScorerParams*>(this)->for_each_block(
        [&](const char* name, Eigen::MatrixXd& m) { f(name, static_cast<const Eigen::MatrixXd&>(m)); });
  }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for_each_block([&](const char*, const Eigen::MatrixXd& m) { n += m.size(); });
    return n;
  }

  Eigen::VectorXd flat() const {
    Eigen::VectorXd out(size());
    Eigen::Index at = 0;
    for_each_block([&](const char*, const Eigen::MatrixXd& m) {
      out.segment(at, m.size()) = m.reshaped();
      at += m.size();
    });
    return out;
  }

  void set_flat(const Eigen::VectorXd& v) {
    if (v.size() != size()) throw Error(ErrorCode::DimensionMismatch, "flat parameter vector size");
    Eigen::Index at = 0;
    for_each_block([&](const char*, Eigen::MatrixXd& m) {
      m.reshaped() = v.segment(at, m.size());
      at += m.size();
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const char*, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  bool operator==(const ScorerParams& o) const { return variant == o.variant && flat() == o.flat(); }
};

/// Small random initialisation. The gate starts at zero (sigmoid 0.5) and the
/// dictionary at small random rows unless replaced by `init_dictionary`.
inline ScorerParams init_params(Variant variant, Eigen::Index input_dim, Eigen::Index hidden_dim,
                                std::uint64_t seed, Eigen::Index n_dict = 16, Eigen::Index attn_dim = 0,
                                double scale = 0.01) {
  auto p = ScorerParams::zeros(variant, input_dim, hidden_dim, n_dict, attn_dim);
  std::mt19937_64 rng(seed * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL);
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](Eigen::MatrixXd& m, double s) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = s * n(rng);
  };
  fill(p.w_q, scale);
  fill(p.w_i, scale);
  fill(p.w_h, scale);
  fill(p.d_u, scale);
  fill(p.w1, 0.1);
  fill(p.w2, 0.1);
  return p;
}

struct ScoreVector {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

/// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardPass {
  Eigen::VectorXd gate;     // sigmoid(W_g h)
  Eigen::VectorXd q_ref;    // q * gate
  Eigen::VectorXd m;        // fused {Q, I, H} embedding
  Eigen::VectorXd attn_key; // L = W1 h
  Eigen::VectorXd alpha;    // attention over dictionary rows
  Eigen::VectorXd u_bar;    // sum_n alpha_n D_u[n]
  Eigen::VectorXd v;        // u_bar + m
  ScoreVector scores;
};

namespace detail {

inline void check_dims(const ScorerParams& p, const DialogInstance& inst) {
  const auto in = p.input_dim();
  if (inst.h_feat.size() != in || inst.q_feat.size() != in || inst.i_feat.size() != in) {
    throw Error(ErrorCode::DimensionMismatch, "input features must have " + std::to_string(in) + " entries");
  }
  if (inst.candidate_embeddings.cols() != p.hidden_dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "candidate embeddings must have " + std::to_string(p.hidden_dim()) + " columns");
  }
  if (inst.candidate_embeddings.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "no candidates");
}

}  // namespace detail

inline ForwardPass forward_pass(const ScorerParams& p, const DialogInstance& inst) {
  detail::check_dims(p, inst);
  ForwardPass f;
  f.gate = (p.w_g * inst.h_feat).unaryExpr([](double x) { return detail::stable_sigmoid(x); });
  f.q_ref = inst.q_feat.cwiseProduct(f.gate);
  f.m = p.w_q * f.q_ref + p.w_i * inst.i_feat + p.bias.col(0);
  if (fuses_history(p.variant)) f.m += p.w_h * inst.h_feat;
  if (uses_dictionary(p.variant)) {
    f.attn_key = p.w1 * inst.h_feat;
    const Eigen::MatrixXd keys = p.d_u * p.w2.transpose();  // row n = K_n^T
    f.alpha = detail::softmax(keys * f.attn_key);
    f.u_bar = p.d_u.transpose() * f.alpha;
  } else {
    f.u_bar = Eigen::VectorXd::Zero(p.hidden_dim());
  }
  f.v = f.u_bar + f.m;
  f.scores.logits = inst.candidate_embeddings * f.v;
  f.scores.probs = detail::softmax(f.scores.logits);
  return f;
}

inline ScoreVector forward(const ScorerParams& p, const DialogInstance& inst) { return forward_pass(p, inst).scores; }

/// Adds weight * d(loss)/d(params) into `acc` and returns the loss value.
inline double accumulate_grad(const ScorerParams& p, const DialogInstance& inst, LossKind kind, const Targets& t,
                              ScorerParams& acc, double weight = 1.0) {
  const auto f = forward_pass(p, inst);
  const auto loss = evaluate_loss(kind, f.scores.logits, t);
  const Eigen::VectorXd dv = weight * (inst.candidate_embeddings.transpose() * loss.grad_logits);

  // m = W_q (q * gate) + W_i i + W_h h + b
  acc.w_q.noalias() += dv * f.q_ref.transpose();
  acc.w_i.noalias() += dv * inst.i_feat.transpose();
  acc.bias.col(0) += dv;
  if (fuses_history(p.variant)) acc.w_h.noalias() += dv * inst.h_feat.transpose();
  const Eigen::VectorXd dq_ref = p.w_q.transpose() * dv;
  const Eigen::VectorXd dgate_in =
      dq_ref.cwiseProduct(inst.q_feat).cwiseProduct(f.gate).cwiseProduct((1.0 - f.gate.array()).matrix());
  acc.w_g.noalias() += dgate_in * inst.h_feat.transpose();

  if (uses_dictionary(p.variant)) {
    // u_bar = D_u^T alpha, alpha = softmax(D_u W2^T L), L = W1 h
    const Eigen::VectorXd dalpha = p.d_u * dv;
    const Eigen::VectorXd dscore = f.alpha.cwiseProduct((dalpha.array() - f.alpha.dot(dalpha)).matrix());
    acc.d_u.noalias() += f.alpha * dv.transpose();
    // score_n = D_u[n] . (W2^T L)
    const Eigen::VectorXd w2t_l = p.w2.transpose() * f.attn_key;
    acc.d_u.noalias() += dscore * w2t_l.transpose();
    const Eigen::VectorXd d_w2t_l = p.d_u.transpose() * dscore;  // hidden
    acc.w2.noalias() += f.attn_key * d_w2t_l.transpose();
    const Eigen::VectorXd dl = p.w2 * d_w2t_l;
    acc.w1.noalias() += dl * inst.h_feat.transpose();
  }
  return weight * loss.value;
}

struct Gradient {
  double loss = 0.0;
  ScorerParams grad;
};

inline Gradient grad(const ScorerParams& p, const DialogInstance& inst, LossKind kind, const Targets& t) {
  Gradient g{0.0, p.zeros_like()};
  g.loss = accumulate_grad(p, inst, kind, t, g.grad);
  return g;
}

inline double loss_at(const ScorerParams& p, const DialogInstance& inst, LossKind kind, const Targets& t) {
  return evaluate_loss(kind, forward(p, inst).logits, t).value;
}

/// Multiplies candidate probabilities by a prior and renormalises.
inline ScoreVector mix_with_prior(const ScoreVector& scores, const std::vector<double>& prior) {
  if (static_cast<std::size_t>(scores.probs.size()) != prior.size()) {
    throw Error(ErrorCode::LengthMismatch, "prior length differs from candidate count");
  }
  double total = 0.0;
  for (double w : prior) {
    if (!(w >= 0.0)) throw Error(ErrorCode::NotNormalized, "prior weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::NotNormalized, "prior must sum to 1");
  ScoreVector out;
  out.probs = scores.probs.cwiseProduct(Eigen::Map<const Eigen::VectorXd>(prior.data(), scores.probs.size()));
  const double z = out.probs.sum();
  if (!(z > 0.0)) throw Error(ErrorCode::ZeroMass, "prior and scores have disjoint support");
  out.probs /= z;
  out.logits = out.probs.array().log();
  return out;
}

inline std::vector<int> rank(const ScoreVector& s) { return rank_by_score(s.probs); }

/// Sets dictionary rows to the embeddings of the most frequent high-relevance
/// answers in the given instances (ties by pool id); rows beyond the number of
/// distinct answers keep their current (small random) values.
inline void init_dictionary(ScorerParams& p, const Dataset& d, const std::vector<std::size_t>& which,
                            double threshold = 0.5, double scale = 0.1) {
  std::map<int, int> counts;
  std::map<int, Eigen::VectorXd> emb;
  for (auto n : which) {
    const auto& inst = d.instances[n];
    for (std::size_t c = 0; c < inst.size(); ++c) {
      if (inst.observed_relevance[c] >= threshold) {
        const int id = inst.candidates[c].pool_id;
        ++counts[id];
        emb.try_emplace(id, inst.candidate_embeddings.row(static_cast<Eigen::Index>(c)).transpose());
      }
    }
  }
  std::vector<std::pair<int, int>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.second > b.second; });
  for (Eigen::Index r = 0; r < p.n_dict() && r < static_cast<Eigen::Index>(ranked.size()); ++r) {
    const auto& e = emb.at(ranked[static_cast<std::size_t>(r)].first);
    if (e.size() != p.hidden_dim()) throw Error(ErrorCode::DimensionMismatch, "dictionary row width");
    p.d_u.row(r) = scale * e.transpose();
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header terminated by "end\n", then the flat parameter
// vector as little-endian IEEE-754 doubles.

inline void save_checkpoint(std::ostream& os, const ScorerParams& p, std::uint64_t seed = 0) {
  const auto flat = p.flat();
  os << "causalrank-checkpoint 1\n"
     << "variant " << to_string(p.variant) << '\n'
     << "input_dim " << p.input_dim() << '\n'
     << "hidden_dim " << p.hidden_dim() << '\n'
     << "n_dict " << p.n_dict() << '\n'
     << "attn_dim " << p.attn_dim() << '\n'
     << "seed " << seed << '\n'
     << "values " << flat.size() << '\n'
     << "end\n";
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    std::uint64_t bits;
    const double v = flat(k);
    std::memcpy(&bits, &v, sizeof bits);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    os.write(bytes, 8);
  }
}

struct Checkpoint {
  ScorerParams params;
  std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "causalrank-checkpoint 1") {
    throw Error(ErrorCode::ParseError, "not a checkpoint");
  }
  std::map<std::string, std::string> header;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    header[key] = value;
  }
  if (line != "end") throw Error(ErrorCode::ParseError, "truncated checkpoint header");
  auto get = [&](const std::string& k) -> std::string {
    auto it = header.find(k);
    if (it == header.end()) throw Error(ErrorCode::ParseError, "checkpoint header lacks " + k);
    return it->second;
  };
  Checkpoint ck;
  try {
    ck.params = ScorerParams::zeros(parse_variant(get("variant")), std::stol(get("input_dim")),
                                    std::stol(get("hidden_dim")), std::stol(get("n_dict")), std::stol(get("attn_dim")));
    ck.seed = std::stoull(get("seed"));
    if (std::stol(get("values")) != ck.params.size()) throw Error(ErrorCode::ParseError, "value count mismatch");
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::ParseError, "bad number in checkpoint header");
  }
  Eigen::VectorXd flat(ck.params.size());
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw Error(ErrorCode::ParseError, "truncated checkpoint body");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    flat(k) = v;
  }
  ck.params.set_flat(flat);
  return ck;
}

inline void save_checkpoint(const std::string& path, const ScorerParams& p, std::uint64_t seed = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  save_checkpoint(os, p, seed);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return load_checkpoint(is);
}

}  // namespace causalrank
