#pragma once

// Listwise objectives over candidate logits. Each returns the loss value and
// its gradient with respect to the logits.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "causalrank/errors.hpp"

namespace causalrank {

enum class LossKind { CE, R0, R1, R2, R3 };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::CE: return "ce";
    case LossKind::R0: return "r0";
    case LossKind::R1: return "r1";
    case LossKind::R2: return "r2";
    case LossKind::R3: return "r3";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "ce") return LossKind::CE;
  if (s == "r0") return LossKind::R0;
  if (s == "r1") return LossKind::R1;
  if (s == "r2") return LossKind::R2;
  if (s == "r3") return LossKind::R3;
  throw Error(ErrorCode::ConfigError, "unknown loss kind '" + std::string(s) + "' (ce|r0|r1|r2|r3)");
}

enum class TargetKind { RawRelevance, Normalized, Characteristic };

struct TargetScores {
  std::vector<double> s;
  TargetKind kind = TargetKind::RawRelevance;
};

/// Divides by the sum. Throws ZeroMass for an all-zero row.
inline TargetScores normalized(const std::vector<double>& relevance) {
  const double z = std::accumulate(relevance.begin(), relevance.end(), 0.0);
  if (!(z > 0.0)) throw Error(ErrorCode::ZeroMass, "relevance row has no mass");
  TargetScores t{relevance, TargetKind::Normalized};
  for (auto& v : t.s) v /= z;
  return t;
}

/// 1 for positive relevance, 0 otherwise.
inline TargetScores characteristic(const std::vector<double>& relevance) {
  TargetScores t{relevance, TargetKind::Characteristic};
  for (auto& v : t.s) v = v > 0.0 ? 1.0 : 0.0;
  return t;
}

struct LossValue {
  double value = 0.0;
  Eigen::VectorXd grad_logits;
};

namespace detail {

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void check_lengths(const Eigen::VectorXd& logits, std::size_t n) {
  if (static_cast<std::size_t>(logits.size()) != n) {
    throw Error(ErrorCode::LengthMismatch,
                "logits have " + std::to_string(logits.size()) + " entries, targets " + std::to_string(n));
  }
  if (n == 0) throw Error(ErrorCode::LengthMismatch, "empty candidate list");
}

}  // namespace detail

/// R0: squared distance between softmax(logits) and the sum-normalised scores.
inline LossValue loss_r0(const Eigen::VectorXd& logits, const std::vector<double>& relevance) {
  detail::check_lengths(logits, relevance.size());
  const auto s = normalized(relevance).s;
  const Eigen::VectorXd p = detail::softmax(logits);
  const Eigen::VectorXd r = 2.0 * (p - Eigen::Map<const Eigen::VectorXd>(s.data(), p.size()));
  LossValue out;
  out.value = 0.25 * r.squaredNorm();
  // Jacobian of softmax is diag(p) - p p^T.
  out.grad_logits = p.array() * (r.array() - p.dot(r));
  return out;
}

/// R1: weighted log-softmax, -sum_i s_i log softmax(p)_i; s must sum to 1.
inline LossValue loss_r1(const Eigen::VectorXd& logits, const std::vector<double>& s) {
  detail::check_lengths(logits, s.size());
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-10) throw Error(ErrorCode::NotNormalized, "R1 targets must sum to 1");
  const Eigen::Map<const Eigen::VectorXd> sv(s.data(), logits.size());
  const Eigen::VectorXd logp = detail::log_softmax(logits);
  LossValue out;
  out.value = -sv.dot(logp);
  out.grad_logits = logp.array().exp().matrix() - sv;
  return out;
}

/// R2: per-candidate binary cross-entropy against scores in [0,1].
inline LossValue loss_r2(const Eigen::VectorXd& logits, const std::vector<double>& s) {
  detail::check_lengths(logits, s.size());
  LossValue out;
  out.grad_logits.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double si = s[static_cast<std::size_t>(i)];
    if (!(si >= 0.0 && si <= 1.0)) throw Error(ErrorCode::NotNormalized, "R2 targets must lie in [0,1]");
    // -log sigmoid(p) = softplus(-p); -log(1 - sigmoid(p)) = softplus(p)
    out.value += si * detail::softplus(-logits(i)) + (1.0 - si) * detail::softplus(logits(i));
    out.grad_logits(i) = detail::stable_sigmoid(logits(i)) - si;
  }
  return out;
}

/// R3: for every positive candidate i, -log of its softmax share within
/// {i} and the candidates of strictly lower relevance.
inline LossValue loss_r3(const Eigen::VectorXd& logits, const std::vector<double>& relevance) {
  detail::check_lengths(logits, relevance.size());
  const auto n = relevance.size();
  LossValue out;
  out.grad_logits = Eigen::VectorXd::Zero(logits.size());

  // Candidates sorted by relevance; the competitors of i form a prefix.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return relevance[a] < relevance[b]; });

  bool any_positive = false;
  std::size_t lower_end = 0;  // order[0, lower_end) have relevance < current
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t i = order[pos];
    while (lower_end < n && relevance[order[lower_end]] < relevance[i]) ++lower_end;
    if (!(relevance[i] > 0.0)) continue;
    any_positive = true;
    double mx = logits(static_cast<Eigen::Index>(i));
    for (std::size_t k = 0; k < lower_end; ++k) mx = std::max(mx, logits(static_cast<Eigen::Index>(order[k])));
    double z = std::exp(logits(static_cast<Eigen::Index>(i)) - mx);
    for (std::size_t k = 0; k < lower_end; ++k) z += std::exp(logits(static_cast<Eigen::Index>(order[k])) - mx);
    out.value += mx + std::log(z) - logits(static_cast<Eigen::Index>(i));
    out.grad_logits(static_cast<Eigen::Index>(i)) += std::exp(logits(static_cast<Eigen::Index>(i)) - mx) / z - 1.0;
    for (std::size_t k = 0; k < lower_end; ++k) {
      const auto j = static_cast<Eigen::Index>(order[k]);
      out.grad_logits(j) += std::exp(logits(j) - mx) / z;
    }
  }
  if (!any_positive) throw Error(ErrorCode::NoPositiveCandidates, "R3 needs a candidate with positive relevance");
  return out;
}

/// Softmax cross-entropy against a single ground-truth candidate.
inline LossValue loss_ce(const Eigen::VectorXd& logits, int gt_index) {
  if (gt_index < 0 || gt_index >= logits.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "ground-truth index " + std::to_string(gt_index));
  }
  const Eigen::VectorXd logp = detail::log_softmax(logits);
  LossValue out;
  out.value = -logp(gt_index);
  out.grad_logits = logp.array().exp();
  out.grad_logits(gt_index) -= 1.0;
  return out;
}

/// What a training step knows about one instance.
struct Targets {
  int gt_index = 0;
  std::vector<double> relevance;  // raw, in [0,1]
};

/// Dispatch by kind. R0 and R1 normalise the raw relevance by its sum; R2
/// uses it directly; R3 derives the characteristic scores itself.
inline LossValue evaluate_loss(LossKind kind, const Eigen::VectorXd& logits, const Targets& t) {
  switch (kind) {
    case LossKind::CE: return loss_ce(logits, t.gt_index);
    case LossKind::R0: return loss_r0(logits, t.relevance);
    case LossKind::R1: return loss_r1(logits, normalized(t.relevance).s);
    case LossKind::R2: return loss_r2(logits, t.relevance);
    case LossKind::R3: return loss_r3(logits, t.relevance);
  }
  throw Error(ErrorCode::ConfigError, "unknown loss kind");
}

}  // namespace causalrank
