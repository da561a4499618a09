#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "causalrank/errors.hpp"

namespace causalrank {

/// Candidate indices best first. Stable: equal scores keep index order.
inline std::vector<int> rank_by_score(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

inline std::vector<int> rank_by_score(const Eigen::VectorXd& scores) {
  return rank_by_score(std::vector<double>(scores.data(), scores.data() + scores.size()));
}

struct RankingResult {
  std::vector<int> order;
  std::vector<double> relevance;

  void validate() const {
    if (order.size() != relevance.size()) throw Error(ErrorCode::LengthMismatch, "order and relevance lengths differ");
    std::vector<char> seen(order.size(), 0);
    for (int c : order) {
      if (c < 0 || static_cast<std::size_t>(c) >= order.size() || seen[static_cast<std::size_t>(c)]) {
        throw Error(ErrorCode::IndexOutOfRange, "order is not a permutation");
      }
      seen[static_cast<std::size_t>(c)] = 1;
    }
  }
};

/// DCG of the first k entries of a relevance sequence, linear gain.
inline double dcg_at(const std::vector<double>& ranked_relevance, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t j = 0; j < std::min(k, ranked_relevance.size()); ++j) {
    dcg += ranked_relevance[j] / std::log2(static_cast<double>(j) + 2.0);
  }
  return dcg;
}

/// NDCG truncated at the number of positively relevant candidates.
inline double ndcg(const RankingResult& r) {
  r.validate();
  const auto k = static_cast<std::size_t>(
      std::count_if(r.relevance.begin(), r.relevance.end(), [](double v) { return v > 0.0; }));
  if (k == 0) throw Error(ErrorCode::NoRelevantCandidates, "no candidate has positive relevance");
  std::vector<double> ranked;
  ranked.reserve(r.order.size());
  for (int c : r.order) ranked.push_back(r.relevance[static_cast<std::size_t>(c)]);
  auto ideal = r.relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  return dcg_at(ranked, k) / dcg_at(ideal, k);
}

/// 1-based rank of candidate c.
inline int rank_of(const std::vector<int>& order, int c) {
  auto it = std::find(order.begin(), order.end(), c);
  if (it == order.end()) throw Error(ErrorCode::IndexOutOfRange, "candidate " + std::to_string(c) + " not ranked");
  return static_cast<int>(it - order.begin()) + 1;
}

inline double mrr(const RankingResult& r, int gt_index) {
  if (gt_index < 0 || static_cast<std::size_t>(gt_index) >= r.order.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "ground-truth index " + std::to_string(gt_index));
  }
  return 1.0 / rank_of(r.order, gt_index);
}

/// Mean 1-based rank of candidates matching the predicate.
inline double mean_rank_of(const RankingResult& r, const std::function<bool(int)>& matches) {
  double total = 0.0;
  int n = 0;
  for (std::size_t pos = 0; pos < r.order.size(); ++pos) {
    if (matches(r.order[pos])) {
      total += static_cast<double>(pos + 1);
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::NoMatch, "no candidate matches");
  return total / n;
}

}  // namespace causalrank
