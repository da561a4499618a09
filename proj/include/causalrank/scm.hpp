#pragma once

// Finite-domain structural causal models evaluated by exact enumeration.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalrank/errors.hpp"
#include "causalrank/graph.hpp"

namespace causalrank {

using Assignment = std::map<NodeId, int>;
using Distribution = std::vector<double>;

/// P(node | parents). Row r is the distribution for the parent configuration
/// whose mixed-radix index is r, parents taken in lexicographic order with the
/// last parent varying fastest.
using Cpt = std::vector<std::vector<double>>;

class DiscreteScm {
 public:
  DiscreteScm() = default;

  DiscreteScm(CausalGraph graph, std::map<NodeId, int> cardinalities, std::map<NodeId, Cpt> cpts, NodeSet observed = {})
      : graph_(std::move(graph)),
        cardinalities_(std::move(cardinalities)),
        cpts_(std::move(cpts)),
        observed_(std::move(observed)) {
    validate();
    compile();
  }

  const CausalGraph& graph() const noexcept { return graph_; }
  const std::map<NodeId, int>& cardinalities() const noexcept { return cardinalities_; }
  const std::map<NodeId, Cpt>& cpts() const noexcept { return cpts_; }
  const NodeSet& observed() const noexcept { return observed_; }
  int cardinality(const NodeId& n) const {
    auto it = cardinalities_.find(n);
    if (it == cardinalities_.end()) throw Error(ErrorCode::UnknownNode, n);
    return it->second;
  }

  /// Node names in the internal (lexicographic) order.
  const std::vector<NodeId>& names() const noexcept { return names_; }
  std::size_t index_of(const NodeId& n) const {
    auto it = index_.find(n);
    if (it == index_.end()) throw Error(ErrorCode::UnknownNode, n);
    return it->second;
  }

  /// Chain-rule probability of a complete assignment given as dense values in
  /// `names()` order.
  double joint_dense(const std::vector<int>& values) const {
    double p = 1.0;
    for (std::size_t v = 0; v < names_.size(); ++v) {
      std::size_t row = 0;
      for (auto parent : parents_[v]) row = row * static_cast<std::size_t>(card_[parent]) + values[parent];
      p *= tables_[v][row][values[v]];
      if (p == 0.0) return 0.0;
    }
    return p;
  }

  std::vector<int> dense(const Assignment& a) const {
    std::vector<int> values(names_.size(), -1);
    for (const auto& [n, v] : a) {
      const auto i = index_of(n);
      if (v < 0 || v >= card_[i]) {
        throw Error(ErrorCode::IndexOutOfRange, n + "=" + std::to_string(v));
      }
      values[i] = v;
    }
    return values;
  }

  /// Calls fn(values, probability) for every complete assignment extending
  /// `fixed` (entries of -1 are free).
  void enumerate(std::vector<int> values, const std::function<void(const std::vector<int>&, double)>& fn) const {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] < 0) {
        free.push_back(i);
        values[i] = 0;
      }
    }
    while (true) {
      fn(values, joint_dense(values));
      std::size_t k = 0;
      for (; k < free.size(); ++k) {
        auto i = free[free.size() - 1 - k];
        if (++values[i] < card_[i]) break;
        values[i] = 0;
      }
      if (k == free.size()) return;
    }
  }

 private:
  void validate() const {
    for (const auto& n : graph_.nodes()) {
      auto c = cardinalities_.find(n);
      if (c == cardinalities_.end()) throw Error(ErrorCode::InvalidModel, "missing cardinality for " + n);
      if (c->second < 1) throw Error(ErrorCode::InvalidModel, "cardinality of " + n + " must be >= 1");
      auto t = cpts_.find(n);
      if (t == cpts_.end()) throw Error(ErrorCode::InvalidModel, "missing CPT for " + n);
      std::size_t rows = 1;
      for (const auto& p : graph_.parents(n)) {
        auto pc = cardinalities_.find(p);
        if (pc == cardinalities_.end()) throw Error(ErrorCode::InvalidModel, "missing cardinality for " + p);
        rows *= static_cast<std::size_t>(pc->second);
      }
      if (t->second.size() != rows) {
        throw Error(ErrorCode::InvalidModel, "CPT for " + n + " has " + std::to_string(t->second.size()) +
                                                 " rows, expected " + std::to_string(rows));
      }
      for (const auto& row : t->second) {
        if (row.size() != static_cast<std::size_t>(c->second)) {
          throw Error(ErrorCode::InvalidModel, "CPT row width mismatch for " + n);
        }
        double sum = 0.0;
        for (double p : row) {
          if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::InvalidModel, "negative entry in CPT of " + n);
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw Error(ErrorCode::InvalidModel, "CPT row of " + n + " does not sum to 1");
      }
    }
    for (const auto& [n, _] : cardinalities_) graph_.require(n);
    for (const auto& [n, _] : cpts_) graph_.require(n);
    for (const auto& n : observed_) graph_.require(n);
  }

  void compile() {
    names_.assign(graph_.nodes().begin(), graph_.nodes().end());
    for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = i;
    card_.clear();
    parents_.clear();
    tables_.clear();
    for (const auto& n : names_) {
      card_.push_back(cardinalities_.at(n));
      std::vector<std::size_t> ps;
      for (const auto& p : graph_.parents(n)) ps.push_back(index_.at(p));
      parents_.push_back(std::move(ps));
      tables_.push_back(cpts_.at(n));
    }
  }

  CausalGraph graph_;
  std::map<NodeId, int> cardinalities_;
  std::map<NodeId, Cpt> cpts_;
  NodeSet observed_;

  std::vector<NodeId> names_;
  std::map<NodeId, std::size_t> index_;
  std::vector<int> card_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<Cpt> tables_;
};

// ---------------------------------------------------------------------------
// Queries

inline double joint_prob(const DiscreteScm& m, const Assignment& a) {
  for (const auto& n : m.names()) {
    if (!a.count(n)) throw Error(ErrorCode::IncompleteAssignment, "no value for " + n);
  }
  return m.joint_dense(m.dense(a));
}

/// Probability of a partial assignment.
inline double marginal_prob(const DiscreteScm& m, const Assignment& a) {
  double total = 0.0;
  m.enumerate(m.dense(a), [&](const std::vector<int>&, double p) { total += p; });
  return total;
}

/// P(target | evidence) by exact enumeration.
inline Distribution conditional(const DiscreteScm& m, const NodeId& target, const Assignment& evidence) {
  const auto t = m.index_of(target);
  if (evidence.count(target)) throw Error(ErrorCode::InvalidModel, "target " + target + " is also evidence");
  Distribution out(static_cast<std::size_t>(m.cardinality(target)), 0.0);
  m.enumerate(m.dense(evidence), [&](const std::vector<int>& v, double p) { out[v[t]] += p; });
  const double z = std::accumulate(out.begin(), out.end(), 0.0);
  if (!(z > 0.0)) throw Error(ErrorCode::ZeroProbabilityEvidence, "evidence has probability 0");
  for (auto& p : out) p /= z;
  return out;
}

/// Graph surgery: each intervened node loses its incoming edges and receives
/// a point-mass CPT at its assigned value.
inline DiscreteScm intervene(const DiscreteScm& m, const Assignment& dos) {
  if (dos.empty()) throw Error(ErrorCode::InvalidModel, "empty intervention");
  auto graph = m.graph();
  auto cpts = m.cpts();
  for (const auto& [n, v] : dos) {
    const int card = m.cardinality(n);
    if (v < 0 || v >= card) throw Error(ErrorCode::IndexOutOfRange, n + "=" + std::to_string(v));
    for (const auto& p : graph.parents(n)) graph = graph.without_edge(p, n);
    std::vector<double> row(static_cast<std::size_t>(card), 0.0);
    row[static_cast<std::size_t>(v)] = 1.0;
    cpts[n] = Cpt{row};
  }
  return DiscreteScm(std::move(graph), m.cardinalities(), std::move(cpts), m.observed());
}

inline Distribution interventional_prob(const DiscreteScm& m, const NodeId& target, const Assignment& dos,
                                        const Assignment& evidence) {
  if (dos.count(target)) throw Error(ErrorCode::InvalidModel, "target " + target + " is intervened on");
  if (dos.empty()) return conditional(m, target, evidence);
  return conditional(intervene(m, dos), target, evidence);
}

enum class ZeroEvidencePolicy { Uniform, Throw };

/// Backdoor adjustment over a single node:
///   sum_u P(target | treatment, context, u) * P(u | prior context)
/// where the prior conditions on the treatment/context nodes that are
/// ancestors of `adjust_over` (H in the dialog graph, nothing for a fork).
/// With the Uniform policy a term whose conditional is undefined is replaced
/// by the uniform distribution and a note is appended to `diagnostics`.
inline Distribution backdoor_adjust(const DiscreteScm& m, const NodeId& target, const Assignment& treatment,
                                    const Assignment& context, const NodeId& adjust_over,
                                    ZeroEvidencePolicy policy = ZeroEvidencePolicy::Uniform,
                                    std::vector<std::string>* diagnostics = nullptr) {
  m.graph().require(adjust_over);
  m.graph().require(target);
  Assignment given = treatment;
  for (const auto& [n, v] : context) given[n] = v;
  if (given.count(adjust_over) || given.count(target)) {
    throw Error(ErrorCode::InvalidModel, "target and adjustment node must be free");
  }

  const auto anc = m.graph().ancestors(adjust_over);
  Assignment prior_given;
  for (const auto& [n, v] : given) {
    if (anc.count(n)) prior_given[n] = v;
  }
  const auto prior = conditional(m, adjust_over, prior_given);

  const auto k = static_cast<std::size_t>(m.cardinality(target));
  Distribution out(k, 0.0);
  for (std::size_t u = 0; u < prior.size(); ++u) {
    if (prior[u] == 0.0) continue;
    auto evidence = given;
    evidence[adjust_over] = static_cast<int>(u);
    Distribution term;
    try {
      term = conditional(m, target, evidence);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroProbabilityEvidence || policy == ZeroEvidencePolicy::Throw) throw;
      term.assign(k, 1.0 / static_cast<double>(k));
      if (diagnostics) {
        diagnostics->push_back("undefined conditional at " + adjust_over + "=" + std::to_string(u) +
                               "; used uniform");
      }
    }
    for (std::size_t a = 0; a < k; ++a) out[a] += prior[u] * term[a];
  }
  const double z = std::accumulate(out.begin(), out.end(), 0.0);
  for (auto& p : out) p /= z;
  return out;
}

// ---------------------------------------------------------------------------
// Joint tables and information measures

/// Full joint distribution in `names()` order, last node varying fastest.
struct JointTable {
  std::vector<int> card;
  std::vector<double> p;
};

inline JointTable joint_table(const DiscreteScm& m) {
  JointTable t;
  for (const auto& n : m.names()) t.card.push_back(m.cardinality(n));
  t.p.reserve(std::accumulate(t.card.begin(), t.card.end(), std::size_t{1},
                              [](std::size_t a, int c) { return a * static_cast<std::size_t>(c); }));
  m.enumerate(std::vector<int>(m.names().size(), -1), [&](const std::vector<int>&, double p) { t.p.push_back(p); });
  return t;
}

/// I(x ; y | z) in nats from a joint table; arguments are node indices.
inline double conditional_mutual_information(const JointTable& t, std::size_t x, std::size_t y,
                                             const std::vector<std::size_t>& z) {
  const std::size_t n = t.card.size();
  std::vector<std::size_t> stride(n, 1);
  for (std::size_t i = n - 1; i > 0; --i) stride[i - 1] = stride[i] * static_cast<std::size_t>(t.card[i]);

  std::size_t z_states = 1;
  for (auto i : z) z_states *= static_cast<std::size_t>(t.card[i]);
  const auto cx = static_cast<std::size_t>(t.card[x]);
  const auto cy = static_cast<std::size_t>(t.card[y]);
  std::vector<double> pxyz(z_states * cx * cy, 0.0);

  for (std::size_t flat = 0; flat < t.p.size(); ++flat) {
    if (t.p[flat] == 0.0) continue;
    std::size_t zi = 0;
    for (auto i : z) zi = zi * static_cast<std::size_t>(t.card[i]) + (flat / stride[i]) % t.card[i];
    const auto xi = (flat / stride[x]) % cx;
    const auto yi = (flat / stride[y]) % cy;
    pxyz[(zi * cx + xi) * cy + yi] += t.p[flat];
  }

  double cmi = 0.0;
  for (std::size_t zi = 0; zi < z_states; ++zi) {
    double pz = 0.0;
    std::vector<double> px(cx, 0.0), py(cy, 0.0);
    for (std::size_t a = 0; a < cx; ++a) {
      for (std::size_t b = 0; b < cy; ++b) {
        const double v = pxyz[(zi * cx + a) * cy + b];
        pz += v;
        px[a] += v;
        py[b] += v;
      }
    }
    if (pz == 0.0) continue;
    for (std::size_t a = 0; a < cx; ++a) {
      for (std::size_t b = 0; b < cy; ++b) {
        const double v = pxyz[(zi * cx + a) * cy + b];
        if (v > 0.0) cmi += v * std::log(v * pz / (px[a] * py[b]));
      }
    }
  }
  return std::max(cmi, 0.0);
}

// ---------------------------------------------------------------------------
// Sampling

/// One ancestral sample, dense values in `names()` order.
template <class Rng>
std::vector<int> ancestral_sample(const DiscreteScm& m, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> values(m.names().size(), 0);
  for (const auto& n : m.graph().topological_order()) {
    const auto i = m.index_of(n);
    std::size_t row = 0;
    for (const auto& p : m.graph().parents(n)) {
      row = row * static_cast<std::size_t>(m.cardinality(p)) + static_cast<std::size_t>(values[m.index_of(p)]);
    }
    const auto& probs = m.cpts().at(n)[row];
    double r = unit(rng);
    int v = 0;
    for (; v + 1 < static_cast<int>(probs.size()); ++v) {
      r -= probs[static_cast<std::size_t>(v)];
      if (r < 0.0) break;
    }
    values[i] = v;
  }
  return values;
}

/// Random CPTs for `graph`: each row is uniform(0,1) draws plus `floor`,
/// normalised, so every entry is strictly positive when floor > 0.
template <class Rng>
DiscreteScm random_scm(const CausalGraph& graph, const std::map<NodeId, int>& cardinalities, Rng& rng,
                       double floor = 0.05, NodeSet observed = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::map<NodeId, Cpt> cpts;
  for (const auto& n : graph.nodes()) {
    auto c = cardinalities.find(n);
    if (c == cardinalities.end()) throw Error(ErrorCode::InvalidModel, "missing cardinality for " + n);
    std::size_t rows = 1;
    for (const auto& p : graph.parents(n)) {
      auto pc = cardinalities.find(p);
      if (pc == cardinalities.end()) throw Error(ErrorCode::InvalidModel, "missing cardinality for " + p);
      rows *= static_cast<std::size_t>(pc->second);
    }
    Cpt t(rows, std::vector<double>(static_cast<std::size_t>(c->second)));
    for (auto& row : t) {
      double z = 0.0;
      for (auto& v : row) z += (v = unit(rng) + floor);
      for (auto& v : row) v /= z;
    }
    cpts.emplace(n, std::move(t));
  }
  return DiscreteScm(graph, cardinalities, std::move(cpts), std::move(observed));
}

// ---------------------------------------------------------------------------
// JSON documents

inline nlohmann::json to_json(const DiscreteScm& m) {
  nlohmann::json j;
  j["graph"]["nodes"] = std::vector<std::string>(m.graph().nodes().begin(), m.graph().nodes().end());
  auto edges = nlohmann::json::array();
  for (const auto& [from, to] : m.graph().edges()) edges.push_back({from, to});
  j["graph"]["edges"] = edges;
  j["cardinalities"] = m.cardinalities();
  for (const auto& [n, cpt] : m.cpts()) {
    j["cpts"][n]["parents"] = m.graph().parents(n);
    j["cpts"][n]["rows"] = cpt;
  }
  j["observed"] = std::vector<std::string>(m.observed().begin(), m.observed().end());
  return j;
}

inline DiscreteScm scm_from_json(const nlohmann::json& j) {
  try {
    NodeSet nodes;
    std::set<Edge> edges;
    for (const auto& n : j.at("graph").at("nodes")) nodes.insert(n.get<std::string>());
    for (const auto& e : j.at("graph").at("edges")) edges.emplace(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    CausalGraph g(std::move(nodes), std::move(edges));
    auto cards = j.at("cardinalities").get<std::map<NodeId, int>>();
    std::map<NodeId, Cpt> cpts;
    for (const auto& [n, body] : j.at("cpts").items()) {
      if (body.contains("parents") && body.at("parents").get<std::vector<std::string>>() != g.parents(n)) {
        throw Error(ErrorCode::InvalidModel, "CPT parents of " + n + " disagree with the graph");
      }
      cpts[n] = body.at("rows").get<Cpt>();
    }
    NodeSet observed;
    if (j.contains("observed")) {
      for (const auto& n : j.at("observed")) observed.insert(n.get<std::string>());
    }
    return DiscreteScm(std::move(g), std::move(cards), std::move(cpts), std::move(observed));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

// ---------------------------------------------------------------------------
// Query strings: "P(A | do Q=1, H=0, I=2)" and "P(A | do Q=1, H=0; adjust U)".

struct Query {
  NodeId target;
  Assignment dos;
  Assignment evidence;
  std::optional<NodeId> adjust_over;
};

inline Query parse_query(const std::string& text) {
  auto fail = [&](const std::string& why) { return Error(ErrorCode::ParseError, why + " in '" + text + "'"); };
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
  };
  auto s = trim(text);
  if (s.size() < 4 || s.rfind("P(", 0) != 0 || s.back() != ')') throw fail("expected P(...)");
  s = s.substr(2, s.size() - 3);

  Query q;
  const auto bar = s.find('|');
  q.target = trim(s.substr(0, bar));
  if (q.target.empty()) throw fail("missing target");
  if (bar == std::string::npos) return q;

  std::string rest = s.substr(bar + 1);
  if (auto semi = rest.find(';'); semi != std::string::npos) {
    auto adj = trim(rest.substr(semi + 1));
    if (adj.rfind("adjust", 0) != 0) throw fail("expected 'adjust <node>'");
    auto node = trim(adj.substr(6));
    if (node.empty()) throw fail("missing adjustment node");
    q.adjust_over = node;
    rest = rest.substr(0, semi);
  }

  bool in_do = false;
  std::stringstream items(rest);
  std::string item;
  while (std::getline(items, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item.rfind("do ", 0) == 0) {
      in_do = true;
      item = trim(item.substr(3));
    } else if (item.rfind("do(", 0) == 0 && item.back() == ')') {
      in_do = true;
      item = trim(item.substr(3, item.size() - 4));
    }
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw fail("expected NODE=value");
    auto name = trim(item.substr(0, eq));
    int value = 0;
    try {
      value = std::stoi(trim(item.substr(eq + 1)));
    } catch (const std::exception&) {
      throw fail("bad value for " + name);
    }
    (in_do ? q.dos : q.evidence)[name] = value;
  }
  return q;
}

/// Evaluates a parsed query. A `do` prefix applies to its item and every item
/// after it, so "do Q=1, H=0, I=2" intervenes on all three; list plain
/// evidence before the first `do`.
inline Distribution evaluate_query(const DiscreteScm& m, const Query& q, std::vector<std::string>* diagnostics = nullptr) {
  if (q.adjust_over) {
    return backdoor_adjust(m, q.target, q.dos, q.evidence, *q.adjust_over, ZeroEvidencePolicy::Uniform, diagnostics);
  }
  return interventional_prob(m, q.target, q.dos, q.evidence);
}

}  // namespace causalrank
