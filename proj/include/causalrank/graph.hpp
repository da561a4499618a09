#pragma once

// Causal DAGs over named nodes: structural queries, backdoor path enumeration,
// d-separation, and the two surgery operators on the dialog graph.

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "causalrank/errors.hpp"

namespace causalrank {

using NodeId = std::string;
using NodeSet = std::set<NodeId>;
using Edge = std::pair<NodeId, NodeId>;

/// Immutable directed acyclic graph. Every "mutation" returns a new value and
/// re-validates acyclicity.
class CausalGraph {
 public:
  CausalGraph() = default;

  CausalGraph(NodeSet nodes, std::set<Edge> edges) : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    for (const auto& n : nodes_) {
      if (n.empty()) throw Error(ErrorCode::UnknownNode, "empty node name");
    }
    for (const auto& [from, to] : edges_) {
      if (from == to) throw Error(ErrorCode::SelfLoop, from + " -> " + to);
      if (!nodes_.count(from)) throw Error(ErrorCode::UnknownNode, from);
      if (!nodes_.count(to)) throw Error(ErrorCode::UnknownNode, to);
    }
    if (!acyclic()) throw Error(ErrorCode::CycleIntroduced, "graph contains a directed cycle");
  }

  const NodeSet& nodes() const noexcept { return nodes_; }
  const std::set<Edge>& edges() const noexcept { return edges_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  bool has_node(const NodeId& n) const { return nodes_.count(n) > 0; }
  bool has_edge(const NodeId& from, const NodeId& to) const { return edges_.count({from, to}) > 0; }

  void require(const NodeId& n) const {
    if (!has_node(n)) throw Error(ErrorCode::UnknownNode, n);
  }

  CausalGraph with_node(const NodeId& n) const {
    if (has_node(n)) throw Error(ErrorCode::DuplicateNode, n);
    auto nodes = nodes_;
    nodes.insert(n);
    return CausalGraph(std::move(nodes), edges_);
  }

  CausalGraph with_edge(const NodeId& from, const NodeId& to) const {
    auto edges = edges_;
    edges.emplace(from, to);
    return CausalGraph(nodes_, std::move(edges));
  }

  CausalGraph without_edge(const NodeId& from, const NodeId& to) const {
    if (!has_edge(from, to)) throw Error(ErrorCode::MissingEdge, from + " -> " + to);
    auto edges = edges_;
    edges.erase({from, to});
    return CausalGraph(nodes_, std::move(edges));
  }

  /// Parents in lexicographic order. CPT layouts depend on this order.
  std::vector<NodeId> parents(const NodeId& n) const {
    require(n);
    std::vector<NodeId> out;
    for (const auto& [from, to] : edges_) {
      if (to == n) out.push_back(from);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<NodeId> children(const NodeId& n) const {
    require(n);
    std::vector<NodeId> out;
    auto it = edges_.lower_bound({n, std::string()});
    for (; it != edges_.end() && it->first == n; ++it) out.push_back(it->second);
    return out;
  }

  /// Strict descendants of n.
  NodeSet descendants(const NodeId& n) const {
    NodeSet seen;
    std::vector<NodeId> stack = children(n);
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      if (!seen.insert(cur).second) continue;
      for (auto& c : children(cur)) stack.push_back(c);
    }
    return seen;
  }

  /// Strict ancestors of n.
  NodeSet ancestors(const NodeId& n) const {
    NodeSet seen;
    std::vector<NodeId> stack = parents(n);
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      if (!seen.insert(cur).second) continue;
      for (auto& p : parents(cur)) stack.push_back(p);
    }
    return seen;
  }

  /// Kahn's algorithm with lexicographic tie-breaking.
  std::vector<NodeId> topological_order() const {
    std::map<NodeId, int> indegree;
    for (const auto& n : nodes_) indegree[n] = 0;
    for (const auto& e : edges_) ++indegree[e.second];
    std::set<NodeId> ready;
    for (const auto& [n, d] : indegree) {
      if (d == 0) ready.insert(n);
    }
    std::vector<NodeId> order;
    while (!ready.empty()) {
      auto n = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(n);
      auto it = edges_.lower_bound({n, std::string()});
      for (; it != edges_.end() && it->first == n; ++it) {
        if (--indegree[it->second] == 0) ready.insert(it->second);
      }
    }
    return order;
  }

  bool acyclic() const { return topological_order().size() == nodes_.size(); }

  friend bool operator==(const CausalGraph&, const CausalGraph&) = default;

 private:
  NodeSet nodes_;
  std::set<Edge> edges_;
};

// ---------------------------------------------------------------------------
// Paths

enum class Arrow { Forward, Backward };

/// One step of an undirected walk. `arrow_into_next` says whether the edge to
/// the following node points along the walk (node -> next) or against it
/// (node <- next). The final step of a path carries Forward by convention.
struct PathStep {
  NodeId node;
  Arrow arrow_into_next = Arrow::Forward;

  friend bool operator==(const PathStep&, const PathStep&) = default;
};

using Path = std::vector<PathStep>;

inline std::string to_string(const Path& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    out += path[i].node;
    if (i + 1 < path.size()) out += path[i].arrow_into_next == Arrow::Forward ? "->" : "<-";
  }
  return out;
}

namespace detail {

inline void enumerate_paths(const CausalGraph& g, const NodeId& target, Path& current, NodeSet& on_path,
                            std::vector<Path>& out) {
  const NodeId here = current.back().node;
  if (here == target) {
    out.push_back(current);
    return;
  }
  auto extend = [&](const NodeId& next, Arrow arrow) {
    if (on_path.count(next)) return;
    current.back().arrow_into_next = arrow;
    current.push_back({next, Arrow::Forward});
    on_path.insert(next);
    enumerate_paths(g, target, current, on_path, out);
    on_path.erase(next);
    current.pop_back();
  };
  for (const auto& c : g.children(here)) extend(c, Arrow::Forward);
  for (const auto& p : g.parents(here)) extend(p, Arrow::Backward);
}

inline std::vector<NodeId> node_sequence(const Path& p) {
  std::vector<NodeId> out;
  out.reserve(p.size());
  for (const auto& s : p) out.push_back(s.node);
  return out;
}

inline void sort_paths(std::vector<Path>& paths) {
  std::sort(paths.begin(), paths.end(),
            [](const Path& a, const Path& b) { return node_sequence(a) < node_sequence(b); });
}

}  // namespace detail

/// Every simple path between x and y in the skeleton, ordered by node sequence.
inline std::vector<Path> all_simple_paths(const CausalGraph& g, const NodeId& x, const NodeId& y) {
  g.require(x);
  g.require(y);
  std::vector<Path> out;
  if (x == y) return out;
  Path current{{x, Arrow::Forward}};
  NodeSet on_path{x};
  detail::enumerate_paths(g, y, current, on_path, out);
  detail::sort_paths(out);
  return out;
}

/// Simple paths from x to y whose first edge points into x.
inline std::vector<Path> backdoor_paths(const CausalGraph& g, const NodeId& x, const NodeId& y) {
  g.require(x);
  g.require(y);
  if (x == y) throw Error(ErrorCode::UnknownNode, "backdoor paths need distinct endpoints");
  std::vector<Path> out;
  for (auto& p : all_simple_paths(g, x, y)) {
    if (p.size() >= 2 && p.front().arrow_into_next == Arrow::Backward) out.push_back(std::move(p));
  }
  return out;
}

/// A path is blocked by z if it holds a non-collider in z, or a collider that
/// has neither itself nor any descendant in z.
inline bool path_blocked(const CausalGraph& g, const Path& path, const NodeSet& z) {
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    const bool into_from_left = path[i - 1].arrow_into_next == Arrow::Forward;
    const bool into_from_right = path[i].arrow_into_next == Arrow::Backward;
    const auto& node = path[i].node;
    if (into_from_left && into_from_right) {
      bool open = z.count(node) > 0;
      if (!open) {
        for (const auto& d : g.descendants(node)) {
          if (z.count(d)) {
            open = true;
            break;
          }
        }
      }
      if (!open) return true;
    } else if (z.count(node)) {
      return true;
    }
  }
  return false;
}

/// d-separation by reachability over (node, direction) states, after the
/// Bayes-ball formulation. Linear in the graph size.
inline bool d_separated(const CausalGraph& g, const NodeId& x, const NodeId& y, const NodeSet& z) {
  g.require(x);
  g.require(y);
  for (const auto& n : z) g.require(n);
  if (z.count(x) || z.count(y)) throw Error(ErrorCode::UnknownNode, "endpoints must not be in the conditioning set");
  if (x == y) return false;

  // Nodes that are in z or have a descendant in z; colliders there are open.
  NodeSet z_or_ancestor;
  for (const auto& n : z) {
    z_or_ancestor.insert(n);
    for (const auto& a : g.ancestors(n)) z_or_ancestor.insert(a);
  }

  // Direction: Up means we arrived from a child, Down means from a parent.
  enum Dir { Up, Down };
  std::set<std::pair<NodeId, Dir>> visited;
  std::vector<std::pair<NodeId, Dir>> frontier{{x, Up}};
  while (!frontier.empty()) {
    auto [node, dir] = frontier.back();
    frontier.pop_back();
    if (!visited.insert({node, dir}).second) continue;
    if (node == y) return false;
    const bool observed = z.count(node) > 0;
    if (dir == Up && !observed) {
      for (const auto& p : g.parents(node)) frontier.emplace_back(p, Up);
      for (const auto& c : g.children(node)) frontier.emplace_back(c, Down);
    } else if (dir == Down) {
      if (!observed) {
        for (const auto& c : g.children(node)) frontier.emplace_back(c, Down);
      }
      if (z_or_ancestor.count(node)) {
        for (const auto& p : g.parents(node)) frontier.emplace_back(p, Up);
      }
    }
  }
  return true;
}

/// Backdoor criterion: z contains no descendant of x and blocks every
/// backdoor path from x to y.
inline bool satisfies_backdoor(const CausalGraph& g, const NodeId& x, const NodeId& y, const NodeSet& z) {
  g.require(x);
  g.require(y);
  for (const auto& n : z) g.require(n);
  if (z.count(x) || z.count(y)) throw Error(ErrorCode::UnknownNode, "endpoints must not be in the adjustment set");
  const auto desc = g.descendants(x);
  for (const auto& n : z) {
    if (desc.count(n)) return false;
  }
  for (const auto& p : backdoor_paths(g, x, y)) {
    if (!path_blocked(g, p, z)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Dialog graphs

namespace node {
inline const NodeId history = "H";
inline const NodeId image = "I";
inline const NodeId question = "Q";
inline const NodeId visual = "V";
inline const NodeId answer = "A";
inline const NodeId preference = "U";
}  // namespace node

/// Encoder-decoder dialog graph: attention sub-graph I->V, Q->V, H->Q and
/// decoder inputs H->A, Q->A, V->A.
inline CausalGraph build_baseline_graph() {
  using namespace node;
  return CausalGraph({history, image, question, visual, answer},
                     {{image, visual}, {question, visual}, {history, question},
                      {visual, answer}, {question, answer}, {history, answer}});
}

/// Removes the direct history-to-answer edge.
inline CausalGraph apply_p1(const CausalGraph& g) { return g.without_edge(node::history, node::answer); }

/// Adds the latent preference node with H->U, U->Q, U->A.
inline CausalGraph apply_p2(const CausalGraph& g) {
  using namespace node;
  g.require(history);
  g.require(question);
  g.require(answer);
  return g.with_node(preference)
      .with_edge(history, preference)
      .with_edge(preference, question)
      .with_edge(preference, answer);
}

inline CausalGraph build_proposed_graph() { return apply_p2(apply_p1(build_baseline_graph())); }

// ---------------------------------------------------------------------------
// Edge-list text format: one "A -> B" per line, "# node X" for isolated
// nodes, other '#' lines are comments.

inline void write_edge_list(std::ostream& os, const CausalGraph& g) {
  NodeSet connected;
  for (const auto& [from, to] : g.edges()) {
    connected.insert(from);
    connected.insert(to);
  }
  for (const auto& n : g.nodes()) {
    if (!connected.count(n)) os << "# node " << n << '\n';
  }
  for (const auto& [from, to] : g.edges()) os << from << " -> " << to << '\n';
}

inline std::string to_edge_list(const CausalGraph& g) {
  std::ostringstream os;
  write_edge_list(os, g);
  return os.str();
}

inline CausalGraph read_edge_list(std::istream& is) {
  NodeSet nodes;
  std::set<Edge> edges;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# node ";
      if (line.rfind(tag, 0) == 0) {
        auto name = trim(line.substr(tag.size()));
        if (name.empty()) throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": empty node name");
        nodes.insert(name);
      }
      continue;
    }
    const auto arrow = line.find("->");
    if (arrow == std::string::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected 'A -> B'");
    }
    auto from = trim(line.substr(0, arrow));
    auto to = trim(line.substr(arrow + 2));
    if (from.empty() || to.empty()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": empty endpoint");
    }
    nodes.insert(from);
    nodes.insert(to);
    edges.emplace(from, to);
  }
  return CausalGraph(std::move(nodes), std::move(edges));
}

inline CausalGraph parse_edge_list(const std::string& text) {
  std::istringstream is(text);
  return read_edge_list(is);
}

}  // namespace causalrank
