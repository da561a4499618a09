#pragma once

// Per-question-type frequency tables of preferred answers, used as a
// candidate prior that stands in for the unobserved annotator preference.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalrank/errors.hpp"
#include "causalrank/world.hpp"

namespace causalrank {

struct QTypeTableSpec {
  int n_types = 8;
  /// An answer needs strictly more than this many occurrences to carry mass.
  int min_count = 5;
  double smoothing = 1.0;
  /// Observed relevance at or above this marks an answer as preferred.
  double relevance_threshold = 1.0;
};

class QTypeTable {
 public:
  QTypeTable() = default;
  explicit QTypeTable(const QTypeTableSpec& spec) : spec_(spec), counts_(static_cast<std::size_t>(spec.n_types)) {
    if (spec.n_types < 1) throw Error(ErrorCode::ConfigError, "n_types must be >= 1");
    if (spec.min_count < 0) throw Error(ErrorCode::ConfigError, "min_count must be >= 0");
    if (!(spec.smoothing >= 0.0)) throw Error(ErrorCode::ConfigError, "smoothing must be >= 0");
  }

  const QTypeTableSpec& spec() const noexcept { return spec_; }
  int n_types() const noexcept { return spec_.n_types; }

  void add(int qtype, int answer_id, long n = 1) {
    check_type(qtype);
    if (n < 0) throw Error(ErrorCode::ConfigError, "counts are nonnegative");
    counts_[static_cast<std::size_t>(qtype)][answer_id] += n;
  }

  long count(int qtype, int answer_id) const {
    check_type(qtype);
    const auto& row = counts_[static_cast<std::size_t>(qtype)];
    auto it = row.find(answer_id);
    return it == row.end() ? 0 : it->second;
  }

  const std::map<int, long>& counts(int qtype) const {
    check_type(qtype);
    return counts_[static_cast<std::size_t>(qtype)];
  }

  /// Count after the min_count threshold, before smoothing.
  double mass(int qtype, int answer_id) const {
    const long c = count(qtype, answer_id);
    return c > spec_.min_count ? static_cast<double>(c) : 0.0;
  }

  /// Smoothed weights over the given candidate answer ids, summing to 1.
  std::vector<double> prior(int qtype, const std::vector<int>& answer_ids) const {
    check_type(qtype);
    std::vector<double> w(answer_ids.size());
    double z = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) z += (w[c] = mass(qtype, answer_ids[c]) + spec_.smoothing);
    if (!(z > 0.0)) {
      std::fill(w.begin(), w.end(), w.empty() ? 0.0 : 1.0 / static_cast<double>(w.size()));
      return w;
    }
    for (auto& v : w) v /= z;
    return w;
  }

  std::vector<double> prior(int qtype, const std::vector<Candidate>& cands) const {
    std::vector<int> ids;
    ids.reserve(cands.size());
    for (const auto& c : cands) ids.push_back(c.pool_id);
    return prior(qtype, ids);
  }

  bool operator==(const QTypeTable& o) const {
    return spec_.n_types == o.spec_.n_types && spec_.min_count == o.spec_.min_count &&
           spec_.smoothing == o.spec_.smoothing && spec_.relevance_threshold == o.spec_.relevance_threshold &&
           counts_ == o.counts_;
  }

 private:
  void check_type(int qtype) const {
    if (qtype < 0 || qtype >= spec_.n_types) {
      throw Error(ErrorCode::UnknownType, "question type " + std::to_string(qtype) + " outside [0, " +
                                              std::to_string(spec_.n_types) + ")");
    }
  }

  QTypeTableSpec spec_;
  std::vector<std::map<int, long>> counts_;
};

/// Counts, per question type, the answers whose observed relevance reaches the
/// threshold. Only sums counts, so the result ignores instance order.
inline QTypeTable fit_qtype_table(const QTypeTableSpec& spec, const Dataset& d, const std::vector<std::size_t>& which) {
  if (which.empty()) throw Error(ErrorCode::EmptyDataset, "no instances to fit a question-type table on");
  QTypeTable t(spec);
  for (auto n : which) {
    const auto& inst = d.instances.at(n);
    for (std::size_t c = 0; c < inst.size(); ++c) {
      if (inst.observed_relevance[c] >= spec.relevance_threshold) t.add(inst.qtype, inst.candidates[c].pool_id);
    }
  }
  return t;
}

inline QTypeTable fit_qtype_table(const QTypeTableSpec& spec, const Dataset& d) {
  return fit_qtype_table(spec, d, detail::all_indices(d));
}

/// Assigns question-type indices from the first `width` tokens of a tokenised
/// question. New prefixes get the next free index until `capacity - 1` types
/// exist; later unseen prefixes share the last index.
class PrefixTypeIndex {
 public:
  explicit PrefixTypeIndex(int capacity, int width = 2) : capacity_(capacity), width_(width) {
    if (capacity < 1 || width < 1) throw Error(ErrorCode::ConfigError, "capacity and width must be >= 1");
  }

  static std::string key(const std::vector<std::string>& tokens, int width = 2) {
    std::string k;
    for (int n = 0; n < width && n < static_cast<int>(tokens.size()); ++n) {
      if (n) k += ' ';
      std::string t = tokens[static_cast<std::size_t>(n)];
      std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      k += t;
    }
    return k;
  }

  int type_of(const std::vector<std::string>& tokens) {
    const auto k = key(tokens, width_);
    if (auto it = ids_.find(k); it != ids_.end()) return it->second;
    const int next = static_cast<int>(ids_.size());
    if (next < capacity_ - 1) return ids_[k] = next;
    return capacity_ - 1;
  }

  int lookup(const std::vector<std::string>& tokens) const {
    auto it = ids_.find(key(tokens, width_));
    return it == ids_.end() ? capacity_ - 1 : it->second;
  }

  const std::map<std::string, int>& types() const noexcept { return ids_; }

 private:
  int capacity_;
  int width_;
  std::map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const QTypeTable& t) {
  nlohmann::json j;
  j["format"] = "causalrank-qtype";
  j["n_types"] = t.n_types();
  j["min_count"] = t.spec().min_count;
  j["smoothing"] = t.spec().smoothing;
  j["relevance_threshold"] = t.spec().relevance_threshold;
  auto rows = nlohmann::json::array();
  for (int q = 0; q < t.n_types(); ++q) {
    auto row = nlohmann::json::array();
    for (const auto& [id, n] : t.counts(q)) row.push_back({id, n});
    rows.push_back(row);
  }
  j["counts"] = rows;
  return j;
}

inline QTypeTable qtype_table_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "causalrank-qtype") throw Error(ErrorCode::ParseError, "not a question-type table");
    QTypeTableSpec spec;
    spec.n_types = j.at("n_types").get<int>();
    spec.min_count = j.at("min_count").get<int>();
    spec.smoothing = j.at("smoothing").get<double>();
    spec.relevance_threshold = j.value("relevance_threshold", spec.relevance_threshold);
    QTypeTable t(spec);
    const auto& rows = j.at("counts");
    if (rows.size() != static_cast<std::size_t>(spec.n_types)) throw Error(ErrorCode::ParseError, "count rows");
    for (int q = 0; q < spec.n_types; ++q) {
      for (const auto& e : rows.at(static_cast<std::size_t>(q))) t.add(q, e.at(0).get<int>(), e.at(1).get<long>());
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline void save_qtype_table(const std::string& path, const QTypeTable& t) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  os << to_json(t).dump(2) << '\n';
}

inline QTypeTable load_qtype_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  try {
    return qtype_table_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace causalrank
