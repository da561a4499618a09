// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "causalrank/graph.hpp"
#include "causalrank/harness.hpp"
#include "causalrank/scm.hpp"
#include "ndcg_oracle.hpp"
#include "test_util.hpp"

using namespace causalrank;

namespace {

int failures = 0;

void report(const char* id, bool ok, const std::string& what) {
  std::printf("[%s] %s %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::vector<std::uint64_t> seeds_1_to(int n) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
  std::iota(s.begin(), s.end(), 1);
  return s;
}

constexpr int kSeeds = 20;

RunConfig calibrated(Variant v, std::optional<LossKind> ft = std::nullopt) {
  RunConfig c;
  c.world.n_users = 8;
  c.world.bias_strength = 0.7;
  c.n_instances = 2500;
  c.optimizer = Optimizer::Adam;
  c.lr = 0.01;
  c.lr_decay_epochs = {5, 7, 9};
  c.lr_decay_rate = 0.4;
  c.epochs = 10;
  c.finetune_epochs = 10;
  c.finetune_lr_scale = 0.3;
  c.variant = v;
  c.loss_finetune = ft;
  c.track_curves = false;
  return c;
}

/// Runs every config on the same per-seed dataset (configs must share a world).
std::vector<std::vector<SeedResult>> run_shared(const std::vector<RunConfig>& cfgs, int n_seeds) {
  std::vector<std::vector<SeedResult>> out(cfgs.size());
  for (auto seed : seeds_1_to(n_seeds)) {
    const auto d = dataset_for(cfgs.front(), seed);
    for (std::size_t k = 0; k < cfgs.size(); ++k) out[k].push_back(run_seed(cfgs[k], d, seed));
  }
  return out;
}

std::vector<double> metric(const std::vector<SeedResult>& rs, double (*get)(const SeedResult&)) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back(get(r));
  return v;
}

double ndcg_of(const SeedResult& r) { return r.eval.ndcg; }

// 1 -------------------------------------------------------------------------
void backdoor_equals_surgery() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  const auto g = build_proposed_graph();
  std::uniform_int_distribution<int> card(2, 3);
  double worst = 0.0;
  int models = 0;
  for (; models < 250; ++models) {
    std::map<NodeId, int> cards;
    for (const auto& n : g.nodes()) cards[n] = card(rng);
    const auto m = random_scm(g, cards, rng);
    for (int q = 0; q < cards["Q"]; ++q)
      for (int h = 0; h < cards["H"]; ++h)
        for (int i = 0; i < cards["I"]; ++i) {
          const auto adjusted = backdoor_adjust(m, "A", {{"Q", q}}, {{"H", h}, {"I", i}}, "U");
          const auto surgery = interventional_prob(m, "A", {{"Q", q}, {"H", h}, {"I", i}}, {});
          for (std::size_t a = 0; a < adjusted.size(); ++a) worst = std::max(worst, std::abs(adjusted[a] - surgery[a]));
        }
  }
  const double secs = seconds_since(t0);
  report("1", worst < 1e-9 && secs < 10.0,
         fmt("backdoor adjustment vs graph surgery: %d models, max error %.3g, %.2f s", models, worst, secs));
}

// 2 -------------------------------------------------------------------------
void fork_has_no_effect() {
  const auto t0 = std::chrono::steady_clock::now();
  const CausalGraph g({"U", "Q", "A"}, {{"U", "Q"}, {"U", "A"}});
  const DiscreteScm m(g, {{"U", 2}, {"Q", 2}, {"A", 2}},
                      {{"U", {{0.3, 0.7}}}, {"Q", {{0.9, 0.1}, {0.2, 0.8}}}, {"A", {{0.75, 0.25}, {0.1, 0.9}}}});
  const auto marginal = conditional(m, "A", {});
  double do_diff = 0.0, tv = 0.0;
  for (int q = 0; q < 2; ++q) {
    const auto done = interventional_prob(m, "A", {{"Q", q}}, {});
    const auto seen = conditional(m, "A", {{"Q", q}});
    double t = 0.0;
    for (std::size_t a = 0; a < 2; ++a) {
      do_diff = std::max(do_diff, std::abs(done[a] - marginal[a]));
      t += 0.5 * std::abs(seen[a] - marginal[a]);
    }
    tv = std::max(tv, t);
  }
  const double secs = seconds_since(t0);
  report("2", do_diff < 1e-12 && tv > 0.05 && secs < 1.0,
         fmt("confounded fork: max |P(A|do q) - P(A)| %.3g, max TV(P(A|q), P(A)) %.4f, %.3f s", do_diff, tv, secs));
}

// 3 -------------------------------------------------------------------------
void dseparation_is_sound() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> card(2, 3);
  double worst = 0.0;
  long triples = 0;
  const int n = 8, dags = 100;
  for (int k = 0; k < dags; ++k) {
    const auto g = testutil::random_dag(rng, n, 14);
    std::map<NodeId, int> cards;
    for (const auto& v : g.nodes()) cards[v] = card(rng);
    const auto m = random_scm(g, cards, rng);
    const auto table = joint_table(m);
    const auto& names = m.names();
    for (std::size_t x = 0; x < names.size(); ++x)
      for (std::size_t y = x + 1; y < names.size(); ++y) {
        std::vector<std::size_t> rest;
        for (std::size_t r = 0; r < names.size(); ++r)
          if (r != x && r != y) rest.push_back(r);
        for (unsigned mask = 0; mask < (1u << rest.size()); ++mask) {
          NodeSet z;
          std::vector<std::size_t> zi;
          for (std::size_t b = 0; b < rest.size(); ++b)
            if (mask & (1u << b)) {
              z.insert(names[rest[b]]);
              zi.push_back(rest[b]);
            }
          if (!d_separated(g, names[x], names[y], z)) continue;
          ++triples;
          worst = std::max(worst, conditional_mutual_information(table, x, y, zi));
        }
      }
  }
  const double secs = seconds_since(t0);
  report("3", worst < 1e-9 && triples > 0 && secs < 60.0,
         fmt("d-separation soundness: %d DAGs, %ld separated triples, max CMI %.3g nats, %.2f s", dags, triples, worst,
             secs));
}

// 4 -------------------------------------------------------------------------
void gradients_match_finite_differences() {
  const auto t0 = std::chrono::steady_clock::now();
  WorldSpec s;
  s.n_candidates = 20;
  s.pool_size = 60;
  s.feat_dim = 8;
  s.bias_strength = 0.5;
  s.seed = 4;
  const auto d = generate(s, 50);
  double worst = 0.0;
  int checks = 0;
  for (auto v : {Variant::Baseline, Variant::P1, Variant::P1Dict, Variant::BaselineDict})
    for (auto kind : {LossKind::CE, LossKind::R0, LossKind::R1, LossKind::R2, LossKind::R3})
      for (std::size_t n = 0; n < d.instances.size(); ++n) {
        const auto& inst = d.instances[n];
        auto p = init_params(v, 8, 8, 1000 + n, 6, 5, 0.3);
        std::mt19937_64 rng(n);
        std::normal_distribution<double> nd(0.0, 0.3);
        for (Eigen::Index k = 0; k < p.w_g.size(); ++k) p.w_g.data()[k] = nd(rng);
        const Targets t{inst.gt_index, inst.observed_relevance};
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
          numeric(k) = (up - loss_at(probe, inst, kind, t)) / (2 * h);
        }
        const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
        worst = std::max(worst, (analytic - numeric).norm() / scale);
        ++checks;
      }
  const double secs = seconds_since(t0);
  report("4", worst < 1e-5 && secs < 30.0,
         fmt("finite-difference gradients: 4 variants x 5 losses x 50 instances (%d checks), max relative error %.3g, "
             "%.2f s",
             checks, worst, secs));
}

// 5 -------------------------------------------------------------------------
void ndcg_matches_brute_force() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 4);
  double worst = 0.0;
  bool ideal_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> rel(10);
    for (auto& r : rel) r = level(rng) / 4.0;
    rel[static_cast<std::size_t>(trial % 10)] = 0.25 * (1 + level(rng) % 4);
    std::vector<int> order(10);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    worst = std::max(worst, std::abs(ndcg({order, rel}) - testutil::brute_force_ndcg(order, rel)));
    ideal_exact = ideal_exact && ndcg({rank_by_score(rel), rel}) == 1.0;
  }
  report("5", worst < 1e-12 && ideal_exact,
         fmt("NDCG vs brute-force ideal DCG: 1000 cases, max error %.3g, ideal ranking exactly 1: %s, %.2f s", worst,
             ideal_exact ? "yes" : "no", seconds_since(t0)));
}

// 6 -------------------------------------------------------------------------
void table_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<RunConfig> cfgs = {calibrated(Variant::Baseline),       calibrated(Variant::P1),
                                       calibrated(Variant::P1, LossKind::R0), calibrated(Variant::P1, LossKind::R1),
                                       calibrated(Variant::P1, LossKind::R2), calibrated(Variant::P1, LossKind::R3)};
  const char* names[] = {"baseline", "p1", "p1+r0", "p1+r1", "p1+r2", "p1+r3"};
  const auto res = run_shared(cfgs, kSeeds);
  std::vector<std::vector<double>> nd;
  for (const auto& r : res) nd.push_back(metric(r, ndcg_of));
  std::string means;
  for (std::size_t k = 0; k < nd.size(); ++k) means += fmt("%s%s %.4f", k ? ", " : "", names[k], mean(nd[k]));

  // (better, worse) pairs
  const std::pair<int, int> claims[] = {{1, 0}, {5, 1}, {3, 2}, {4, 2}, {5, 2}};
  bool ok = true;
  std::string tests;
  for (auto [b, w] : claims) {
    const auto st = sign_test(nd[static_cast<std::size_t>(b)], nd[static_cast<std::size_t>(w)]);
    const bool pass = mean(nd[static_cast<std::size_t>(b)]) > mean(nd[static_cast<std::size_t>(w)]) && st.p_value < 0.05;
    ok = ok && pass;
    tests += fmt("; %s > %s: %d/%d wins p=%.3g%s", names[b], names[w], st.wins, st.wins + st.losses + st.ties,
                 st.p_value, pass ? "" : " (not met)");
  }
  const double secs = seconds_since(t0);
  report("6", ok && secs < 600.0,
         fmt("directional ordering, b=0.7, 2000 train instances, %d seeds: %s%s; %.1f s", kSeeds, means.c_str(),
             tests.c_str(), secs));
}

// 7 -------------------------------------------------------------------------
RunConfig probe_config(Variant v, double length, double shortcut, double word) {
  auto c = calibrated(v);
  c.world.length_bias_strength = length;
  c.world.shortcut_strength = shortcut;
  c.world.word_bias_strength = word;
  return c;
}

void bias_probes() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto len = run_shared({probe_config(Variant::Baseline, 1, 0, 0), probe_config(Variant::P1, 1, 0, 0)}, kSeeds);
  const auto sc = run_shared({probe_config(Variant::Baseline, 0, 1, 0), probe_config(Variant::P1, 0, 1, 0)}, kSeeds);
  const double len_base = mean(metric(len[0], [](const SeedResult& r) { return r.bias.length_correlation; }));
  const double len_p1 = mean(metric(len[1], [](const SeedResult& r) { return r.bias.length_correlation; }));
  const double yes_base = mean(metric(sc[0], [](const SeedResult& r) { return r.bias.yes_mean_rank; }));
  const double yes_p1 = mean(metric(sc[1], [](const SeedResult& r) { return r.bias.yes_mean_rank; }));
  report("7", len_p1 < len_base && yes_p1 > yes_base,
         fmt("history-bias probes over %d seeds: length correlation baseline %.4f vs p1 %.4f; shortcut answer mean "
             "rank baseline %.2f vs p1 %.2f; %.1f s",
             kSeeds, len_base, len_p1, yes_base, yes_p1, seconds_since(t0)));

  const auto t1 = std::chrono::steady_clock::now();
  const auto wm = run_shared({probe_config(Variant::Baseline, 0, 0, 1), probe_config(Variant::P1, 0, 0, 1)}, kSeeds);
  const auto wb = metric(wm[0], [](const SeedResult& r) { return r.bias.wordmatch; });
  const auto wp = metric(wm[1], [](const SeedResult& r) { return r.bias.wordmatch; });
  const auto st = sign_test(wb, wp);
  report("7w", mean(wb) > mean(wp),
         fmt("word-match probe over %d seeds: baseline %.1f vs p1 %.1f (baseline larger on %d/%d seeds); %.1f s",
             kSeeds, mean(wb), mean(wp), st.wins, kSeeds, seconds_since(t1)));
}

// 8 -------------------------------------------------------------------------
void qtype_prior() {
  const auto t0 = std::chrono::steady_clock::now();
  auto off = calibrated(Variant::P1);
  off.world.qtype_strength = 1.0;
  auto inf = off;
  inf.qt_mixing = QtMixing::Inference;
  std::vector<double> a, b, oracle;
  for (auto seed : seeds_1_to(kSeeds)) {
    const auto d = dataset_for(off, seed);
    a.push_back(run_seed(off, d, seed).eval.ndcg);
    b.push_back(run_seed(inf, d, seed).eval.ndcg);
    oracle.push_back(evaluate_oracle(d, d.indices(Split::Val)).ndcg);
  }
  const double delta = mean(b) - mean(a);
  report("8", delta > 0.0 && mean(b) < mean(oracle),
         fmt("question-type prior over %d seeds: no prior %.4f, with prior %.4f (delta %+.4f), oracle adjustment "
             "%.4f (gap %.4f); %.1f s",
             kSeeds, mean(a), mean(b), delta, mean(oracle), mean(oracle) - mean(b), seconds_since(t0)));
}

// 9 -------------------------------------------------------------------------
std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    files[std::filesystem::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

void reproducibility() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = std::filesystem::temp_directory_path() / ("causalrank_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(base);
  auto small = [](const std::string& name, Variant v) {
    RunConfig c;
    c.name = name;
    c.world.n_candidates = 30;
    c.world.pool_size = 90;
    c.world.qtype_strength = 0.5;
    c.world.length_bias_strength = 0.5;
    c.n_instances = 300;
    c.optimizer = Optimizer::Adam;
    c.lr = 0.01;
    c.epochs = 3;
    c.finetune_epochs = 2;
    c.variant = v;
    c.seeds = {11, 12};
    return c;
  };
  std::vector<RunConfig> cfgs = {small("baseline", Variant::Baseline), small("p1_r3", Variant::P1),
                                 small("p1_dict_qt", Variant::P1Dict)};
  cfgs[1].loss_finetune = LossKind::R3;
  cfgs[2].qt_mixing = QtMixing::Inference;
  cfgs[2].loss_finetune = LossKind::R1;

  // identical configs, same output directory; snapshot between the two runs
  auto run_once = [&](int jobs) {
    std::filesystem::remove_all(base);
    auto c = cfgs;
    for (auto& x : c) x.out_dir = base.string();
    const auto reports = run_matrix(c, jobs);
    {
      std::ofstream os(base / "table.csv", std::ios::binary);
      write_table_csv(os, reports);
    }
    return read_tree(base);
  };
  const auto a = run_once(1);
  const auto b = run_once(3);
  long csvs = 0;
  for (const auto& [name, _] : a) csvs += name.size() > 4 && name.substr(name.size() - 4) == ".csv";
  const bool same = !a.empty() && a == b;
  std::filesystem::remove_all(base);
  report("9", same && csvs > 0,
         fmt("reproducibility: %zu output files (%ld CSV) from two runs (1 and 3 threads) byte-identical: %s; %.1f s",
             a.size(), csvs, same ? "yes" : "no", seconds_since(t0)));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> criteria = {
      {"1", backdoor_equals_surgery},    {"2", fork_has_no_effect}, {"3", dseparation_is_sound},
      {"4", gradients_match_finite_differences}, {"5", ndcg_matches_brute_force}, {"6", table_ordering},
      {"7", bias_probes},                {"8", qtype_prior},        {"9", reproducibility}};
  for (const auto& [id, f] : criteria) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d failing line(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
