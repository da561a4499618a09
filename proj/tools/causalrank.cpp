// Command-line front end: graphs, discrete models, data generation, training,
// scoring, evaluation, bias probes, experiment matrices and question-type
// priors.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "causalrank/graph.hpp"
#include "causalrank/harness.hpp"
#include "causalrank/qtype.hpp"
#include "causalrank/scm.hpp"
#include "causalrank/scorer.hpp"
#include "causalrank/world.hpp"

namespace cr = causalrank;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

cr::CausalGraph load_graph(const std::string& which, const std::string& path) {
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw cr::Error(cr::ErrorCode::IoError, "cannot read " + path);
    return cr::read_edge_list(is);
  }
  if (which == "baseline") return cr::build_baseline_graph();
  if (which == "p1") return cr::apply_p1(cr::build_baseline_graph());
  if (which == "proposed") return cr::build_proposed_graph();
  throw cr::Error(cr::ErrorCode::ConfigError, "unknown graph '" + which + "' (baseline|p1|proposed)");
}

std::vector<std::size_t> split_indices(const cr::Dataset& d, const std::string& split) {
  if (split == "train") return d.indices(cr::Split::Train);
  if (split == "val") return d.indices(cr::Split::Val);
  if (split == "all") return cr::detail::all_indices(d);
  throw cr::Error(cr::ErrorCode::ConfigError, "split must be train|val|all");
}

std::vector<cr::Ranking> read_rankings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw cr::Error(cr::ErrorCode::IoError, "cannot read " + path);
  return cr::load_rankings(is);
}

template <class F>
void write_to(const std::string& path, F&& f) {
  if (path.empty() || path == "-") {
    f(std::cout);
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw cr::Error(cr::ErrorCode::IoError, "cannot write " + path);
  f(os);
}

void print_distribution(const cr::Distribution& p) {
  for (std::size_t k = 0; k < p.size(); ++k) std::printf("%zu %.12g\n", k, p[k]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal answer-ranking toolkit"};
  app.set_version_flag("--version", std::string(cr::kVersion));
  app.require_subcommand(1);

  // graph ------------------------------------------------------------------
  auto* graph = app.add_subcommand("graph", "Inspect causal graphs");
  graph->require_subcommand(1);
  std::string g_which = "proposed", g_in, g_out;
  auto add_graph_source = [&](CLI::App* c) {
    c->add_option("--which", g_which, "baseline|p1|proposed")->capture_default_str();
    c->add_option("--in", g_in, "edge-list file instead of a built-in graph");
  };
  auto* g_show = graph->add_subcommand("show", "Print a graph as an edge list");
  add_graph_source(g_show);
  g_show->add_option("--out", g_out, "write here instead of stdout");
  std::string g_x, g_y, g_given;
  auto* g_dsep = graph->add_subcommand("dsep", "Test d-separation of X and Y given Z");
  add_graph_source(g_dsep);
  g_dsep->add_option("x", g_x)->required();
  g_dsep->add_option("y", g_y)->required();
  g_dsep->add_option("--given", g_given, "comma-separated conditioning set");
  auto* g_bd = graph->add_subcommand("backdoor", "List backdoor paths from X to Y, optionally test a set");
  add_graph_source(g_bd);
  g_bd->add_option("x", g_x)->required();
  g_bd->add_option("y", g_y)->required();
  g_bd->add_option("--given", g_given, "adjustment set to check against the backdoor criterion");

  // scm --------------------------------------------------------------------
  auto* scm = app.add_subcommand("scm", "Evaluate queries on a discrete causal model");
  std::string s_model, s_example;
  std::vector<std::string> s_queries;
  std::uint64_t s_seed = 1;
  int s_card = 2;
  scm->add_option("--model", s_model, "model JSON file");
  scm->add_option("--query,-q", s_queries, "e.g. 'P(A | do Q=1, H=0, I=1)' or 'P(A | do Q=1; adjust U)'");
  scm->add_option("--write-example", s_example, "write a random model over the proposed graph to this file");
  scm->add_option("--seed", s_seed, "seed for --write-example")->capture_default_str();
  scm->add_option("--cardinality", s_card, "domain size for --write-example")->capture_default_str();

  // gen --------------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  cr::WorldSpec w;
  int gen_n = 1000;
  double gen_val = 0.2;
  std::string gen_out;
  gen->add_option("--users", w.n_users)->capture_default_str();
  gen->add_option("--qtypes", w.n_qtypes)->capture_default_str();
  gen->add_option("--candidates", w.n_candidates)->capture_default_str();
  gen->add_option("--dim", w.feat_dim)->capture_default_str();
  gen->add_option("--bias", w.bias_strength)->capture_default_str();
  gen->add_option("--length-bias", w.length_bias_strength)->capture_default_str();
  gen->add_option("--word-bias", w.word_bias_strength)->capture_default_str();
  gen->add_option("--shortcut", w.shortcut_strength)->capture_default_str();
  gen->add_option("--qtype-strength", w.qtype_strength)->capture_default_str();
  gen->add_option("--pool", w.pool_size)->capture_default_str();
  gen->add_option("--n", gen_n)->capture_default_str();
  gen->add_option("--val-fraction", gen_val)->capture_default_str();
  gen->add_option("--seed", w.seed)->capture_default_str();
  gen->add_option("--out", gen_out, "dataset file (JSON lines)")->required();

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one scorer");
  std::string t_config, t_data, t_out, t_curves;
  std::uint64_t t_seed = 0;
  train->add_option("--config", t_config, "run config JSON (first run if several)")->required();
  train->add_option("--data", t_data, "dataset file; generated from the config if omitted");
  train->add_option("--seed", t_seed, "training seed (default: first config seed)");
  train->add_option("--out", t_out, "checkpoint file")->required();
  train->add_option("--curves", t_curves, "write the loss/NDCG curve CSV here");

  // score ------------------------------------------------------------------
  auto* score = app.add_subcommand("score", "Rank a dataset with a checkpoint");
  std::string sc_ckpt, sc_data, sc_out, sc_table, sc_split = "val";
  score->add_option("--checkpoint", sc_ckpt)->required();
  score->add_option("--data", sc_data)->required();
  score->add_option("--qtype", sc_table, "mix this question-type prior into the scores");
  score->add_option("--split", sc_split, "train|val|all")->capture_default_str();
  score->add_option("--out", sc_out, "rankings file (stdout if omitted)");

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "NDCG/MRR of a rankings file");
  std::string e_rank, e_data, e_out, e_split = "val";
  eval->add_option("--rankings", e_rank)->required();
  eval->add_option("--data", e_data)->required();
  eval->add_option("--split", e_split, "train|val|all")->capture_default_str();
  eval->add_option("--out", e_out, "CSV file (stdout if omitted)");

  // probe ------------------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "History-bias probes of a rankings file");
  std::string p_rank, p_data, p_out, p_split = "val", p_curve;
  probe->add_option("--rankings", p_rank)->required();
  probe->add_option("--data", p_data)->required();
  probe->add_option("--split", p_split, "train|val|all")->capture_default_str();
  probe->add_option("--out", p_out, "CSV file (stdout if omitted)");
  probe->add_option("--length-curve", p_curve, "write the history/top-answer length curve here");

  // matrix -----------------------------------------------------------------
  auto* matrix = app.add_subcommand("matrix", "Run every config in a file");
  std::string m_config, m_out;
  int m_jobs = 1;
  matrix->add_option("--config", m_config)->required();
  matrix->add_option("--out", m_out, "output directory (overrides out_dir)")->required();
  matrix->add_option("--jobs,-j", m_jobs)->capture_default_str();

  // qtype ------------------------------------------------------------------
  auto* qtype = app.add_subcommand("qtype", "Question-type priors");
  qtype->require_subcommand(1);
  auto* q_fit = qtype->add_subcommand("fit", "Fit a table on the training split");
  std::string q_data, q_out, q_table, q_ckpt, q_split = "train";
  cr::QTypeTableSpec q_spec;
  q_fit->add_option("--data", q_data)->required();
  q_fit->add_option("--split", q_split, "train|val|all")->capture_default_str();
  q_fit->add_option("--min-count", q_spec.min_count)->capture_default_str();
  q_fit->add_option("--smoothing", q_spec.smoothing)->capture_default_str();
  q_fit->add_option("--threshold", q_spec.relevance_threshold)->capture_default_str();
  q_fit->add_option("--out", q_out)->required();
  auto* q_apply = qtype->add_subcommand("apply", "Rank by the prior, or by a checkpoint mixed with it");
  q_apply->add_option("--table", q_table)->required();
  q_apply->add_option("--data", q_data)->required();
  q_apply->add_option("--checkpoint", q_ckpt);
  q_apply->add_option("--split", q_split, "train|val|all");
  q_apply->add_option("--out", q_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*graph) {
      const auto g = load_graph(g_which, g_in);
      if (*g_show) {
        write_to(g_out, [&](std::ostream& os) { cr::write_edge_list(os, g); });
      } else if (*g_dsep) {
        const auto z = split_list(g_given);
        std::cout << (cr::d_separated(g, g_x, g_y, cr::NodeSet(z.begin(), z.end())) ? "separated" : "connected")
                  << '\n';
      } else if (*g_bd) {
        for (const auto& p : cr::backdoor_paths(g, g_x, g_y)) std::cout << cr::to_string(p) << '\n';
        if (!g_given.empty()) {
          const auto z = split_list(g_given);
          std::cout << "criterion "
                    << (cr::satisfies_backdoor(g, g_x, g_y, cr::NodeSet(z.begin(), z.end())) ? "satisfied" : "violated")
                    << '\n';
        }
      }
    } else if (*scm) {
      if (!s_example.empty()) {
        std::mt19937_64 rng(s_seed);
        const auto g = cr::build_proposed_graph();
        std::map<cr::NodeId, int> cards;
        for (const auto& n : g.nodes()) cards[n] = s_card;
        const auto m = cr::random_scm(g, cards, rng, 0.05, {"H", "I", "Q", "V", "A"});
        write_to(s_example, [&](std::ostream& os) { os << cr::to_json(m).dump(2) << '\n'; });
      }
      if (!s_queries.empty()) {
        if (s_model.empty()) throw cr::Error(cr::ErrorCode::ConfigError, "--query needs --model");
        std::ifstream is(s_model);
        if (!is) throw cr::Error(cr::ErrorCode::IoError, "cannot read " + s_model);
        const auto m = cr::scm_from_json(nlohmann::json::parse(is));
        for (const auto& text : s_queries) {
          std::vector<std::string> notes;
          const auto p = cr::evaluate_query(m, cr::parse_query(text), &notes);
          std::cout << text << '\n';
          for (const auto& n : notes) std::cerr << "note: " << n << '\n';
          print_distribution(p);
        }
      }
      if (s_example.empty() && s_queries.empty()) throw cr::Error(cr::ErrorCode::ConfigError, "nothing to do");
    } else if (*gen) {
      const auto d = cr::generate(w, gen_n, gen_val);
      cr::save_dataset(gen_out, d);
    } else if (*train) {
      auto cfg = cr::load_configs(t_config).front();
      const std::uint64_t seed = train->count("--seed") ? t_seed : cfg.seeds.front();
      const auto d = t_data.empty() ? cr::dataset_for(cfg, seed) : cr::load_dataset(t_data);
      std::optional<cr::QTypeTable> table;
      if (cfg.qt_mixing != cr::QtMixing::Off) table = cr::fit_table_for(cfg, d);
      const auto tr = cr::train(cfg, d, seed, table ? &*table : nullptr);
      cr::save_checkpoint(t_out, tr.params, seed);
      if (!t_curves.empty()) {
        cr::RunReport r;
        r.config = cfg;
        r.seeds.push_back({seed, {}, {}, tr.curve, {}});
        write_to(t_curves, [&](std::ostream& os) { cr::write_curves_csv(os, r); });
      }
      if (tr.skipped_instances > 0) std::cerr << "skipped " << tr.skipped_instances << " fine-tune rows without mass\n";
    } else if (*score) {
      const auto ck = cr::load_checkpoint(sc_ckpt);
      const auto d = cr::load_dataset(sc_data);
      std::optional<cr::QTypeTable> table;
      if (!sc_table.empty()) table = cr::load_qtype_table(sc_table);
      const auto r = cr::evaluate(ck.params, d, split_indices(d, sc_split), table ? &*table : nullptr);
      write_to(sc_out, [&](std::ostream& os) { cr::save_rankings(os, r.rankings); });
    } else if (*eval) {
      const auto d = cr::load_dataset(e_data);
      const auto which = split_indices(d, e_split);
      const auto ranked = read_rankings(e_rank);
      if (ranked.size() != which.size()) throw cr::Error(cr::ErrorCode::LengthMismatch, "one ranking per instance");
      std::size_t k = 0;
      const auto r = cr::evaluate_rankings(d, which, [&](const cr::DialogInstance&) { return ranked[k++]; });
      write_to(e_out, [&](std::ostream& os) {
        os << "instance,ndcg,mrr\n";
        for (std::size_t n = 0; n < which.size(); ++n) {
          os << which[n] << ',' << cr::detail::num(r.per_instance_ndcg[n]) << ','
             << cr::detail::num(r.per_instance_mrr[n]) << '\n';
        }
        os << "mean," << cr::detail::num(r.ndcg) << ',' << cr::detail::num(r.mrr) << '\n';
      });
    } else if (*probe) {
      const auto d = cr::load_dataset(p_data);
      const auto which = split_indices(d, p_split);
      const auto ranked = read_rankings(p_rank);
      const auto b = cr::bias_stats(ranked, d, which);
      write_to(p_out, [&](std::ostream& os) {
        os << "probe,value\n"
           << "length_correlation," << cr::detail::num(b.length_correlation) << '\n'
           << "wordmatch," << cr::detail::num(b.wordmatch) << '\n'
           << "wordmatch_uniform," << cr::detail::num(b.wordmatch_uniform) << '\n'
           << "yes_mean_rank," << cr::detail::num(b.yes_mean_rank) << '\n'
           << "yes_instances," << b.yes_instances << '\n';
      });
      if (!p_curve.empty()) {
        const auto lp = cr::bias_probe_length(ranked, d, which);
        write_to(p_curve, [&](std::ostream& os) {
          os << "# history_length mean_top_length count\n";
          for (const auto& pt : lp.curve) {
            if (pt.count > 0) os << pt.history_length << ' ' << cr::detail::num(pt.mean_top_length) << ' ' << pt.count << '\n';
          }
        });
      }
    } else if (*matrix) {
      auto cfgs = cr::load_configs(m_config);
      for (auto& c : cfgs) c.out_dir = m_out;
      const auto reports = cr::run_matrix(cfgs, m_jobs);
      std::filesystem::create_directories(m_out);
      write_to((std::filesystem::path(m_out) / "table.csv").string(),
               [&](std::ostream& os) { cr::write_table_csv(os, reports); });
      int failed = 0;
      for (const auto& r : reports) {
        if (!r.ok()) {
          ++failed;
          std::cerr << r.config.name << ": " << r.error << '\n';
        }
      }
      cr::write_table_csv(std::cout, reports);
      return failed ? 1 : 0;
    } else if (*qtype) {
      const auto d = cr::load_dataset(q_data);
      if (*q_fit) {
        q_spec.n_types = d.spec.n_qtypes;
        cr::save_qtype_table(q_out, cr::fit_qtype_table(q_spec, d, split_indices(d, q_split)));
      } else {
        const auto table = cr::load_qtype_table(q_table);
        const auto which = split_indices(d, q_apply->count("--split") ? q_split : "val");
        std::vector<cr::Ranking> out;
        if (q_ckpt.empty()) {
          for (auto n : which) {
            const auto& inst = d.instances[n];
            out.push_back(cr::rank_by_score(table.prior(inst.qtype, inst.candidates)));
          }
        } else {
          out = cr::evaluate(cr::load_checkpoint(q_ckpt).params, d, which, &table).rankings;
        }
        write_to(q_out, [&](std::ostream& os) { cr::save_rankings(os, out); });
      }
    }
  } catch (const cr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
