#pragma once

// Experiment driver: per-seed data generation, two-stage training, evaluation
// against causal relevance, bias probes and CSV reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalrank/errors.hpp"
#include "causalrank/losses.hpp"
#include "causalrank/metrics.hpp"
#include "causalrank/qtype.hpp"
#include "causalrank/scorer.hpp"
#include "causalrank/world.hpp"

namespace causalrank {

inline constexpr const char* kVersion = "0.3.0";

enum class Optimizer { Momentum, Adam };
enum class QtMixing { Off, Inference, TrainR2 };
enum class FinetuneTarget { Observed, Causal };

inline std::string_view to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "momentum"; }
inline std::string_view to_string(QtMixing m) {
  switch (m) {
    case QtMixing::Off: return "off";
    case QtMixing::Inference: return "inference";
    case QtMixing::TrainR2: return "train_r2";
  }
  return "?";
}
inline std::string_view to_string(FinetuneTarget t) { return t == FinetuneTarget::Causal ? "causal" : "observed"; }

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "momentum") return Optimizer::Momentum;
  if (s == "adam") return Optimizer::Adam;
  throw Error(ErrorCode::ConfigError, "unknown optimizer '" + std::string(s) + "'");
}
inline QtMixing parse_qt_mixing(std::string_view s) {
  if (s == "off") return QtMixing::Off;
  if (s == "inference" || s == "on") return QtMixing::Inference;
  if (s == "train_r2") return QtMixing::TrainR2;
  throw Error(ErrorCode::ConfigError, "unknown qt_mixing '" + std::string(s) + "'");
}
inline FinetuneTarget parse_finetune_target(std::string_view s) {
  if (s == "observed") return FinetuneTarget::Observed;
  if (s == "causal") return FinetuneTarget::Causal;
  throw Error(ErrorCode::ConfigError, "unknown finetune_target '" + std::string(s) + "'");
}

struct RunConfig {
  std::string name = "run";
  WorldSpec world;
  int n_instances = 2500;
  double val_fraction = 0.2;

  Variant variant = Variant::P1;
  LossKind loss_pretrain = LossKind::CE;
  std::optional<LossKind> loss_finetune;

  int epochs = 10;
  double lr = 0.05;
  std::vector<int> lr_decay_epochs = {5, 7, 9};
  double lr_decay_rate = 0.4;
  Optimizer optimizer = Optimizer::Momentum;
  double momentum = 0.9;
  int batch_size = 32;

  int finetune_epochs = 5;
  double finetune_lr_scale = 0.1;
  double finetune_fraction = 0.2;
  FinetuneTarget finetune_target = FinetuneTarget::Observed;

  int n_dict = 16;
  int attn_dim = 0;
  double init_scale = 0.01;
  double dict_init_scale = 0.1;

  std::vector<std::uint64_t> seeds = {1};
  QtMixing qt_mixing = QtMixing::Off;
  int qt_min_count = 5;
  double qt_smoothing = 1.0;
  /// Record validation NDCG after every epoch (curves.csv).
  bool track_curves = true;
  std::string out_dir;

  void validate() const {
    auto bad = [](const std::string& why) { return Error(ErrorCode::ConfigError, why); };
    world.validate();
    if (seeds.empty()) throw bad("seeds must not be empty");
    if (epochs < 1) throw bad("epochs must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw bad("lr must be finite and >= 0");
    if (!(lr_decay_rate > 0.0 && lr_decay_rate <= 1.0)) throw bad("lr_decay_rate must lie in (0,1]");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw bad("momentum must lie in [0,1)");
    if (batch_size < 1) throw bad("batch_size must be >= 1");
    if (n_instances < 2) throw bad("n_instances must be >= 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw bad("val_fraction must lie in (0,1)");
    if (static_cast<int>(std::floor(n_instances * val_fraction)) < 1) throw bad("validation split is empty");
    if (finetune_epochs < 0) throw bad("finetune_epochs must be >= 0");
    if (!(finetune_fraction > 0.0 && finetune_fraction <= 1.0)) throw bad("finetune_fraction must lie in (0,1]");
    if (!(finetune_lr_scale >= 0.0)) throw bad("finetune_lr_scale must be >= 0");
    if (n_dict < 1) throw bad("n_dict must be >= 1");
    if (loss_finetune == LossKind::CE) throw bad("fine-tuning needs a dense loss (r0|r1|r2|r3)");
    if (qt_mixing == QtMixing::TrainR2 && loss_finetune != LossKind::R2) {
      throw bad("qt_mixing=train_r2 requires loss_finetune=r2");
    }
  }

  /// Learning rate for 1-based epoch e of stage 1.
  double lr_at(int e) const {
    double r = lr;
    for (int d : lr_decay_epochs) {
      if (e >= d) r *= lr_decay_rate;
    }
    return r;
  }

  /// Long schedule: lr 4e-3 decayed by 0.4 at epochs 5, 7 and 9, 15 epochs.
  static RunConfig long_preset() {
    RunConfig c;
    c.name = "long";
    c.lr = 4e-3;
    c.lr_decay_epochs = {5, 7, 9};
    c.lr_decay_rate = 0.4;
    c.epochs = 15;
    c.optimizer = Optimizer::Adam;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"name", c.name},
       {"world", c.world},
       {"n_instances", c.n_instances},
       {"val_fraction", c.val_fraction},
       {"variant", to_string(c.variant)},
       {"loss_pretrain", to_string(c.loss_pretrain)},
       {"loss_finetune", c.loss_finetune ? nlohmann::json(to_string(*c.loss_finetune)) : nlohmann::json(nullptr)},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"lr_decay_epochs", c.lr_decay_epochs},
       {"lr_decay_rate", c.lr_decay_rate},
       {"optimizer", to_string(c.optimizer)},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"finetune_epochs", c.finetune_epochs},
       {"finetune_lr_scale", c.finetune_lr_scale},
       {"finetune_fraction", c.finetune_fraction},
       {"finetune_target", to_string(c.finetune_target)},
       {"n_dict", c.n_dict},
       {"attn_dim", c.attn_dim},
       {"init_scale", c.init_scale},
       {"dict_init_scale", c.dict_init_scale},
       {"seeds", c.seeds},
       {"qt_mixing", to_string(c.qt_mixing)},
       {"qt_min_count", c.qt_min_count},
       {"qt_smoothing", c.qt_smoothing},
       {"track_curves", c.track_curves},
       {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::set<std::string> known = {
      "name",          "world",           "n_instances",     "val_fraction",      "variant",
      "loss_pretrain", "loss_finetune",   "epochs",          "lr",                "lr_decay_epochs",
      "lr_decay_rate", "optimizer",       "momentum",        "batch_size",        "finetune_epochs",
      "finetune_lr_scale", "finetune_fraction", "finetune_target", "n_dict",      "attn_dim",
      "init_scale",    "dict_init_scale", "seeds",           "qt_mixing",         "qt_min_count",
      "qt_smoothing",  "track_curves",    "out_dir",         "preset"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error(ErrorCode::ConfigError, "unknown config key '" + k + "'");
  }
  RunConfig d = j.value("preset", std::string()) == "long" ? RunConfig::long_preset() : RunConfig{};
  try {
    c.name = j.value("name", d.name);
    c.world = j.contains("world") ? j.at("world").get<WorldSpec>() : d.world;
    c.n_instances = j.value("n_instances", d.n_instances);
    c.val_fraction = j.value("val_fraction", d.val_fraction);
    c.variant = j.contains("variant") ? parse_variant(j.at("variant").get<std::string>()) : d.variant;
    c.loss_pretrain =
        j.contains("loss_pretrain") ? parse_loss_kind(j.at("loss_pretrain").get<std::string>()) : d.loss_pretrain;
    c.loss_finetune = d.loss_finetune;
    if (j.contains("loss_finetune")) {
      const auto& lf = j.at("loss_finetune");
      if (lf.is_null() || lf.get<std::string>() == "none") {
        c.loss_finetune.reset();
      } else {
        c.loss_finetune = parse_loss_kind(lf.get<std::string>());
      }
    }
    c.epochs = j.value("epochs", d.epochs);
    c.lr = j.value("lr", d.lr);
    c.lr_decay_epochs = j.value("lr_decay_epochs", d.lr_decay_epochs);
    c.lr_decay_rate = j.value("lr_decay_rate", d.lr_decay_rate);
    c.optimizer = j.contains("optimizer") ? parse_optimizer(j.at("optimizer").get<std::string>()) : d.optimizer;
    c.momentum = j.value("momentum", d.momentum);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
    c.finetune_lr_scale = j.value("finetune_lr_scale", d.finetune_lr_scale);
    c.finetune_fraction = j.value("finetune_fraction", d.finetune_fraction);
    c.finetune_target = j.contains("finetune_target")
                            ? parse_finetune_target(j.at("finetune_target").get<std::string>())
                            : d.finetune_target;
    c.n_dict = j.value("n_dict", d.n_dict);
    c.attn_dim = j.value("attn_dim", d.attn_dim);
    c.init_scale = j.value("init_scale", d.init_scale);
    c.dict_init_scale = j.value("dict_init_scale", d.dict_init_scale);
    c.seeds = j.value("seeds", d.seeds);
    c.qt_mixing = j.contains("qt_mixing") ? parse_qt_mixing(j.at("qt_mixing").get<std::string>()) : d.qt_mixing;
    c.qt_min_count = j.value("qt_min_count", d.qt_min_count);
    c.qt_smoothing = j.value("qt_smoothing", d.qt_smoothing);
    c.track_curves = j.value("track_curves", d.track_curves);
    c.out_dir = j.value("out_dir", d.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

/// A single config, or {"base": {...}, "runs": [{...}, ...]} where each run
/// is merge-patched onto the base, or a plain array of configs.
inline std::vector<RunConfig> parse_configs(const nlohmann::json& j) {
  std::vector<RunConfig> out;
  if (j.is_array()) {
    for (const auto& c : j) out.push_back(c.get<RunConfig>());
  } else if (j.contains("runs")) {
    const auto base = j.value("base", nlohmann::json::object());
    for (const auto& r : j.at("runs")) {
      auto merged = base;
      merged.merge_patch(r);
      out.push_back(merged.get<RunConfig>());
    }
  } else {
    out.push_back(j.get<RunConfig>());
  }
  return out;
}

inline std::vector<RunConfig> load_configs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  try {
    return parse_configs(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double ndcg = 0.0;
  double mrr = 0.0;
  double mean_rank = 0.0;  // of the ground-truth answer
  std::vector<double> per_instance_ndcg;
  std::vector<double> per_instance_mrr;
  std::vector<Ranking> rankings;
  std::vector<std::size_t> which;
};

/// Scores every listed instance with `rank_fn` and evaluates NDCG against the
/// causal relevance, MRR and mean rank against the annotated answer.
inline EvalResult evaluate_rankings(const Dataset& d, const std::vector<std::size_t>& which,
                                    const std::function<Ranking(const DialogInstance&)>& rank_fn) {
  if (which.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to evaluate");
  EvalResult r;
  r.which = which;
  double rank_total = 0.0;
  for (auto n : which) {
    const auto& inst = d.instances.at(n);
    RankingResult rr{rank_fn(inst), inst.causal_relevance};
    const double nd = ndcg(rr);
    const double rr_gt = mrr(rr, inst.gt_index);
    r.per_instance_ndcg.push_back(nd);
    r.per_instance_mrr.push_back(rr_gt);
    rank_total += rank_of(rr.order, inst.gt_index);
    r.rankings.push_back(std::move(rr.order));
  }
  const double n = static_cast<double>(which.size());
  r.ndcg = std::accumulate(r.per_instance_ndcg.begin(), r.per_instance_ndcg.end(), 0.0) / n;
  r.mrr = std::accumulate(r.per_instance_mrr.begin(), r.per_instance_mrr.end(), 0.0) / n;
  r.mean_rank = rank_total / n;
  return r;
}

inline EvalResult evaluate(const ScorerParams& p, const Dataset& d, const std::vector<std::size_t>& which,
                           const QTypeTable* prior_table = nullptr) {
  return evaluate_rankings(d, which, [&](const DialogInstance& inst) {
    auto s = forward(p, inst);
    if (prior_table) s = mix_with_prior(s, prior_table->prior(inst.qtype, inst.candidates));
    return rank(s);
  });
}

/// Ranks by the generator's own backdoor-adjusted answer distribution.
inline EvalResult evaluate_oracle(const Dataset& d, const std::vector<std::size_t>& which) {
  return evaluate_rankings(d, which,
                           [&](const DialogInstance& inst) { return rank_by_score(oracle_interventional(d, inst)); });
}

// ---------------------------------------------------------------------------
// Bias probes

struct BiasStats {
  double length_correlation = 0.0;
  double wordmatch = 0.0;
  double wordmatch_uniform = 0.0;
  /// Mean rank of "yes" over instances whose history contains a "yes"; NaN if none.
  double yes_mean_rank = std::nan("");
  int yes_instances = 0;
};

inline BiasStats bias_stats(const std::vector<Ranking>& ranked, const Dataset& d,
                            const std::vector<std::size_t>& which) {
  BiasStats b;
  b.length_correlation = bias_probe_length(ranked, d, which).correlation;
  b.wordmatch = static_cast<double>(bias_probe_wordmatch(ranked, d, which));
  b.wordmatch_uniform = expected_wordmatch_uniform(d, which);
  double total = 0.0;
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& inst = d.instances[which[k]];
    if (!inst.history.yes_in_history) continue;
    for (std::size_t c = 0; c < inst.size(); ++c) {
      if (inst.candidates[c].pool_id == kYesAnswer) {
        total += rank_of(ranked[k], static_cast<int>(c));
        ++b.yes_instances;
      }
    }
  }
  if (b.yes_instances > 0) b.yes_mean_rank = total / b.yes_instances;
  return b;
}

struct BiasRow {
  std::string probe;
  double first = 0.0;
  double second = 0.0;
  double difference = 0.0;  // second - first
};

/// Probe-by-probe comparison of two models, e.g. baseline (first) vs P1.
inline std::vector<BiasRow> report_bias(const BiasStats& first, const BiasStats& second) {
  auto row = [](std::string name, double a, double b) {
    // identical NaN inputs compare as no difference
    const double diff = (std::isnan(a) && std::isnan(b)) ? 0.0 : b - a;
    return BiasRow{std::move(name), a, b, diff};
  };
  return {row("length_correlation", first.length_correlation, second.length_correlation),
          row("wordmatch", first.wordmatch, second.wordmatch),
          row("yes_mean_rank", first.yes_mean_rank, second.yes_mean_rank)};
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double loss = 0.0;
  double val_ndcg = std::nan("");
};

struct TrainResult {
  ScorerParams params;
  std::vector<EpochRecord> curve;
  int skipped_instances = 0;  // fine-tune rows without relevance mass
};

namespace detail {

class OptimizerState {
 public:
  OptimizerState(Optimizer kind, double momentum, Eigen::Index n)
      : kind_(kind), momentum_(momentum), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  /// Returns the parameter update to subtract.
  Eigen::VectorXd step(const Eigen::VectorXd& g, double lr) {
    if (kind_ == Optimizer::Momentum) {
      m_ = momentum_ * m_ + g;
      return lr * m_;
    }
    // Adam, beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected moments
    ++t_;
    m_ = 0.9 * m_ + 0.1 * g;
    v_ = 0.999 * v_ + 0.001 * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(0.9, t_);
    const double c2 = 1.0 - std::pow(0.999, t_);
    return lr * ((m_ / c1).array() / ((v_ / c2).array().sqrt() + 1e-8)).matrix();
  }

 private:
  Optimizer kind_;
  double momentum_;
  Eigen::VectorXd m_, v_;
  int t_ = 0;
};

inline std::vector<double> max_normalized(std::vector<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx > 0.0) {
    for (auto& x : v) x /= mx;
  }
  return v;
}

}  // namespace detail

/// One pass of minibatch training over `which`; returns the mean loss.
inline double train_epoch(ScorerParams& p, detail::OptimizerState& opt, const Dataset& d,
                          std::vector<std::size_t> which, LossKind kind,
                          const std::function<Targets(std::size_t)>& targets, double lr, int batch_size,
                          std::mt19937_64& rng) {
  std::shuffle(which.begin(), which.end(), rng);
  double total = 0.0;
  auto acc = p.zeros_like();
  for (std::size_t start = 0; start < which.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(which.size(), start + static_cast<std::size_t>(batch_size));
    const double w = 1.0 / static_cast<double>(end - start);
    acc.set_flat(Eigen::VectorXd::Zero(acc.size()));
    for (auto k = start; k < end; ++k) {
      total += accumulate_grad(p, d.instances[which[k]], kind, targets(which[k]), acc, w) * (end - start);
    }
    const auto g = acc.flat();
    if (!g.allFinite() || !std::isfinite(total)) {
      throw Error(ErrorCode::DivergenceDetected, "non-finite loss or gradient");
    }
    p.set_flat(p.flat() - opt.step(g, lr));
    if (!p.all_finite()) throw Error(ErrorCode::DivergenceDetected, "non-finite parameters");
  }
  return total / static_cast<double>(which.size());
}

/// Stage 1 on all training instances, then (if a fine-tune loss is set) stage
/// 2 on the first `finetune_fraction` of them against dense relevance.
inline TrainResult train(const RunConfig& cfg, const Dataset& d, std::uint64_t seed,
                         const QTypeTable* table = nullptr) {
  cfg.validate();
  const auto train_idx = d.indices(Split::Train);
  const auto val_idx = d.indices(Split::Val);
  if (train_idx.empty()) throw Error(ErrorCode::EmptyDataset, "no training instances");
  const auto dim = static_cast<Eigen::Index>(d.spec.feat_dim);

  TrainResult out;
  out.params = init_params(cfg.variant, dim, dim, seed, cfg.n_dict, cfg.attn_dim, cfg.init_scale);
  if (uses_dictionary(cfg.variant)) init_dictionary(out.params, d, train_idx, 1.0, cfg.dict_init_scale);

  std::mt19937_64 rng(seed ^ 0x2545F4914F6CDD1DULL);
  const QTypeTable* eval_table = cfg.qt_mixing == QtMixing::Inference ? table : nullptr;
  if (cfg.qt_mixing != QtMixing::Off && !table) throw Error(ErrorCode::ConfigError, "qt_mixing needs a fitted table");
  auto val_ndcg = [&]() {
    return cfg.track_curves && !val_idx.empty() ? evaluate(out.params, d, val_idx, eval_table).ndcg : std::nan("");
  };

  {
    detail::OptimizerState opt(cfg.optimizer, cfg.momentum, out.params.size());
    auto targets = [&](std::size_t n) {
      const auto& inst = d.instances[n];
      return Targets{inst.gt_index, inst.observed_relevance};
    };
    for (int e = 1; e <= cfg.epochs; ++e) {
      const double loss =
          train_epoch(out.params, opt, d, train_idx, cfg.loss_pretrain, targets, cfg.lr_at(e), cfg.batch_size, rng);
      out.curve.push_back({1, e, loss, val_ndcg()});
    }
  }

  if (cfg.loss_finetune && cfg.finetune_epochs > 0) {
    const auto n_ft = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.finetune_fraction * static_cast<double>(train_idx.size()))));
    std::vector<std::size_t> ft;
    std::map<std::size_t, std::vector<double>> rel;
    for (std::size_t k = 0; k < n_ft; ++k) {
      const auto n = train_idx[k];
      const auto& inst = d.instances[n];
      std::vector<double> r;
      if (cfg.qt_mixing == QtMixing::TrainR2) {
        r = detail::max_normalized(table->prior(inst.qtype, inst.candidates));
      } else {
        r = cfg.finetune_target == FinetuneTarget::Causal ? inst.causal_relevance : inst.observed_relevance;
      }
      if (!(std::accumulate(r.begin(), r.end(), 0.0) > 0.0)) {
        ++out.skipped_instances;
        continue;
      }
      rel.emplace(n, std::move(r));
      ft.push_back(n);
    }
    if (ft.empty()) throw Error(ErrorCode::EmptyDataset, "no fine-tune instance has relevance mass");
    detail::OptimizerState opt(cfg.optimizer, cfg.momentum, out.params.size());
    auto targets = [&](std::size_t n) { return Targets{d.instances[n].gt_index, rel.at(n)}; };
    const double lr = cfg.lr * cfg.finetune_lr_scale;
    for (int e = 1; e <= cfg.finetune_epochs; ++e) {
      const double loss = train_epoch(out.params, opt, d, ft, *cfg.loss_finetune, targets, lr, cfg.batch_size, rng);
      out.curve.push_back({2, e, loss, val_ndcg()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs and reports

struct SeedResult {
  std::uint64_t seed = 0;
  EvalResult eval;
  BiasStats bias;
  std::vector<EpochRecord> curve;
  ScorerParams params;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
};

struct RunReport {
  RunConfig config;
  std::vector<SeedResult> seeds;
  std::map<std::string, Aggregate> aggregate;
  std::string version = kVersion;
  std::string error;  // set when the run failed

  bool ok() const { return error.empty(); }

  std::vector<double> metric(const std::string& name) const;
};

namespace detail {

inline std::map<std::string, double> seed_metrics(const SeedResult& s) {
  return {{"ndcg", s.eval.ndcg},
          {"mrr", s.eval.mrr},
          {"mean_rank", s.eval.mean_rank},
          {"length_correlation", s.bias.length_correlation},
          {"wordmatch", s.bias.wordmatch},
          {"yes_mean_rank", s.bias.yes_mean_rank}};
}

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::vector<double> RunReport::metric(const std::string& name) const {
  std::vector<double> out;
  for (const auto& s : seeds) out.push_back(detail::seed_metrics(s).at(name));
  return out;
}

/// Same data a config sees for `seed`: the world seed is replaced by it.
inline Dataset dataset_for(const RunConfig& cfg, std::uint64_t seed) {
  auto w = cfg.world;
  w.seed = seed;
  return generate(w, cfg.n_instances, cfg.val_fraction);
}

inline QTypeTable fit_table_for(const RunConfig& cfg, const Dataset& d) {
  QTypeTableSpec spec;
  spec.n_types = d.spec.n_qtypes;
  spec.min_count = cfg.qt_min_count;
  spec.smoothing = cfg.qt_smoothing;
  return fit_qtype_table(spec, d, d.indices(Split::Train));
}

inline SeedResult run_seed(const RunConfig& cfg, const Dataset& d, std::uint64_t seed) {
  SeedResult s;
  s.seed = seed;
  std::optional<QTypeTable> table;
  if (cfg.qt_mixing != QtMixing::Off) table = fit_table_for(cfg, d);
  auto tr = train(cfg, d, seed, table ? &*table : nullptr);
  const auto val = d.indices(Split::Val);
  s.eval = evaluate(tr.params, d, val, cfg.qt_mixing == QtMixing::Inference ? &*table : nullptr);
  s.bias = bias_stats(s.eval.rankings, d, val);
  s.curve = std::move(tr.curve);
  s.params = std::move(tr.params);
  return s;
}

inline void finalize(RunReport& r) {
  r.aggregate.clear();
  if (r.seeds.empty()) return;
  for (const auto& [name, _] : detail::seed_metrics(r.seeds.front())) r.aggregate[name] = detail::aggregate(r.metric(name));
}

inline void write_report_csv(std::ostream& os, const RunReport& r) {
  os << "seed,metric,value\n";
  for (const auto& s : r.seeds) {
    for (const auto& [name, v] : detail::seed_metrics(s)) os << s.seed << ',' << name << ',' << detail::num(v) << '\n';
  }
  for (const auto& [name, a] : r.aggregate) {
    os << "mean," << name << ',' << detail::num(a.mean) << '\n';
    os << "std," << name << ',' << detail::num(a.std) << '\n';
  }
}

inline void write_curves_csv(std::ostream& os, const RunReport& r) {
  os << "seed,stage,epoch,loss,val_ndcg\n";
  for (const auto& s : r.seeds) {
    for (const auto& e : s.curve) {
      os << s.seed << ',' << e.stage << ',' << e.epoch << ',' << detail::num(e.loss) << ',' << detail::num(e.val_ndcg)
         << '\n';
    }
  }
}

inline void write_bias_csv(std::ostream& os, const RunReport& r) {
  os << "seed,probe,value\n";
  for (const auto& s : r.seeds) {
    os << s.seed << ",length_correlation," << detail::num(s.bias.length_correlation) << '\n';
    os << s.seed << ",wordmatch," << detail::num(s.bias.wordmatch) << '\n';
    os << s.seed << ",wordmatch_uniform," << detail::num(s.bias.wordmatch_uniform) << '\n';
    os << s.seed << ",yes_mean_rank," << detail::num(s.bias.yes_mean_rank) << '\n';
    os << s.seed << ",yes_instances," << s.bias.yes_instances << '\n';
  }
}

/// Two columns: training step (epochs across both stages) and mean val NDCG over seeds.
inline void write_plot_dat(std::ostream& os, const RunReport& r) {
  os << "# step val_ndcg\n";
  if (r.seeds.empty()) return;
  const auto steps = r.seeds.front().curve.size();
  for (std::size_t k = 0; k < steps; ++k) {
    double total = 0.0;
    for (const auto& s : r.seeds) total += s.curve.at(k).val_ndcg;
    os << (k + 1) << ' ' << detail::num(total / static_cast<double>(r.seeds.size())) << '\n';
  }
}

inline void write_bias_comparison_csv(std::ostream& os, const std::vector<BiasRow>& rows) {
  os << "probe,first,second,difference\n";
  for (const auto& b : rows) {
    os << b.probe << ',' << detail::num(b.first) << ',' << detail::num(b.second) << ',' << detail::num(b.difference)
       << '\n';
  }
}

namespace detail {

template <class F>
void write_file(const std::filesystem::path& p, F&& f) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  f(os);
}

}  // namespace detail

/// Writes report.csv, curves.csv, bias.csv, plot.dat and config.json into dir.
inline void write_run_outputs(const std::filesystem::path& dir, const RunReport& r) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, r); });
  detail::write_file(dir / "curves.csv", [&](std::ostream& os) { write_curves_csv(os, r); });
  detail::write_file(dir / "bias.csv", [&](std::ostream& os) { write_bias_csv(os, r); });
  detail::write_file(dir / "plot.dat", [&](std::ostream& os) { write_plot_dat(os, r); });
  detail::write_file(dir / "config.json", [&](std::ostream& os) {
    nlohmann::json j = r.config;
    j["version"] = r.version;
    os << j.dump(2) << '\n';
  });
  if (!r.ok()) detail::write_file(dir / "error.txt", [&](std::ostream& os) { os << r.error << '\n'; });
}

/// One row per run: config columns then mean and std of each metric.
inline void write_table_csv(std::ostream& os, const std::vector<RunReport>& reports) {
  static const char* metrics[] = {"ndcg", "mrr", "mean_rank", "length_correlation", "wordmatch", "yes_mean_rank"};
  os << "name,variant,loss_pretrain,loss_finetune,qt_mixing,seeds,status";
  for (const char* m : metrics) os << ',' << m << "_mean," << m << "_std";
  os << '\n';
  for (const auto& r : reports) {
    const auto& c = r.config;
    os << c.name << ',' << to_string(c.variant) << ',' << to_string(c.loss_pretrain) << ','
       << (c.loss_finetune ? std::string(to_string(*c.loss_finetune)) : "none") << ',' << to_string(c.qt_mixing) << ','
       << r.seeds.size() << ',' << (r.ok() ? "ok" : "failed");
    for (const char* m : metrics) {
      auto it = r.aggregate.find(m);
      if (it == r.aggregate.end()) {
        os << ",,";
      } else {
        os << ',' << detail::num(it->second.mean) << ',' << detail::num(it->second.std);
      }
    }
    os << '\n';
  }
}

/// Runs every seed of one config. Errors are recorded in the report rather
/// than thrown; results of seeds that finished before the failure are kept.
inline RunReport run(const RunConfig& cfg) {
  RunReport r;
  r.config = cfg;
  try {
    cfg.validate();
    for (auto seed : cfg.seeds) {
      const auto d = dataset_for(cfg, seed);
      r.seeds.push_back(run_seed(cfg, d, seed));
    }
  } catch (const Error& e) {
    r.error = std::string(to_string(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  finalize(r);
  if (!cfg.out_dir.empty()) write_run_outputs(std::filesystem::path(cfg.out_dir) / cfg.name, r);
  return r;
}

/// Runs configs on up to `jobs` threads; report order follows `cfgs`.
inline std::vector<RunReport> run_matrix(const std::vector<RunConfig>& cfgs, int jobs = 1) {
  if (cfgs.empty()) throw Error(ErrorCode::ConfigError, "empty run matrix");
  for (const auto& c : cfgs) {
    if (c.seeds.empty()) throw Error(ErrorCode::ConfigError, "config '" + c.name + "' has no seeds");
  }
  std::vector<RunReport> out(cfgs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k; (k = next++) < cfgs.size();) out[k] = run(cfgs[k]);
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(cfgs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired one-sided sign test

struct SignTest {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double p_value = 1.0;  // P(at least `wins` of wins+losses under a fair coin)
};

/// Tests whether `better[k] > worse[k]` more often than chance.
inline SignTest sign_test(const std::vector<double>& better, const std::vector<double>& worse) {
  if (better.size() != worse.size()) throw Error(ErrorCode::LengthMismatch, "sign test needs paired samples");
  SignTest t;
  for (std::size_t k = 0; k < better.size(); ++k) {
    if (better[k] > worse[k]) {
      ++t.wins;
    } else if (better[k] < worse[k]) {
      ++t.losses;
    } else {
      ++t.ties;
    }
  }
  const int n = t.wins + t.losses;
  // log-space binomial tail
  double p = 0.0;
  for (int k = t.wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  t.p_value = std::min(1.0, p);
  return t;
}

// ---------------------------------------------------------------------------
// Ranking files: one line per instance, candidate indices best first.

inline void save_rankings(std::ostream& os, const std::vector<Ranking>& rankings) {
  for (const auto& r : rankings) {
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? " " : "") << r[k];
    os << '\n';
  }
}

inline std::vector<Ranking> load_rankings(std::istream& is) {
  std::vector<Ranking> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Ranking r;
    int c;
    while (ls >> c) r.push_back(c);
    if (!ls.eof()) throw Error(ErrorCode::ParseError, "bad ranking line: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace causalrank
