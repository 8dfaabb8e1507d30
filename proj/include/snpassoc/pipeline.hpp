#pragma once

#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "snpassoc/cart.hpp"
#include "snpassoc/config.hpp"
#include "snpassoc/dataset.hpp"
#include "snpassoc/ensemble.hpp"
#include "snpassoc/logicreg.hpp"
#include "snpassoc/mdr.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/permtest.hpp"
#include "snpassoc/synth.hpp"

namespace snpassoc {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kReportFormat = "snpassoc-report/1";

// A module failure tagged with the config file and the block that caused it.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class Fn>
auto in_block(const RunConfig& cfg, const std::string& block, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw RunError(cfg.source + " [" + block + "]: " + e.what());
  }
}

inline json to_json(const CvError& cv) {
  json folds = json::array();
  for (const auto& f : cv.per_fold) folds.push_back({{"case_miss_rate", f.cases}, {"control_miss_rate", f.controls}});
  return {{"value", cv.value}, {"K", cv.K}, {"per_fold", folds}};
}

inline json to_json(const PermTestResult& r) {
  return {{"B", r.B},
          {"alpha", r.alpha},
          {"observed_error", r.observed_error},
          {"p_value", r.p_value},
          {"accuracy_bound", r.accuracy_bound},
          {"reject", r.reject},
          {"resampled_replicates", r.resampled_replicates},
          {"null_errors", r.null_errors}};
}

inline json tree_json(const TreeConfig& t) {
  json j = {{"max_leaves", t.max_leaves}, {"min_node", t.min_node}, {"criterion", to_string(t.criterion)}};
  j["features_per_split"] = t.features_per_split ? json(*t.features_per_split) : json(nullptr);
  return j;
}

inline const char* to_string(CoolingSchedule::Kind k) {
  return k == CoolingSchedule::Kind::geometric ? "geometric" : "descent";
}

inline json params_json(const RunConfig& cfg) {
  return std::visit(
      [&](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MdrParams>) {
          return {{"r_min", p.search.r_min},
                  {"r_max", p.search.r_max},
                  {"variant", to_string(p.search.variant)},
                  {"restrict_to", p.restrict_to},
                  {"add_one_smoothing", p.search.mdrir.add_one_smoothing},
                  {"max_cell_updates", p.search.max_cell_updates},
                  {"top", p.top}};
        } else if constexpr (std::is_same_v<T, LrParams>) {
          const auto& a = p.anneal;
          json s = {{"kind", to_string(a.schedule.kind)},
                    {"final_ratio", a.schedule.final_ratio},
                    {"steps", a.schedule.steps},
                    {"probe_forests", a.schedule.probe_forests}};
          s["initial_temperature"] =
              a.schedule.initial_temperature ? json(*a.schedule.initial_temperature) : json(nullptr);
          return {{"trees", a.trees},
                  {"r_max", a.r_max},
                  {"model", to_string(a.model)},
                  {"restarts", a.restarts},
                  {"refit_per_fold", a.refit_per_fold},
                  {"schedule", s},
                  {"beta", {{"tol", a.beta.tol}, {"max_iter", a.beta.max_iter}, {"step_cap", a.beta.step_cap}}}};
        } else if constexpr (std::is_same_v<T, CartParams>) {
          return tree_json(p.tree);
        } else if constexpr (std::is_same_v<T, RfParams>) {
          json j = tree_json(p.rf.tree);
          j["trees"] = p.rf.trees ? json(*p.rf.trees) : json(nullptr);
          return j;
        } else if constexpr (std::is_same_v<T, SgbParams>) {
          const auto& c = p.sgb;
          return {{"leaves", c.leaves},
                  {"stages", c.stages},
                  {"rho", c.rho},
                  {"eta", c.eta},
                  {"min_node", c.min_node},
                  {"criterion", to_string(c.criterion)},
                  {"subsample_weights", c.subsample_weights},
                  {"grid", {{"leaves", p.grid.leaves}, {"stages", p.grid.stages}, {"rho", p.grid.rho}, {"eta", p.grid.eta}}}};
        } else if constexpr (std::is_same_v<T, CvimParams>) {
          json j = tree_json(p.cvim.tree);
          j["replicates"] = p.cvim.replicates;
          j["level"] = p.cvim.level;
          return j;
        } else {
          const auto& g = p.spec;
          json effects = json::array();
          for (const auto& e : g.effects)
            effects.push_back({{"combo", e.combo.to_string(p.names)}, {"penetrance", e.penetrance}});
          json freqs = json::array();
          for (const auto& f : g.allele_freqs) freqs.push_back({f[0], f[1], f[2]});
          return {{"N", g.N},
                  {"n", g.n},
                  {"allele_freqs", freqs},
                  {"effects", effects},
                  {"baseline", g.baseline},
                  {"noise", g.noise},
                  {"combination", to_string(g.combination)},
                  {"output", p.output}};
        }
      },
      cfg.params);
}

// One method evaluated on one dataset and fold plan.
struct Evaluation {
  json result;
  std::optional<CvError> cv;
};

// The method's error statistic on a dataset with the given fold plan.
using PlanStatistic = std::function<double(const Dataset&, const FoldPlan&, std::uint64_t)>;

struct MethodRunner {
  std::function<Evaluation(const Dataset&, const FoldPlan&, std::uint64_t)> evaluate;
  PlanStatistic statistic;
};

inline std::vector<std::string> names_of(const Dataset& ds, const std::vector<std::size_t>& cols) {
  std::vector<std::string> out;
  for (std::size_t c : cols) out.push_back(ds.names()[c]);
  return out;
}

inline MethodRunner mdr_runner(const MdrParams& p, const Dataset& ref, unsigned workers) {
  MdrSearchOptions opt = p.search;
  if (!p.restrict_to.empty()) {
    std::vector<std::size_t> cols;
    for (const auto& name : p.restrict_to) {
      const auto c = ref.column_index(name);
      if (!c) raise(ErrorKind::parameter, "mdr", "restrict_to names unknown column '" + name + "'");
      cols.push_back(*c);
    }
    opt.restrict_to = cols;
  }
  MethodRunner r;
  r.evaluate = [opt, p, workers](const Dataset& ds, const FoldPlan& plan, std::uint64_t) {
    const MdrSearchReport rep = mdr_search(ds, plan, opt, workers);
    Evaluation ev;
    ev.cv = rep.ranked.front().error;
    json ranked = json::array();
    for (std::size_t k = 0; k < rep.ranked.size() && k < p.top; ++k)
      ranked.push_back({{"combo", names_of(ds, rep.ranked[k].combo.indices)}, {"cv_error", rep.ranked[k].error.value}});
    const FactorCombo& best = rep.ranked.front().combo;
    const MdrModel model = opt.variant == MdrVariant::classic ? fit_mdr(ds, all_rows(ds), best)
                                                              : fit_mdrir(ds, all_rows(ds), best, opt.mdrir);
    json rule = json::array();
    for (Label l : model.rule()) rule.push_back(l);
    ev.result = {{"search_space", rep.search_space},
                 {"best_combo", names_of(ds, best.indices)},
                 {"ranked", ranked},
                 {"cell_rule", rule},
                 {"threshold", model.threshold()}};
    return ev;
  };
  r.statistic = [opt](const Dataset& ds, const FoldPlan& plan, std::uint64_t) {
    return mdr_search(ds, plan, opt, 1).ranked.front().error.value;
  };
  return r;
}

inline MethodRunner lr_runner(const LrParams& p, unsigned workers) {
  MethodRunner r;
  r.evaluate = [p, workers](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    const AnnealResult res = anneal(ds, plan, p.anneal, seed, workers);
    Evaluation ev;
    ev.cv = res.best_cv;
    std::size_t accepted = 0;
    for (const auto& s : res.trace) accepted += s.accepted;
    json trees = json::array();
    for (const auto& t : res.best.forest.trees) trees.push_back(t.to_string(ds.names()));
    ev.result = {{"expression", res.best.to_string(ds.names())},
                 {"trees", trees},
                 {"beta", res.best.beta},
                 {"complexity", res.best.forest.complexity()},
                 {"score", res.best.score},
                 {"converged", res.best.converged},
                 {"degenerate", res.best.degenerate},
                 {"restart", res.restart},
                 {"initial_temperature", res.initial_temperature},
                 {"steps", res.trace.size()},
                 {"accepted", accepted},
                 {"evaluations", res.evaluations}};
    return ev;
  };
  r.statistic = [p](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    return anneal(ds, plan, p.anneal, seed, 1).best_error;
  };
  return r;
}

inline MethodRunner trainer_runner(std::function<TrainedModel(unsigned)> make, std::function<json(const Dataset&, std::uint64_t)> summary,
                                   unsigned workers) {
  MethodRunner r;
  r.evaluate = [make, summary, workers](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    Evaluation ev;
    ev.cv = cv_error(make(workers), ds, plan, seed);
    ev.result = summary(ds, derive_seed(seed, stream::model_training));
    return ev;
  };
  r.statistic = [make](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    return cv_error(make(1), ds, plan, seed).value;
  };
  return r;
}

inline TrainedModel rf_trainer_with(const RfConfig& cfg, unsigned workers) {
  return [cfg, workers](const Dataset& ds, const Subsample& s, std::uint64_t seed) {
    return as_prediction_fn(fit_rf(ds, s, cfg, seed, workers));
  };
}

inline std::vector<SgbConfig> sgb_grid_cells(const SgbParams& p) {
  const auto& g = p.grid;
  const std::vector<std::size_t> leaves = g.leaves.empty() ? std::vector<std::size_t>{p.sgb.leaves} : g.leaves;
  const std::vector<std::size_t> stages = g.stages.empty() ? std::vector<std::size_t>{p.sgb.stages} : g.stages;
  const std::vector<double> rho = g.rho.empty() ? std::vector<double>{p.sgb.rho} : g.rho;
  const std::vector<double> eta = g.eta.empty() ? std::vector<double>{p.sgb.eta} : g.eta;
  std::vector<SgbConfig> cells;
  for (auto d : leaves)
    for (auto m : stages)
      for (auto r : rho)
        for (auto e : eta) {
          SgbConfig c = p.sgb;
          c.leaves = d;
          c.stages = m;
          c.rho = r;
          c.eta = e;
          cells.push_back(c);
        }
  return cells;
}

inline json sgb_json(const SgbConfig& c) {
  return {{"leaves", c.leaves}, {"stages", c.stages}, {"rho", c.rho}, {"eta", c.eta}};
}

inline MethodRunner sgb_runner(const SgbParams& p, unsigned workers) {
  MethodRunner r;
  r.evaluate = [p, workers](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    SgbConfig chosen = p.sgb;
    Evaluation ev;
    json grid = json::array();
    if (!p.grid.empty()) {
      const auto cells = sgb_grid_cells(p);
      std::vector<double> errs(cells.size());
      parallel_for(cells.size(), workers, [&](std::size_t k) {
        errs[k] = cv_error(sgb_trainer(cells[k]), ds, plan, derive_seed(seed, stream::model_training, k)).value;
      });
      std::size_t best = 0;
      for (std::size_t k = 0; k < cells.size(); ++k) {
        json cell = sgb_json(cells[k]);
        cell["cv_error"] = errs[k];
        grid.push_back(cell);
        if (errs[k] < errs[best]) best = k;
      }
      chosen = cells[best];
    }
    ev.cv = cv_error(sgb_trainer(chosen), ds, plan, seed);
    const SgbModel m = fit_sgb(ds, all_rows(ds), chosen, derive_seed(seed, stream::model_training));
    ev.result = {{"chosen", sgb_json(chosen)},
                 {"grid", grid},
                 {"f0", m.f0},
                 {"final_training_loss", m.stage_loss.back()},
                 {"clamp_events", m.clamp_events}};
    return ev;
  };
  r.statistic = [p](const Dataset& ds, const FoldPlan& plan, std::uint64_t seed) {
    return cv_error(sgb_trainer(p.sgb), ds, plan, seed).value;
  };
  return r;
}

inline MethodRunner cvim_runner(const CvimParams& p, unsigned workers) {
  MethodRunner r;
  r.evaluate = [p, workers](const Dataset& ds, const FoldPlan&, std::uint64_t seed) {
    const CvimReport rep = cvim(ds, p.cvim, seed, workers);
    json table = json::array();
    for (std::size_t i : rep.ranking()) {
      const auto& e = rep.entries[i];
      table.push_back({{"predictor", ds.names()[e.column]},
                       {"cvim", e.value},
                       {"spread", e.spread},
                       {"conditioning", names_of(ds, e.conditioning)},
                       {"fallback", e.fallback},
                       {"strata", e.strata}});
    }
    Evaluation ev;
    ev.result = {{"B", rep.B}, {"used", rep.used}, {"skipped", rep.skipped}, {"resampled", rep.resampled}, {"importance", table}};
    return ev;
  };
  return r;
}

inline MethodRunner make_runner(const RunConfig& cfg, const Dataset& ref, unsigned workers) {
  return std::visit(
      [&](const auto& p) -> MethodRunner {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MdrParams>) {
          return mdr_runner(p, ref, workers);
        } else if constexpr (std::is_same_v<T, LrParams>) {
          return lr_runner(p, workers);
        } else if constexpr (std::is_same_v<T, CartParams>) {
          const TreeConfig t = p.tree;
          return trainer_runner([t](unsigned) { return cart_trainer(t); },
                                [t](const Dataset& ds, std::uint64_t seed) {
                                  const ClassTree tree = grow_tree(ds, all_rows(ds), t, seed);
                                  return json{{"leaves", tree.leaf_count()},
                                              {"depth", tree.depth()},
                                              {"tree", tree.to_string(ds.names())}};
                                },
                                workers);
        } else if constexpr (std::is_same_v<T, RfParams>) {
          const RfConfig c = p.rf;
          return trainer_runner([c](unsigned w) { return rf_trainer_with(c, w); },
                                [c, workers](const Dataset& ds, std::uint64_t seed) {
                                  const RfModel m = fit_rf(ds, all_rows(ds), c, seed, workers);
                                  std::size_t leaves = 0;
                                  for (const auto& t : m.trees) leaves += t.leaf_count();
                                  return json{{"trees", m.size()},
                                              {"threshold", m.threshold},
                                              {"mean_leaves", static_cast<double>(leaves) / static_cast<double>(m.size())},
                                              {"resampled_bootstraps", m.resampled}};
                                },
                                workers);
        } else if constexpr (std::is_same_v<T, SgbParams>) {
          return sgb_runner(p, workers);
        } else if constexpr (std::is_same_v<T, CvimParams>) {
          return cvim_runner(p, workers);
        } else {
          raise(ErrorKind::parameter, "cli", "synth runs have no evaluation");
        }
      },
      cfg.params);
}

inline json dataset_json(const Dataset& ds, const std::string& path) {
  json kinds = json::array();
  for (auto k : ds.kinds()) kinds.push_back(to_string(k));
  return {{"path", path},
          {"rows", ds.rows()},
          {"predictors", ds.cols()},
          {"cases", ds.case_count()},
          {"controls", ds.control_count()},
          {"names", ds.names()},
          {"kinds", kinds}};
}

inline json run_synth(const RunConfig& cfg, const SynthParams& p) {
  GenSpec spec = p.spec;
  spec.seed = cfg.seed;
  const Dataset ds = in_block(cfg, "method", [&] { return generate(spec); });
  CsvSchema schema = schema_for(ds);
  in_block(cfg, "method.output", [&] {
    save_dataset(p.output, ds, schema);
    return 0;
  });
  return {{"output", p.output},
          {"rows", ds.rows()},
          {"predictors", ds.cols()},
          {"cases", ds.case_count()},
          {"controls", ds.control_count()},
          {"bayes_balanced_error", bayes_balanced_error(spec)}};
}

}  // namespace detail

inline unsigned resolve_workers(const RunConfig& cfg, std::optional<unsigned> override_workers) {
  if (override_workers) return *override_workers;
  if (cfg.workers) return *cfg.workers;
  return default_workers();
}

// Runs the configured pipeline. Wall-clock time is confined to "timing".
inline json run_pipeline(const RunConfig& cfg, unsigned workers) {
  const auto start = std::chrono::steady_clock::now();
  json report;
  report["format"] = kReportFormat;
  report["version"] = kVersion;
  report["method"] = cfg.method;
  report["seed"] = cfg.seed;
  report["parameters"] = detail::params_json(cfg);
  report["config"] = {{"source", cfg.source}, {"text", cfg.text}};

  if (const auto* synth = std::get_if<SynthParams>(&cfg.params)) {
    report["result"] = detail::run_synth(cfg, *synth);
  } else {
    const Dataset ds = detail::in_block(cfg, "dataset", [&] { return load_dataset(cfg.dataset->path, cfg.dataset->schema); });
    report["dataset"] = detail::dataset_json(ds, cfg.dataset->path);
    report["folds"] = {{"K", cfg.folds}, {"shuffle", cfg.shuffle}};
    const detail::MethodRunner runner = detail::in_block(cfg, "method", [&] { return detail::make_runner(cfg, ds, workers); });

    const std::size_t repeats = std::max<std::size_t>(cfg.balance_repeats, 1);
    std::vector<Dataset> sets;
    for (std::size_t r = 0; r < repeats; ++r)
      sets.push_back(cfg.balance_repeats ? detail::in_block(cfg, "balance", [&] {
        return balance_resample(ds, derive_seed(cfg.seed, stream::balance, r));
      })
                                         : ds);
    auto plan_for = [&](const Dataset& d, std::size_t r) {
      return detail::in_block(cfg, "folds", [&] {
        FoldPlan plan = cfg.shuffle ? shuffle_then_fold(d, cfg.folds, derive_seed(cfg.seed, stream::folds, r))
                                    : make_folds(d.rows(), cfg.folds);
        if (cfg.method != "cvim") check_plan(d, plan);
        return plan;
      });
    };

    std::vector<double> repeat_values;
    json first_result;
    std::optional<CvError> first_cv;
    for (std::size_t r = 0; r < repeats; ++r) {
      const FoldPlan plan = plan_for(sets[r], r);
      const detail::Evaluation ev = detail::in_block(
          cfg, "method", [&] { return runner.evaluate(sets[r], plan, derive_seed(cfg.seed, stream::model_training, r)); });
      if (r == 0) {
        first_result = ev.result;
        first_cv = ev.cv;
      }
      if (ev.cv) repeat_values.push_back(ev.cv->value);
    }
    if (cfg.balance_repeats) report["balance"] = {{"repeats", cfg.balance_repeats}, {"rows", sets.front().rows()}};
    if (first_cv) {
      json cv = detail::to_json(*first_cv);
      if (repeats > 1) {
        CompensatedSum mean;
        for (double v : repeat_values) mean.add(v);
        cv["value"] = mean.value() / static_cast<double>(repeat_values.size());
        cv["repeat_values"] = repeat_values;
      }
      report["cv"] = cv;
    }
    if (cfg.permtest) {
      const FoldPlan plan = plan_for(sets.front(), 0);
      ErrorStatistic stat = [&](const Dataset& d, std::uint64_t s) { return runner.statistic(d, plan, s); };
      const PermTestResult pt = detail::in_block(cfg, "permtest", [&] {
        return permutation_test_statistic(stat, sets.front(), cfg.permtest->replicates, cfg.permtest->alpha,
                                          derive_seed(cfg.seed, stream::permutation), workers);
      });
      report["permtest"] = detail::to_json(pt);
    }
    report["result"] = first_result;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report["timing"] = {{"wall_seconds", secs}};
  return report;
}

// Report without wall-clock fields, for reproducibility comparisons.
inline json without_timing(json report) {
  report.erase("timing");
  return report;
}

// Writes through a temporary file so a partial report never appears.
inline void write_report(const json& report, const std::string& path) {
  const std::string text = report.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fflush(stdout);
    return;
  }
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) raise(ErrorKind::io, "cli", "cannot write " + tmp);
    out << text;
    if (!out.flush()) raise(ErrorKind::io, "cli", "write to " + tmp + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(ErrorKind::io, "cli", "cannot move report to " + path + ": " + ec.message());
}

}  // namespace snpassoc
