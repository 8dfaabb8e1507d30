#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "snpassoc/dataset.hpp"
#include "snpassoc/expr_tree.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/parallel.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

// A tuple of expression trees entering h(x) = b0 + sum_v b_v T_v(x).
// Frozen trees (the single-leaf external terms of model 1) are never moved.
struct Forest {
  std::vector<ExprTree> trees;
  std::vector<bool> frozen;
  StructureModel model = StructureModel::unconstrained;

  std::size_t size() const noexcept { return trees.size(); }

  // C(F): maximal tree complexity.
  std::size_t complexity() const {
    std::size_t c = 0;
    for (const auto& t : trees) c = std::max(c, t.complexity());
    return c;
  }

  bool is_frozen(std::size_t v) const { return v < frozen.size() && frozen[v]; }

  std::string key() const {
    std::string k;
    for (const auto& t : trees) k += t.to_string() + ";";
    return k;
  }

  friend bool operator==(const Forest& a, const Forest& b) { return a.trees == b.trees; }
};

inline bool satisfies(const Forest& f, const std::vector<PredictorKind>& kinds, std::size_t r_max) {
  for (std::size_t v = 0; v < f.size(); ++v) {
    if (f.trees[v].complexity() > r_max) return false;
    if (!f.is_frozen(v) && !satisfies(f.trees[v], f.model, kinds)) return false;
  }
  return true;
}

struct FittedForest {
  Forest forest;
  std::vector<double> beta;  // b0, b1..bs
  double score = 0.0;        // L at (forest, beta) on the training rows
  bool converged = false;
  bool degenerate = false;   // some direction of beta was flat on the training rows
  std::size_t iterations = 0;
  std::optional<CvError> cv;

  double h(RowView x) const {
    double v = beta[0];
    for (std::size_t t = 0; t < forest.size(); ++t) v += beta[t + 1] * forest.trees[t].eval(x);
    return v;
  }

  std::string to_string(const std::vector<std::string>& names) const {
    std::string out = std::to_string(beta[0]);
    for (std::size_t t = 0; t < forest.size(); ++t)
      out += " + " + std::to_string(beta[t + 1]) + " * " + forest.trees[t].to_string(names);
    return out;
  }
};

// f(x) = +1 iff h(x) > 0.
inline Label lr_predict(const FittedForest& fit, RowView x) { return fit.h(x) > 0.0 ? kCase : kControl; }

// ---------------------------------------------------------------------------
// Normalised smoothed score
//   L(h) = 1/|S| sum_j phi(-Y^j h(X^j)) psi(Y^j),  phi(t) = log2(1 + e^t).

namespace detail {
inline constexpr double kLn2 = 0.69314718055994530942;

inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}
}  // namespace detail

inline double phi(double t) { return detail::softplus(t) / detail::kLn2; }

// Design of the score on rows S: column 0 is the intercept, column v the
// value of tree v.
class ScoreProblem {
 public:
  ScoreProblem(const Forest& forest, const Dataset& ds, const Subsample& s) {
    check_subsample(ds, s, "logicreg");
    const ClassCounts c = require_both_classes(ds, s, "logicreg");
    const std::size_t p = forest.size() + 1;
    z_.resize(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(p));
    y_.resize(static_cast<Eigen::Index>(s.size()));
    w_.resize(static_cast<Eigen::Index>(s.size()));
    const double psi_case = static_cast<double>(s.size()) / (4.0 * static_cast<double>(c.cases));
    const double psi_control = static_cast<double>(s.size()) / (4.0 * static_cast<double>(c.controls));
    for (std::size_t r = 0; r < s.size(); ++r) {
      const auto row = ds.row(s[r]);
      const auto i = static_cast<Eigen::Index>(r);
      z_(i, 0) = 1.0;
      for (std::size_t t = 0; t < forest.size(); ++t) z_(i, static_cast<Eigen::Index>(t + 1)) = forest.trees[t].eval(row);
      y_(i) = ds.label(s[r]);
      w_(i) = (ds.label(s[r]) == kCase ? psi_case : psi_control) / static_cast<double>(s.size());
    }
  }

  Eigen::Index dims() const { return z_.cols(); }
  Eigen::Index rows() const { return z_.rows(); }
  const Eigen::MatrixXd& design() const { return z_; }

  double value(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd h = z_ * beta;
    double v = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) v += w_(i) * phi(-y_(i) * h(i));
    return v;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd h = z_ * beta;
    Eigen::VectorXd coef(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i)
      coef(i) = -w_(i) * y_(i) * detail::sigmoid(-y_(i) * h(i)) / detail::kLn2;
    return z_.transpose() * coef;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd h = z_ * beta;
    Eigen::VectorXd d(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const double s = detail::sigmoid(-y_(i) * h(i));
      d(i) = w_(i) * s * (1.0 - s) / detail::kLn2;
    }
    return z_.transpose() * d.asDiagonal() * z_;
  }

 private:
  Eigen::MatrixXd z_;
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;
};

inline double score_L(const Forest& forest, const std::vector<double>& beta, const Dataset& ds, const Subsample& s) {
  if (beta.size() != forest.size() + 1) raise(ErrorKind::parameter, "logicreg", "beta must have s+1 entries");
  const ScoreProblem prob(forest, ds, s);
  return prob.value(Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size())));
}

inline std::vector<double> score_gradient(const Forest& forest, const std::vector<double>& beta, const Dataset& ds,
                                          const Subsample& s) {
  if (beta.size() != forest.size() + 1) raise(ErrorKind::parameter, "logicreg", "beta must have s+1 entries");
  const ScoreProblem prob(forest, ds, s);
  const Eigen::VectorXd g =
      prob.gradient(Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size())));
  return {g.data(), g.data() + g.size()};
}

struct BetaOptions {
  double tol = 1e-8;          // gradient norm
  std::size_t max_iter = 200;
  double step_cap = 10.0;     // max norm of one Newton step
};

// Minimises L over beta with the forest fixed: safeguarded Newton with
// step halving. Tree columns that are constant on S are flat directions
// (collinear with the intercept); they stay at 0 and set `degenerate`.
// Remaining collinearity is handled by the minimum-norm Newton step.
inline FittedForest fit_beta(const Forest& forest, const Dataset& ds, const Subsample& s, const BetaOptions& opt = {}) {
  if (forest.size() + 1 > s.size())
    raise(ErrorKind::precondition, "logicreg", "need s+1 <= |S| to fit the coefficients");
  const ScoreProblem prob(forest, ds, s);
  const Eigen::Index p = prob.dims();
  FittedForest fit;
  fit.forest = forest;

  std::vector<Eigen::Index> active{0};
  for (Eigen::Index v = 1; v < p; ++v) {
    const auto col = prob.design().col(v);
    if ((col.array() != col(0)).any()) active.push_back(v);
    else fit.degenerate = true;
  }
  const auto q = static_cast<Eigen::Index>(active.size());
  auto expand = [&](const Eigen::VectorXd& sub) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < q; ++i) full(active[static_cast<std::size_t>(i)]) = sub(i);
    return full;
  };
  auto restrict = [&](const Eigen::VectorXd& full) {
    Eigen::VectorXd sub(q);
    for (Eigen::Index i = 0; i < q; ++i) sub(i) = full(active[static_cast<std::size_t>(i)]);
    return sub;
  };
  auto restrict_h = [&](const Eigen::MatrixXd& full) {
    Eigen::MatrixXd sub(q, q);
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index k = 0; k < q; ++k)
        sub(i, k) = full(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(k)]);
    return sub;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double value = prob.value(beta);
  for (fit.iterations = 0; fit.iterations < opt.max_iter; ++fit.iterations) {
    const Eigen::VectorXd g = restrict(prob.gradient(beta));
    if (g.norm() <= opt.tol) {
      fit.converged = true;
      break;
    }
    const Eigen::MatrixXd H = restrict_h(prob.hessian(beta));
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(H);
    if (cod.rank() < q) fit.degenerate = true;
    Eigen::VectorXd step = -cod.solve(g);
    if (!step.allFinite() || step.dot(g) >= 0) step = -g;  // fall back to steepest descent
    const double norm = step.norm();
    if (norm > opt.step_cap) step *= opt.step_cap / norm;
    double t = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      const Eigen::VectorXd trial = beta + expand(t * step);
      const double v = prob.value(trial);
      if (!std::isfinite(v)) raise(ErrorKind::numeric, "logicreg", "non-finite score during coefficient fit");
      if (v < value) {
        beta = trial;
        value = v;
        improved = true;
        break;
      }
    }
    if (!improved) {
      // No representable decrease along the Newton direction: numerically stationary.
      fit.converged = g.norm() <= std::sqrt(opt.tol);
      break;
    }
  }
  if (!beta.allFinite()) raise(ErrorKind::numeric, "logicreg", "non-finite coefficients");
  fit.beta.assign(beta.data(), beta.data() + beta.size());
  fit.score = value;
  return fit;
}

inline PredictionFn as_prediction_fn(FittedForest fit) {
  auto shared = std::make_shared<const FittedForest>(std::move(fit));
  return PredictionFn([shared](RowView x) { return lr_predict(*shared, x); }, "logic regression forest");
}

inline TrainedModel forest_trainer(Forest forest, BetaOptions opt = {}) {
  return [forest = std::move(forest), opt](const Dataset& ds, const Subsample& s, std::uint64_t) {
    return as_prediction_fn(fit_beta(forest, ds, s, opt));
  };
}

// ---------------------------------------------------------------------------
// Neighbours of a forest: one legal move applied to one tree.

inline std::vector<TreeMove> legal_moves(const Forest& f, std::size_t tree, const std::vector<PredictorKind>& kinds,
                                         std::size_t r_max) {
  std::vector<TreeMove> out;
  if (f.is_frozen(tree)) return out;
  for (auto& m : enumerate_moves(f.trees[tree], kinds.size(), r_max))
    if (m.result.complexity() <= r_max && satisfies(m.result, f.model, kinds)) out.push_back(std::move(m));
  return out;
}

struct Neighbor {
  Forest forest;
  std::size_t tree = 0;
  MoveKind move = MoveKind::variable_change;
};

// Uniform tree among those admitting a legal move, then a uniform move kind
// among the legal kinds, then a uniform instance of that kind.
inline Neighbor neighbors(const Forest& f, const std::vector<PredictorKind>& kinds, std::size_t r_max, Rng& rng) {
  std::vector<std::size_t> movable;
  std::vector<std::vector<TreeMove>> moves(f.size());
  for (std::size_t t = 0; t < f.size(); ++t) {
    moves[t] = legal_moves(f, t, kinds, r_max);
    if (!moves[t].empty()) movable.push_back(t);
  }
  if (movable.empty()) raise(ErrorKind::parameter, "logicreg", "forest has no legal neighbour move");
  const std::size_t t = movable[uniform_index(rng, movable.size())];
  std::map<MoveKind, std::vector<std::size_t>> by_kind;
  for (std::size_t m = 0; m < moves[t].size(); ++m) by_kind[moves[t][m].kind].push_back(m);
  auto it = by_kind.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(uniform_index(rng, by_kind.size())));
  const std::size_t pick = it->second[uniform_index(rng, it->second.size())];
  Neighbor nb{f, t, it->first};
  nb.forest.trees[t] = moves[t][pick].result;
  return nb;
}

// Variables a searched tree may start from under each model.
inline std::vector<std::size_t> seed_variables(StructureModel model, const std::vector<PredictorKind>& kinds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const bool ext = kinds[i] == PredictorKind::external;
    switch (model) {
      case StructureModel::unconstrained: out.push_back(i); break;
      case StructureModel::model3: if (ext) out.push_back(i); break;
      default: if (!ext) out.push_back(i); break;
    }
  }
  return out;
}

// s random single-leaf trees; under model 1 every external factor is
// appended as a frozen single-leaf term.
inline Forest initial_forest(std::size_t s, StructureModel model, const std::vector<PredictorKind>& kinds, Rng& rng) {
  const auto vars = seed_variables(model, kinds);
  if (vars.empty()) raise(ErrorKind::parameter, "logicreg", std::string("no predictors allowed under ") + to_string(model));
  if (s == 0) raise(ErrorKind::parameter, "logicreg", "tree count s must be at least 1");
  Forest f;
  f.model = model;
  for (std::size_t v = 0; v < s; ++v) {
    f.trees.push_back(ExprTree::leaf(vars[uniform_index(rng, vars.size())]));
    f.frozen.push_back(false);
  }
  if (model == StructureModel::model1) {
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      if (kinds[i] != PredictorKind::external) continue;
      f.trees.push_back(ExprTree::leaf(i));
      f.frozen.push_back(true);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Simulated annealing over forests, returning the best forest visited.

struct CoolingSchedule {
  enum class Kind { geometric, descent };
  Kind kind = Kind::geometric;
  std::optional<double> initial_temperature;  // estimated from probe forests when unset
  double final_ratio = 1000.0;                // T_final = T_0 / final_ratio
  std::size_t steps = 5000;
  std::size_t probe_forests = 20;
};

struct AnnealOptions {
  std::size_t trees = 3;
  std::size_t r_max = 8;
  StructureModel model = StructureModel::unconstrained;
  CoolingSchedule schedule;
  std::size_t restarts = 1;
  // Refit beta on every training complement when scoring a forest. When
  // false, beta is fitted once on all rows: a cheaper approximation.
  bool refit_per_fold = true;
  BetaOptions beta;
  std::optional<Forest> initial;
};

struct AnnealStep {
  std::size_t step = 0;
  double temperature = 0.0;
  double current = 0.0;
  double proposed = 0.0;
  double best = 0.0;
  bool accepted = false;
};

struct AnnealResult {
  FittedForest best;  // refitted on all rows
  double best_error = 0.0;
  CvError best_cv;
  std::size_t restart = 0;
  std::vector<AnnealStep> trace;
  double initial_temperature = 0.0;
  std::size_t evaluations = 0;
};

// Normalised prediction error of a forest: the K-fold balanced error of the
// forest's logistic classifier.
inline CvError forest_error(const Forest& f, const Dataset& ds, const FoldPlan& plan, const BetaOptions& opt,
                            bool refit_per_fold) {
  if (refit_per_fold) return cv_error(forest_trainer(f, opt), ds, plan, 0);
  const PredictionFn fixed = as_prediction_fn(fit_beta(f, ds, all_rows(ds), opt));
  TrainedModel reuse = [&fixed](const Dataset&, const Subsample&, std::uint64_t) { return fixed; };
  return cv_error(reuse, ds, plan, 0);
}

inline void check_schedule(const CoolingSchedule& s) {
  if (s.steps == 0) raise(ErrorKind::parameter, "logicreg", "schedule needs at least one step");
  if (s.kind == CoolingSchedule::Kind::geometric) {
    if (s.initial_temperature && !(*s.initial_temperature > 0.0))
      raise(ErrorKind::parameter, "logicreg", "geometric schedule needs a positive initial temperature");
    if (!(s.final_ratio > 0.0)) raise(ErrorKind::parameter, "logicreg", "final_ratio must be positive");
  }
}

namespace detail {

class ForestScorer {
 public:
  ForestScorer(const Dataset& ds, const FoldPlan& plan, const AnnealOptions& opt) : ds_(ds), plan_(plan), opt_(opt) {}

  const CvError& operator()(const Forest& f) {
    const std::string key = f.key();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ++evaluations_;
    return cache_.emplace(key, forest_error(f, ds_, plan_, opt_.beta, opt_.refit_per_fold)).first->second;
  }
  std::size_t evaluations() const { return evaluations_; }

 private:
  const Dataset& ds_;
  const FoldPlan& plan_;
  const AnnealOptions& opt_;
  std::unordered_map<std::string, CvError> cache_;
  std::size_t evaluations_ = 0;
};

struct ChainResult {
  Forest best;
  CvError best_cv;
  std::vector<AnnealStep> trace;
  double t0 = 0.0;
  std::size_t evaluations = 0;
};

inline ChainResult run_chain(const Dataset& ds, const FoldPlan& plan, const AnnealOptions& opt, std::uint64_t seed) {
  ForestScorer score(ds, plan, opt);
  Rng rng = make_rng(seed);
  const auto& kinds = ds.kinds();

  double t0 = 0.0;
  const auto& sched = opt.schedule;
  if (sched.kind == CoolingSchedule::Kind::geometric) {
    if (sched.initial_temperature) {
      t0 = *sched.initial_temperature;
    } else {
      // Spread of the objective over random forests, each a short random walk.
      Rng probe = make_rng(derive_seed(seed, stream::anneal_probe));
      std::vector<double> errs;
      for (std::size_t k = 0; k < std::max<std::size_t>(sched.probe_forests, 2); ++k) {
        Forest f = initial_forest(opt.trees, opt.model, kinds, probe);
        const std::size_t walk = uniform_index(probe, 2 * opt.r_max + 1);
        for (std::size_t w = 0; w < walk; ++w) f = neighbors(f, kinds, opt.r_max, probe).forest;
        errs.push_back(score(f).value);
      }
      double mean = 0.0;
      for (double e : errs) mean += e;
      mean /= static_cast<double>(errs.size());
      double var = 0.0;
      for (double e : errs) var += (e - mean) * (e - mean);
      t0 = std::sqrt(var / static_cast<double>(errs.size() - 1));
      if (!(t0 > 0.0)) t0 = 0.01;  // all probes tied
    }
  }
  const double gamma = sched.steps > 1 ? std::pow(1.0 / sched.final_ratio, 1.0 / static_cast<double>(sched.steps - 1)) : 1.0;

  Forest current = opt.initial ? *opt.initial : initial_forest(opt.trees, opt.model, kinds, rng);
  if (!satisfies(current, kinds, opt.r_max))
    raise(ErrorKind::parameter, "logicreg", "initial forest violates the structure model or complexity bound");
  CvError current_cv = score(current);
  ChainResult out{current, current_cv, {}, t0, 0};
  out.trace.reserve(sched.steps);
  double temperature = t0;
  for (std::size_t step = 0; step < sched.steps; ++step) {
    const Neighbor nb = neighbors(current, kinds, opt.r_max, rng);
    const CvError& prop = score(nb.forest);
    const double delta = prop.value - current_cv.value;
    bool accept = delta <= 0.0;
    if (!accept && sched.kind == CoolingSchedule::Kind::geometric) accept = uniform01(rng) < std::exp(-delta / temperature);
    if (accept) {
      current = nb.forest;
      current_cv = prop;
      if (current_cv.value < out.best_cv.value) {
        out.best = current;
        out.best_cv = current_cv;
      }
    }
    out.trace.push_back({step, temperature, current_cv.value, prop.value, out.best_cv.value, accept});
    temperature *= gamma;
  }
  out.evaluations = score.evaluations();
  return out;
}

}  // namespace detail

inline AnnealResult anneal(const Dataset& ds, const FoldPlan& plan, const AnnealOptions& opt, std::uint64_t seed,
                           unsigned workers = 1) {
  check_schedule(opt.schedule);
  if (opt.trees == 0 || opt.r_max == 0) raise(ErrorKind::parameter, "logicreg", "need s >= 1 and r_max >= 1");
  if (opt.restarts == 0) raise(ErrorKind::parameter, "logicreg", "restarts must be at least 1");
  check_plan(ds, plan);
  std::vector<detail::ChainResult> chains(opt.restarts);
  parallel_for(opt.restarts, workers, [&](std::size_t r) {
    chains[r] = detail::run_chain(ds, plan, opt, derive_seed(seed, stream::anneal_restart, r));
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < chains.size(); ++r)
    if (chains[r].best_cv.value < chains[best].best_cv.value) best = r;
  AnnealResult res;
  res.restart = best;
  res.best_cv = chains[best].best_cv;
  res.best_error = chains[best].best_cv.value;
  res.best = fit_beta(chains[best].best, ds, all_rows(ds), opt.beta);
  res.best.cv = chains[best].best_cv;
  res.initial_temperature = chains[best].t0;
  res.trace = std::move(chains[best].trace);
  for (const auto& c : chains) res.evaluations += c.evaluations;
  return res;
}

}  // namespace snpassoc
