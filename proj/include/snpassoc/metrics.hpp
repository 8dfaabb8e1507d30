#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snpassoc/common.hpp"
#include "snpassoc/dataset.hpp"
#include "snpassoc/parallel.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

// A prediction function X -> {-1,+1}. Type-erased so every method (MDR rule,
// logic-regression forest, CART, ensembles) can be scored by the same code.
class PredictionFn {
 public:
  using Fn = std::function<Label(RowView)>;

  PredictionFn() = default;
  PredictionFn(Fn fn, std::string description)
      : fn_(std::move(fn)), description_(std::move(description)) {}

  Label operator()(RowView x) const { return fn_(x); }
  const std::string& description() const noexcept { return description_; }
  explicit operator bool() const noexcept { return static_cast<bool>(fn_); }

 private:
  Fn fn_;
  std::string description_;
};

// A prediction algorithm: trains on rows S of a dataset and returns a
// prediction function. Must only read rows in S and be deterministic in seed.
using TrainedModel =
    std::function<PredictionFn(const Dataset&, const Subsample&, std::uint64_t seed)>;

// psi(y) = 1 / (4 P_S(Y=y)).
inline double penalty(const Dataset& ds, const Subsample& s, Label y) {
  check_subsample(ds, s, "metrics");
  const ClassCounts c = require_both_classes(ds, s, "metrics");
  return static_cast<double>(s.size()) / (4.0 * static_cast<double>(c.of(y)));
}

// P_S(Y=1): share of cases in S.
inline double case_fraction(const Dataset& ds, const Subsample& s) {
  check_subsample(ds, s, "metrics");
  return static_cast<double>(count_classes(ds, s).cases) / static_cast<double>(s.size());
}

// P_S(Y=1 | X in C); nullopt when no row of S lies in C.
template <class CellPredicate>
std::optional<double> empirical_set_prob(const Dataset& ds, const Subsample& s,
                                         CellPredicate&& in_cell) {
  std::size_t hits = 0, cases = 0;
  for (std::size_t j : s) {
    if (in_cell(ds.row(j))) {
      ++hits;
      if (ds.label(j) == kCase) ++cases;
    }
  }
  if (hits == 0) return std::nullopt;
  return static_cast<double>(cases) / static_cast<double>(hits);
}

// P_S(Y=1 | X = x).
inline std::optional<double> empirical_cell_prob(const Dataset& ds, const Subsample& s, RowView x) {
  return empirical_set_prob(ds, s, [x](RowView r) { return std::equal(r.begin(), r.end(), x.begin(), x.end()); });
}

// Miss counts of a prediction function on rows S, per true class.
struct MissCounts {
  std::size_t false_negatives = 0;  // cases predicted -1
  std::size_t false_positives = 0;  // controls predicted +1
  ClassCounts classes;
};

inline MissCounts count_misses(const PredictionFn& f, const Dataset& ds, const Subsample& s) {
  MissCounts m;
  for (std::size_t j : s) {
    const Label y = ds.label(j);
    const Label p = f(ds.row(j));
    if (y == kCase) {
      ++m.classes.cases;
      if (p != kCase) ++m.false_negatives;
    } else {
      ++m.classes.controls;
      if (p != kControl) ++m.false_positives;
    }
  }
  return m;
}

// Err(f) = 1/2 P(f=1 | Y=-1) + 1/2 P(f=-1 | Y=1), with empirical rates on S.
inline double balanced_error_direct(const PredictionFn& f, const Dataset& ds, const Subsample& s) {
  check_subsample(ds, s, "metrics");
  require_both_classes(ds, s, "metrics");
  const MissCounts m = count_misses(f, ds, s);
  return 0.5 * static_cast<double>(m.false_positives) / static_cast<double>(m.classes.controls) +
         0.5 * static_cast<double>(m.false_negatives) / static_cast<double>(m.classes.cases);
}

// Conditional case probability of a cell; nullopt means undefined.
using CellProbability = std::function<std::optional<double>(RowView)>;

// f*(x) = +1 iff p(x) > prevalence. Ties and undefined cells give -1.
inline PredictionFn optimal_rule(CellProbability p, double prevalence) {
  if (!(prevalence > 0.0 && prevalence < 1.0))
    raise(ErrorKind::parameter, "metrics", "prevalence must lie in (0,1)");
  return PredictionFn(
      [p = std::move(p), prevalence](RowView x) {
        const auto v = p(x);
        return (v && *v > prevalence) ? kCase : kControl;
      },
      "optimal rule, threshold " + std::to_string(prevalence));
}

// One cell of a fully specified law of (X, Y).
struct LawCell {
  std::vector<Genotype> x;
  double mass = 0.0;       // P(X = x)
  double case_prob = 0.0;  // P(Y = 1 | X = x)
};

inline double prevalence_of(std::span<const LawCell> law) {
  double p = 0.0;
  for (const auto& c : law) p += c.mass * c.case_prob;
  return p;
}

// Theoretical balanced error of f under a finite law.
inline double balanced_error_law(const PredictionFn& f, std::span<const LawCell> law) {
  const double p1 = prevalence_of(law);
  if (!(p1 > 0.0 && p1 < 1.0)) raise(ErrorKind::parameter, "metrics", "law must give both classes positive mass");
  double fp = 0.0, fn = 0.0;
  for (const auto& c : law) {
    if (f(c.x) == kCase) fp += c.mass * (1.0 - c.case_prob);
    else fn += c.mass * c.case_prob;
  }
  return 0.5 * fp / (1.0 - p1) + 0.5 * fn / p1;
}

// ---------------------------------------------------------------------------
// K-fold cross-validated balanced error.

struct FoldMissRates {
  double cases = 0.0;     // share of fold cases predicted -1
  double controls = 0.0;  // share of fold controls predicted +1
};

struct CvError {
  double value = 0.0;
  std::vector<FoldMissRates> per_fold;
  std::size_t K = 0;
};

// Combine per-fold miss rates: 1/2 sum_y (1/K) sum_k rate_{k,y}. Sums run in
// fold order with compensation.
inline double combine_fold_rates(std::span<const FoldMissRates> rates) {
  CompensatedSum cases, controls;
  for (const auto& r : rates) {
    cases.add(r.cases);
    controls.add(r.controls);
  }
  const double K = static_cast<double>(rates.size());
  return 0.5 * (cases.value() / K + controls.value() / K);
}

// Both classes must appear in every fold and in every training complement.
inline void check_plan(const Dataset& ds, const FoldPlan& plan) {
  if (plan.K == 0 || plan.folds.size() != plan.K)
    raise(ErrorKind::parameter, "metrics", "fold plan is empty or inconsistent");
  if (plan.rows() != ds.rows())
    raise(ErrorKind::parameter, "metrics", "fold plan does not cover the dataset rows");
  const ClassCounts total = count_classes(ds, all_rows(ds));
  for (std::size_t k = 0; k < plan.K; ++k) {
    const ClassCounts in_fold = count_classes(ds, plan.folds[k]);
    const std::string fold = "fold " + std::to_string(k + 1) + " of " + std::to_string(plan.K);
    if (in_fold.cases == 0 || in_fold.controls == 0)
      raise(ErrorKind::degenerate, "metrics",
            fold + " has no " + (in_fold.cases == 0 ? "cases" : "controls"));
    if (total.cases == in_fold.cases || total.controls == in_fold.controls)
      raise(ErrorKind::degenerate, "metrics",
            "training complement of " + fold + " has no " +
                (total.cases == in_fold.cases ? "cases" : "controls"));
  }
}

// Train on the complement of each fold, score that fold, average class
// conditional miss rates over folds and then over the two classes.
inline CvError cv_error(const TrainedModel& model, const Dataset& ds, const FoldPlan& plan,
                        std::uint64_t seed, unsigned workers = 1) {
  check_plan(ds, plan);
  std::vector<FoldMissRates> rates(plan.K);
  parallel_for(plan.K, workers, [&](std::size_t k) {
    const Subsample train = plan.complement(k);
    const PredictionFn f = model(ds, train, derive_seed(seed, stream::cv_fold, k));
    const MissCounts m = count_misses(f, ds, plan.folds[k]);
    rates[k].cases = static_cast<double>(m.false_negatives) / static_cast<double>(m.classes.cases);
    rates[k].controls = static_cast<double>(m.false_positives) / static_cast<double>(m.classes.controls);
  });
  CvError out;
  out.K = plan.K;
  out.value = combine_fold_rates(rates);
  out.per_fold = std::move(rates);
  return out;
}

}  // namespace snpassoc
