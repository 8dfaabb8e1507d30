#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "snpassoc/dataset.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/parallel.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

struct PermTestResult {
  double observed_error = 0.0;
  std::vector<double> null_errors;  // replicate order
  double p_value = 0.0;
  std::size_t B = 0;
  double accuracy_bound = 0.0;  // 1 / (2 sqrt(B))
  double alpha = 0.05;
  bool reject = false;
  std::size_t resampled_replicates = 0;
};

// Upper bound on |p - p_hat| for B Monte Carlo replicates.
inline double accuracy_bound(std::size_t B) { return 1.0 / (2.0 * std::sqrt(static_cast<double>(B))); }

// Empirical c.d.f. of the null errors evaluated at the observed error.
inline double monte_carlo_p_value(double observed, std::span<const double> null_errors) {
  std::size_t le = 0;
  for (double e : null_errors)
    if (e <= observed) ++le;
  return static_cast<double>(le) / static_cast<double>(null_errors.size());
}

// An error statistic computed from a dataset, e.g. the cross-validated error
// of a model or the best error of a whole combination search.
using ErrorStatistic = std::function<double(const Dataset&, std::uint64_t seed)>;

inline std::vector<Label> permuted_phenotype(const Dataset& ds, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const auto perm = random_permutation(ds.rows(), rng);
  std::vector<Label> y(ds.rows());
  for (std::size_t j = 0; j < ds.rows(); ++j) y[j] = ds.label(perm[j]);
  return y;
}

// Permutation test of independence between X and Y for any error statistic.
// Replicate b re-evaluates the statistic on (X^j, Y^{pi_b(j)}). A replicate
// that hits a degenerate fold layout is redrawn once with a fresh seed.
inline PermTestResult permutation_test_statistic(const ErrorStatistic& statistic, const Dataset& ds,
                                                 std::size_t B, double alpha, std::uint64_t seed,
                                                 unsigned workers = 1) {
  if (B == 0) raise(ErrorKind::parameter, "permtest", "B must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) raise(ErrorKind::parameter, "permtest", "alpha must lie in (0,1)");
  PermTestResult r;
  r.B = B;
  r.alpha = alpha;
  r.accuracy_bound = accuracy_bound(B);
  r.observed_error = statistic(ds, derive_seed(seed, stream::model_training));
  r.null_errors.assign(B, 0.0);
  std::vector<char> retried(B, 0);
  parallel_for(B, workers, [&](std::size_t b) {
    const std::uint64_t model_seed = derive_seed(seed, stream::model_training, b + 1);
    try {
      const Dataset perm = ds.with_phenotype(permuted_phenotype(ds, derive_seed(seed, stream::permutation, b)));
      r.null_errors[b] = statistic(perm, model_seed);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      retried[b] = 1;
      const Dataset perm =
          ds.with_phenotype(permuted_phenotype(ds, derive_seed(seed, stream::permutation_retry, b)));
      try {
        r.null_errors[b] = statistic(perm, model_seed);
      } catch (const Error& again) {
        if (again.kind() != ErrorKind::degenerate) throw;
        raise(ErrorKind::degenerate, "permtest",
              "replicate " + std::to_string(b + 1) + " degenerate after one redraw: " + again.what());
      }
    }
  });
  for (char c : retried) r.resampled_replicates += static_cast<std::size_t>(c);
  r.p_value = monte_carlo_p_value(r.observed_error, r.null_errors);
  r.reject = r.p_value < alpha;
  return r;
}

// The model is retrained on every permuted replicate and scored by cv_error
// over the same fold plan.
inline PermTestResult permutation_test(const TrainedModel& model, const Dataset& ds, const FoldPlan& plan,
                                       std::size_t B, double alpha, std::uint64_t seed,
                                       unsigned workers = 1) {
  check_plan(ds, plan);
  ErrorStatistic stat = [&](const Dataset& d, std::uint64_t s) { return cv_error(model, d, plan, s).value; };
  return permutation_test_statistic(stat, ds, B, alpha, seed, workers);
}

// Error of an already fitted f after randomly rearranging one predictor
// column, averaged over R rearrangements. f is not refitted.
inline double column_permutation_importance(const PredictionFn& f, const Dataset& ds, std::size_t column,
                                            std::size_t R, std::uint64_t seed) {
  if (column >= ds.cols()) raise(ErrorKind::parameter, "permtest", "column index out of range");
  if (R == 0) raise(ErrorKind::parameter, "permtest", "R must be at least 1");
  const Subsample all = all_rows(ds);
  CompensatedSum total;
  std::vector<Genotype> col(ds.rows());
  for (std::size_t r = 0; r < R; ++r) {
    Rng rng = make_rng(derive_seed(seed, stream::column_permutation, r));
    const auto perm = random_permutation(ds.rows(), rng);
    for (std::size_t j = 0; j < ds.rows(); ++j) col[j] = ds.at(perm[j], column);
    total.add(balanced_error_direct(f, ds.with_column(column, col), all));
  }
  return total.value() / static_cast<double>(R);
}

}  // namespace snpassoc
