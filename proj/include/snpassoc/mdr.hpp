#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "snpassoc/dataset.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/parallel.hpp"

namespace snpassoc {

// Sorted, distinct predictor indices (k_1 < ... < k_r).
struct FactorCombo {
  std::vector<std::size_t> indices;

  std::size_t order() const noexcept { return indices.size(); }

  std::string to_string(const std::vector<std::string>& names) const {
    std::string out;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (i) out += ",";
      out += indices[i] < names.size() ? names[indices[i]] : "x" + std::to_string(indices[i] + 1);
    }
    return out;
  }

  friend bool operator==(const FactorCombo&, const FactorCombo&) = default;
  friend auto operator<=>(const FactorCombo&, const FactorCombo&) = default;
};

inline void check_combo(const FactorCombo& c, std::size_t n) {
  if (c.indices.empty()) raise(ErrorKind::parameter, "mdr", "combination is empty");
  for (std::size_t i = 0; i < c.indices.size(); ++i) {
    if (c.indices[i] >= n) raise(ErrorKind::parameter, "mdr", "combination index out of range");
    if (i && c.indices[i - 1] >= c.indices[i])
      raise(ErrorKind::parameter, "mdr", "combination indices must be sorted and distinct");
  }
}

inline std::size_t pow3(std::size_t r) {
  std::size_t v = 1;
  while (r--) v *= 3;
  return v;
}

// Index of the multilocus cell of x restricted to the combination (base 3).
inline std::size_t cell_index(const FactorCombo& c, RowView x) {
  std::size_t idx = 0;
  for (std::size_t k : c.indices) idx = idx * 3 + x[k];
  return idx;
}

enum class MdrVariant { classic, independent_rule };

inline const char* to_string(MdrVariant v) { return v == MdrVariant::classic ? "mdr" : "mdrir"; }

// High/low-risk labelling of the 3^r cells of a combination.
class MdrModel {
 public:
  MdrModel(FactorCombo combo, std::vector<Label> rule, double threshold, MdrVariant variant)
      : combo_(std::move(combo)), rule_(std::move(rule)), threshold_(threshold), variant_(variant) {}

  const FactorCombo& combo() const noexcept { return combo_; }
  const std::vector<Label>& rule() const noexcept { return rule_; }
  double threshold() const noexcept { return threshold_; }
  MdrVariant variant() const noexcept { return variant_; }

  Label predict(RowView x) const { return rule_[cell_index(combo_, x)]; }

  PredictionFn as_prediction_fn() const {
    auto self = std::make_shared<const MdrModel>(*this);
    return PredictionFn([self](RowView x) { return self->predict(x); },
                        std::string(snpassoc::to_string(variant_)) + " rule");
  }

 private:
  FactorCombo combo_;
  std::vector<Label> rule_;
  double threshold_;
  MdrVariant variant_;
};

// Labels a cell +1 iff P_S(Y=1 | X in C(x)) > P_S(Y=1). The comparison
// c1/c > n1/|S| is evaluated as c1*|S| > n1*c in integers, so equal rates
// are exact ties (-1). Empty cells are -1.
inline MdrModel fit_mdr(const Dataset& ds, const Subsample& s, const FactorCombo& combo) {
  check_combo(combo, ds.cols());
  check_subsample(ds, s, "mdr");
  const ClassCounts total = require_both_classes(ds, s, "mdr");
  const std::size_t cells = pow3(combo.order());
  std::vector<std::size_t> hits(cells, 0), cases(cells, 0);
  for (std::size_t j : s) {
    const std::size_t c = cell_index(combo, ds.row(j));
    ++hits[c];
    if (ds.label(j) == kCase) ++cases[c];
  }
  std::vector<Label> rule(cells, kControl);
  const auto n = static_cast<unsigned __int128>(s.size());
  for (std::size_t c = 0; c < cells; ++c) {
    if (hits[c] == 0) continue;
    if (static_cast<unsigned __int128>(cases[c]) * n > static_cast<unsigned __int128>(total.cases) * hits[c])
      rule[c] = kCase;
  }
  return MdrModel(combo, std::move(rule), static_cast<double>(total.cases) / static_cast<double>(s.size()),
                  MdrVariant::classic);
}

struct MdrirOptions {
  // Add-one smoothing of the per-factor conditionals; off by default.
  bool add_one_smoothing = false;
};

// Independent rule: cell x is +1 iff
//   prod_i P_S(X_{k_i}=x_i | Y=1) > prod_i P_S(X_{k_i}=x_i | Y=-1).
// With counts a_i (cases) and b_i (controls) and class sizes n1, n0 this is
//   prod a_i * n0^r > prod b_i * n1^r,
// compared exactly in 128-bit integers while the products fit and in log
// space otherwise.
inline MdrModel fit_mdrir(const Dataset& ds, const Subsample& s, const FactorCombo& combo,
                          const MdrirOptions& opt = {}) {
  check_combo(combo, ds.cols());
  check_subsample(ds, s, "mdr");
  const ClassCounts total = require_both_classes(ds, s, "mdr");
  const std::size_t r = combo.order();
  // counts[i][level][class]: class 0 = case, 1 = control
  std::vector<std::array<std::array<std::uint64_t, 2>, 3>> counts(r);
  for (std::size_t j : s) {
    const int cls = ds.label(j) == kCase ? 0 : 1;
    for (std::size_t i = 0; i < r; ++i) ++counts[i][ds.at(j, combo.indices[i])][cls];
  }
  const std::uint64_t add = opt.add_one_smoothing ? 1 : 0;
  const std::uint64_t n1 = total.cases + 3 * add;
  const std::uint64_t n0 = total.controls + 3 * add;
  using u128 = unsigned __int128;
  const u128 limit = ~u128{0};
  const std::size_t cells = pow3(r);
  std::vector<Label> rule(cells, kControl);
  std::vector<Genotype> levels(r);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rest = c;
    for (std::size_t i = r; i-- > 0;) {
      levels[i] = static_cast<Genotype>(rest % 3);
      rest /= 3;
    }
    u128 lhs = 1, rhs = 1;
    bool exact = true;
    auto mul = [&](u128& acc, std::uint64_t v) {
      if (v != 0 && acc > limit / v) exact = false;
      else acc *= v;
    };
    for (std::size_t i = 0; i < r && exact; ++i) {
      mul(lhs, counts[i][levels[i]][0] + add);
      mul(lhs, n0);
      mul(rhs, counts[i][levels[i]][1] + add);
      mul(rhs, n1);
    }
    bool high;
    if (exact) {
      high = lhs > rhs;
    } else {
      long double l = 0, q = 0;
      bool lzero = false, rzero = false;
      for (std::size_t i = 0; i < r; ++i) {
        const auto a = counts[i][levels[i]][0] + add, b = counts[i][levels[i]][1] + add;
        if (a == 0) lzero = true;
        else l += std::log(static_cast<long double>(a)) - std::log(static_cast<long double>(n1));
        if (b == 0) rzero = true;
        else q += std::log(static_cast<long double>(b)) - std::log(static_cast<long double>(n0));
      }
      high = !lzero && (rzero || l > q);
    }
    if (high) rule[c] = kCase;
  }
  return MdrModel(combo, std::move(rule), static_cast<double>(total.cases) / static_cast<double>(s.size()),
                  MdrVariant::independent_rule);
}

inline TrainedModel mdr_trainer(FactorCombo combo, MdrVariant variant, MdrirOptions opt = {}) {
  return [combo = std::move(combo), variant, opt](const Dataset& ds, const Subsample& s, std::uint64_t) {
    return variant == MdrVariant::classic ? fit_mdr(ds, s, combo).as_prediction_fn()
                                          : fit_mdrir(ds, s, combo, opt).as_prediction_fn();
  };
}

// ---------------------------------------------------------------------------
// Exhaustive combination search

struct MdrSearchOptions {
  std::size_t r_min = 1;
  std::size_t r_max = 4;
  MdrVariant variant = MdrVariant::classic;
  std::optional<std::vector<std::size_t>> restrict_to;  // column subset to draw from
  MdrirOptions mdrir;
  double max_cell_updates = 1e8;  // combos x folds x rows
};

struct RankedCombo {
  FactorCombo combo;
  CvError error;
};

struct MdrSearchReport {
  std::vector<RankedCombo> ranked;  // best first
  std::size_t search_space = 0;
  double elapsed_seconds = 0.0;
};

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  double v = 1.0;
  for (std::size_t i = 1; i <= k; ++i) v = v * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(v);
}

// All k-subsets of `pool` (sorted) in lexicographic order.
inline std::vector<FactorCombo> enumerate_combos(const std::vector<std::size_t>& pool, std::size_t r_min,
                                                 std::size_t r_max) {
  std::vector<FactorCombo> out;
  const std::size_t n = pool.size();
  for (std::size_t r = r_min; r <= r_max && r <= n; ++r) {
    std::vector<std::size_t> idx(r);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    while (true) {
      FactorCombo c;
      for (std::size_t i : idx) c.indices.push_back(pool[i]);
      out.push_back(std::move(c));
      std::size_t i = r;
      while (i > 0 && idx[i - 1] == n - r + i - 1) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t k = i; k < r; ++k) idx[k] = idx[k - 1] + 1;
    }
  }
  return out;
}

// Rank key: errors agreeing to 1e-12 count as ties, then lexicographic order
// of the combination decides.
inline std::int64_t error_rank_key(double e) { return std::llround(e * 1e12); }

inline MdrSearchReport mdr_search(const Dataset& ds, const FoldPlan& plan, const MdrSearchOptions& opt,
                                  std::uint64_t seed, unsigned workers = 1) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> pool;
  if (opt.restrict_to) {
    pool = *opt.restrict_to;
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    for (std::size_t i : pool)
      if (i >= ds.cols()) raise(ErrorKind::parameter, "mdr", "restricted column index out of range");
  } else {
    pool.resize(ds.cols());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  if (opt.r_min < 1 || opt.r_min > opt.r_max || opt.r_max > pool.size())
    raise(ErrorKind::parameter, "mdr",
          "orders must satisfy 1 <= r_min <= r_max <= " + std::to_string(pool.size()));
  double combos = 0.0;
  for (std::size_t r = opt.r_min; r <= opt.r_max; ++r) combos += binomial(pool.size(), r);
  const double updates = combos * static_cast<double>(plan.K) * static_cast<double>(ds.rows());
  if (updates > opt.max_cell_updates)
    raise(ErrorKind::parameter, "mdr",
          "search refused: " + std::to_string(static_cast<long long>(combos)) + " combinations x " +
              std::to_string(plan.K) + " folds x " + std::to_string(ds.rows()) +
              " rows exceeds the cap of " + std::to_string(static_cast<long long>(opt.max_cell_updates)) +
              " cell updates");
  check_plan(ds, plan);

  const auto all = enumerate_combos(pool, opt.r_min, opt.r_max);
  MdrSearchReport report;
  report.search_space = all.size();
  report.ranked.resize(all.size());
  parallel_for(all.size(), workers, [&](std::size_t c) {
    report.ranked[c].combo = all[c];
    report.ranked[c].error = cv_error(mdr_trainer(all[c], opt.variant, opt.mdrir), ds, plan, seed);
  });
  std::stable_sort(report.ranked.begin(), report.ranked.end(), [](const RankedCombo& a, const RankedCombo& b) {
    const auto ka = error_rank_key(a.error.value), kb = error_rank_key(b.error.value);
    if (ka != kb) return ka < kb;
    return a.combo < b.combo;
  });
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace snpassoc
