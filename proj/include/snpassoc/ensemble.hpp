#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "snpassoc/cart.hpp"
#include "snpassoc/dataset.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/parallel.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

// ---------------------------------------------------------------------------
// Random forest: bagged CARTs.

// max([N ln N], 1000).
inline std::size_t default_rf_tree_count(std::size_t N) {
  const double v = N > 0 ? std::floor(static_cast<double>(N) * std::log(static_cast<double>(N))) : 0.0;
  return std::max<std::size_t>(static_cast<std::size_t>(v), 1000);
}

// Same formula with a base-10 logarithm.
inline std::size_t default_rf_tree_count_log10(std::size_t N) {
  const double v = N > 0 ? std::floor(static_cast<double>(N) * std::log10(static_cast<double>(N))) : 0.0;
  return std::max<std::size_t>(static_cast<std::size_t>(v), 1000);
}

inline TreeConfig default_forest_tree_config() { return TreeConfig{32, 5, SplitCriterion::summed, std::nullopt}; }

struct RfConfig {
  std::optional<std::size_t> trees;  // B; defaults to max([N ln N], 1000)
  TreeConfig tree = default_forest_tree_config();
};

struct RfModel {
  std::vector<ClassTree> trees;
  std::vector<Subsample> bootstraps;
  double threshold = 0.5;  // P_S(Y=1) at fit time
  std::size_t resampled = 0;

  std::size_t size() const noexcept { return trees.size(); }
};

// With-replacement resample of S holding both classes; one redraw, then error.
inline Subsample bootstrap_sample(const Dataset& ds, const Subsample& s, std::uint64_t seed, std::uint64_t retry_seed,
                                  bool* retried = nullptr) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    Rng rng = make_rng(attempt == 0 ? seed : retry_seed);
    Subsample b(s.size());
    for (auto& j : b) j = s[uniform_index(rng, s.size())];
    const ClassCounts c = count_classes(ds, b);
    if (c.cases > 0 && c.controls > 0) {
      if (retried) *retried = attempt > 0;
      return b;
    }
  }
  raise(ErrorKind::degenerate, "ensemble", "bootstrap sample holds a single class after one redraw");
}

inline RfModel fit_rf(const Dataset& ds, const Subsample& s, const RfConfig& cfg, std::uint64_t seed,
                      unsigned workers = 1) {
  check_subsample(ds, s, "ensemble");
  const ClassCounts c = require_both_classes(ds, s, "ensemble");
  check_tree_config(cfg.tree);
  const std::size_t B = cfg.trees.value_or(default_rf_tree_count(s.size()));
  if (B == 0) raise(ErrorKind::parameter, "ensemble", "tree count B must be at least 1");
  RfModel m;
  m.threshold = static_cast<double>(c.cases) / static_cast<double>(s.size());
  m.trees.resize(B);
  m.bootstraps.resize(B);
  std::vector<char> retried(B, 0);
  parallel_for(B, workers, [&](std::size_t b) {
    bool r = false;
    m.bootstraps[b] = bootstrap_sample(ds, s, derive_seed(seed, stream::bootstrap, b),
                                       derive_seed(seed, stream::bootstrap_retry, b), &r);
    retried[b] = r;
    m.trees[b] = grow_tree(ds, m.bootstraps[b], cfg.tree, derive_seed(seed, stream::feature_subsample, b));
  });
  for (char r : retried) m.resampled += static_cast<std::size_t>(r);
  return m;
}

// (B^-1 sum_b f_b(x) + 1) / 2.
inline double rf_prob(const RfModel& m, RowView x) {
  long votes = 0;
  for (const auto& t : m.trees) votes += t.predict(x);
  return (static_cast<double>(votes) / static_cast<double>(m.trees.size()) + 1.0) / 2.0;
}

inline Label rf_predict(const RfModel& m, RowView x) { return rf_prob(m, x) > m.threshold ? kCase : kControl; }

inline PredictionFn as_prediction_fn(RfModel m) {
  auto shared = std::make_shared<const RfModel>(std::move(m));
  return PredictionFn([shared](RowView x) { return rf_predict(*shared, x); },
                      "random forest of " + std::to_string(shared->size()) + " trees");
}

inline TrainedModel rf_trainer(RfConfig cfg) {
  return [cfg](const Dataset& ds, const Subsample& s, std::uint64_t seed) {
    return as_prediction_fn(fit_rf(ds, s, cfg, seed));
  };
}

// ---------------------------------------------------------------------------
// Stochastic gradient boosting.

inline constexpr double kLogOddsClamp = 30.0;

struct SgbConfig {
  std::size_t leaves = 4;    // D
  std::size_t stages = 500;  // M
  double rho = 0.1;          // memory relaxation
  double eta = 0.5;          // subsample fraction
  std::size_t min_node = 5;
  SplitCriterion criterion = SplitCriterion::summed;
  // Leaf weights from the eta-subsample only instead of all of S.
  bool subsample_weights = false;
};

struct SgbStage {
  ClassTree tree;
  std::vector<double> weights;  // w_d, by leaf id
  Subsample subsample;
};

struct SgbModel {
  double f0 = 0.0;
  std::vector<SgbStage> stages;
  SgbConfig config;
  std::vector<double> stage_loss;  // full-sample logistic loss after each stage
  std::size_t clamp_events = 0;

  std::size_t size() const noexcept { return stages.size(); }
};

// Ybar = 2Y / (1 + exp(2Y f)).
inline double pseudo_response(Label y, double f) { return 2.0 * y / (1.0 + std::exp(2.0 * y * f)); }

// Newton weight sum(Ybar) / sum(|Ybar|(2 - |Ybar|)); 0 when the denominator vanishes.
inline double leaf_weight(double numerator, double denominator) {
  return denominator > 0.0 ? numerator / denominator : 0.0;
}

// The log-odds of p_SGB is 2f; keeping it within +-30 keeps p_SGB strictly
// inside (0,1) in double precision.
inline double clamp_log_odds(double f, std::size_t* events = nullptr) {
  const double limit = kLogOddsClamp / 2.0;
  if (f > limit || f < -limit) {
    if (events) ++*events;
    return std::clamp(f, -limit, limit);
  }
  return f;
}

// Mean of log(1 + exp(-2 Y f)) over the rows.
inline double logistic_loss(const Dataset& ds, const Subsample& s, const std::vector<double>& f) {
  CompensatedSum sum;
  for (std::size_t p = 0; p < s.size(); ++p) {
    const double t = -2.0 * ds.label(s[p]) * f[p];
    sum.add(t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)));
  }
  return sum.value() / static_cast<double>(s.size());
}

inline void check_sgb_config(const SgbConfig& cfg, std::size_t rows) {
  if (cfg.leaves == 0) raise(ErrorKind::parameter, "ensemble", "SGB needs D >= 1 leaves");
  if (cfg.stages == 0) raise(ErrorKind::parameter, "ensemble", "SGB needs M >= 1 stages");
  if (!(cfg.rho > 0.0 && cfg.rho <= 1.0)) raise(ErrorKind::parameter, "ensemble", "rho must lie in (0,1]");
  if (!(cfg.eta > 0.0 && cfg.eta <= 1.0)) raise(ErrorKind::parameter, "ensemble", "eta must lie in (0,1]");
  const auto m = static_cast<std::size_t>(std::floor(cfg.eta * static_cast<double>(rows)));
  if (m < 2 * cfg.leaves)
    raise(ErrorKind::precondition, "ensemble",
          "subsample [eta #S] = " + std::to_string(m) + " is smaller than 2D = " + std::to_string(2 * cfg.leaves));
}

inline SgbModel fit_sgb(const Dataset& ds, const Subsample& s, const SgbConfig& cfg, std::uint64_t seed) {
  check_subsample(ds, s, "ensemble");
  const ClassCounts c = require_both_classes(ds, s, "ensemble");
  check_sgb_config(cfg, s.size());
  SgbModel m;
  m.config = cfg;
  m.f0 = 0.5 * std::log(static_cast<double>(c.cases) / static_cast<double>(c.controls));
  std::vector<double> f(s.size(), m.f0);
  std::vector<double> ybar(s.size());
  const auto sub_size = static_cast<std::size_t>(std::floor(cfg.eta * static_cast<double>(s.size())));
  const TreeConfig tcfg{cfg.leaves, cfg.min_node, cfg.criterion, std::nullopt};
  Rng rng = make_rng(derive_seed(seed, stream::sgb_subsample));
  std::vector<std::size_t> order(s.size());
  m.stages.reserve(cfg.stages);
  for (std::size_t stage = 0; stage < cfg.stages; ++stage) {
    for (std::size_t p = 0; p < s.size(); ++p) ybar[p] = pseudo_response(ds.label(s[p]), f[p]);

    for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
    fisher_yates(std::span<std::size_t>(order), rng);
    order.resize(sub_size);
    std::sort(order.begin(), order.end());
    SgbStage st;
    std::vector<Label> labels(sub_size);
    std::vector<double> weights(sub_size);
    for (std::size_t q = 0; q < sub_size; ++q) {
      st.subsample.push_back(s[order[q]]);
      labels[q] = ybar[order[q]] > 0 ? kCase : kControl;
      weights[q] = std::abs(ybar[order[q]]);
    }
    st.tree = grow_tree_weighted(ds, st.subsample, labels, weights, tcfg);

    const std::size_t D = st.tree.leaf_count();
    std::vector<double> num(D, 0.0), den(D, 0.0);
    std::vector<std::size_t> leaf(s.size());
    for (std::size_t p = 0; p < s.size(); ++p) leaf[p] = st.tree.leaf_of(ds.row(s[p]));
    auto accumulate = [&](std::size_t p) {
      const double a = std::abs(ybar[p]);
      num[leaf[p]] += ybar[p];
      den[leaf[p]] += a * (2.0 - a);
    };
    if (cfg.subsample_weights) {
      for (std::size_t q = 0; q < sub_size; ++q) accumulate(order[q]);
    } else {
      for (std::size_t p = 0; p < s.size(); ++p) accumulate(p);
    }
    st.weights.resize(D);
    for (std::size_t d = 0; d < D; ++d) st.weights[d] = leaf_weight(num[d], den[d]);
    for (std::size_t p = 0; p < s.size(); ++p)
      f[p] = clamp_log_odds(f[p] + cfg.rho * st.weights[leaf[p]], &m.clamp_events);
    m.stage_loss.push_back(logistic_loss(ds, s, f));
    order.resize(s.size());
    m.stages.push_back(std::move(st));
  }
  return m;
}

// f_M(x), recomputed stage by stage with the same clamp as during fitting.
inline double sgb_log_odds(const SgbModel& m, RowView x) {
  double f = m.f0;
  for (const auto& st : m.stages) f = clamp_log_odds(f + m.config.rho * st.weights[st.tree.leaf_of(x)]);
  return f;
}

// 1 / (1 + exp(-2 f_M(x))).
inline double sgb_prob(const SgbModel& m, RowView x) { return 1.0 / (1.0 + std::exp(-2.0 * sgb_log_odds(m, x))); }

inline Label sgb_predict(const SgbModel& m, RowView x, double threshold) {
  return sgb_prob(m, x) > threshold ? kCase : kControl;
}

inline PredictionFn as_prediction_fn(SgbModel m, double threshold) {
  auto shared = std::make_shared<const SgbModel>(std::move(m));
  return PredictionFn([shared, threshold](RowView x) { return sgb_predict(*shared, x, threshold); },
                      "boosted trees, " + std::to_string(shared->size()) + " stages");
}

// Thresholded at the training prevalence P_S(Y=1).
inline TrainedModel sgb_trainer(SgbConfig cfg) {
  return [cfg](const Dataset& ds, const Subsample& s, std::uint64_t seed) {
    const double prevalence = case_fraction(ds, s);
    return as_prediction_fn(fit_sgb(ds, s, cfg, seed), prevalence);
  };
}

// ---------------------------------------------------------------------------
// Conditional variable importance.

struct ChiSquareTest {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

// Independence of two ternary columns over rows S. Empty rows and columns of
// the 3x3 table are dropped and the degrees of freedom reduced to match.
inline ChiSquareTest chi_square_independence(const Dataset& ds, const Subsample& s, std::size_t a, std::size_t b) {
  double table[3][3] = {};
  for (std::size_t j : s) table[ds.at(j, a)][ds.at(j, b)] += 1.0;
  double row[3] = {}, col[3] = {}, n = 0.0;
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v) {
      row[u] += table[u][v];
      col[v] += table[u][v];
      n += table[u][v];
    }
  std::size_t r = 0, c = 0;
  for (int u = 0; u < 3; ++u) r += row[u] > 0;
  for (int v = 0; v < 3; ++v) c += col[v] > 0;
  ChiSquareTest t;
  if (r < 2 || c < 2) return t;
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v) {
      if (row[u] == 0 || col[v] == 0) continue;
      const double e = row[u] * col[v] / n;
      t.statistic += (table[u][v] - e) * (table[u][v] - e) / e;
    }
  t.df = (r - 1) * (c - 1);
  const boost::math::chi_squared dist(static_cast<double>(t.df));
  t.p_value = boost::math::cdf(boost::math::complement(dist, t.statistic));
  return t;
}

struct ConditioningSet {
  std::vector<std::size_t> peers;  // Z_i
  bool fallback = false;           // reduced to the single most dependent peer
  std::vector<std::vector<std::size_t>> strata;  // rows grouped by Z_i value
};

inline std::vector<std::vector<std::size_t>> strata_of(const Dataset& ds, const std::vector<std::size_t>& peers) {
  std::map<std::vector<Genotype>, std::vector<std::size_t>> groups;
  std::vector<Genotype> key(peers.size());
  for (std::size_t j = 0; j < ds.rows(); ++j) {
    for (std::size_t k = 0; k < peers.size(); ++k) key[k] = ds.at(j, peers[k]);
    groups[key].push_back(j);
  }
  std::vector<std::vector<std::size_t>> out;
  out.reserve(groups.size());
  for (auto& [k, rows] : groups) out.push_back(std::move(rows));
  return out;
}

inline ConditioningSet conditioning_set(const Dataset& ds, std::size_t i, double level) {
  ConditioningSet z;
  const Subsample all = all_rows(ds);
  std::optional<std::pair<double, std::size_t>> strongest;
  for (std::size_t k = 0; k < ds.cols(); ++k) {
    if (k == i) continue;
    const ChiSquareTest t = chi_square_independence(ds, all, i, k);
    if (t.df > 0 && t.p_value < level) {
      z.peers.push_back(k);
      if (!strongest || t.p_value < strongest->first) strongest = {t.p_value, k};
    }
  }
  z.strata = strata_of(ds, z.peers);
  if (z.strata.size() > ds.rows() / 2 && strongest) {
    z.peers = {strongest->second};
    z.fallback = true;
    z.strata = strata_of(ds, z.peers);
  }
  return z;
}

// Column i with values permuted inside each stratum.
inline std::vector<Genotype> permute_within_strata(const Dataset& ds, std::size_t i,
                                                   const std::vector<std::vector<std::size_t>>& strata, Rng& rng) {
  std::vector<Genotype> col(ds.rows());
  for (std::size_t j = 0; j < ds.rows(); ++j) col[j] = ds.at(j, i);
  for (const auto& rows : strata) {
    std::vector<std::size_t> src = rows;
    fisher_yates(std::span<std::size_t>(src), rng);
    for (std::size_t k = 0; k < rows.size(); ++k) col[rows[k]] = ds.at(src[k], i);
  }
  return col;
}

struct CvimConfig {
  std::size_t replicates = 100;  // B
  double level = 0.05;           // chi-square significance for Z_i
  TreeConfig tree = default_forest_tree_config();
};

struct CvimEntry {
  std::size_t column = 0;
  double value = 0.0;   // mean over used replicates
  double spread = 0.0;  // standard deviation over used replicates
  std::vector<std::size_t> conditioning;
  bool fallback = false;
  std::size_t strata = 0;
};

struct CvimReport {
  std::vector<CvimEntry> entries;  // column order
  std::size_t B = 0;
  std::size_t used = 0;     // replicates with a nonempty out-of-bag set
  std::size_t skipped = 0;
  std::size_t resampled = 0;

  // Columns by decreasing importance; ties keep column order.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx(entries.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return entries[a].value > entries[b].value; });
    return idx;
  }
};

inline CvimReport cvim(const Dataset& ds, const CvimConfig& cfg, std::uint64_t seed, unsigned workers = 1) {
  const Subsample all = all_rows(ds);
  require_both_classes(ds, all, "ensemble");
  check_tree_config(cfg.tree);
  if (cfg.replicates == 0) raise(ErrorKind::parameter, "ensemble", "CVIM needs B >= 1 replicates");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) raise(ErrorKind::parameter, "ensemble", "level must lie in (0,1)");
  const std::size_t n = ds.cols();
  std::vector<ConditioningSet> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = conditioning_set(ds, i, cfg.level);

  const std::size_t B = cfg.replicates;
  std::vector<std::vector<double>> diff(B);
  std::vector<char> retried(B, 0);
  parallel_for(B, workers, [&](std::size_t b) {
    const std::uint64_t rs = derive_seed(seed, stream::cvim_replicate, b);
    bool r = false;
    const Subsample boot =
        bootstrap_sample(ds, all, derive_seed(rs, stream::bootstrap), derive_seed(rs, stream::bootstrap_retry), &r);
    retried[b] = r;
    std::vector<char> in_bag(ds.rows(), 0);
    for (std::size_t j : boot) in_bag[j] = 1;
    Subsample oob;
    for (std::size_t j = 0; j < ds.rows(); ++j)
      if (!in_bag[j]) oob.push_back(j);
    if (oob.empty()) return;
    const ClassTree tree = grow_tree(ds, boot, cfg.tree, derive_seed(rs, stream::feature_subsample));
    std::size_t base = 0;
    for (std::size_t j : oob) base += tree.predict(ds.row(j)) == ds.label(j);
    Rng rng = make_rng(derive_seed(rs, stream::column_permutation));
    std::vector<Genotype> x;
    diff[b].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto col = permute_within_strata(ds, i, z[i].strata, rng);
      std::size_t hit = 0;
      for (std::size_t j : oob) {
        const auto row = ds.row(j);
        x.assign(row.begin(), row.end());
        x[i] = col[j];
        hit += tree.predict(x) == ds.label(j);
      }
      diff[b][i] = (static_cast<double>(base) - static_cast<double>(hit)) / static_cast<double>(oob.size());
    }
  });

  CvimReport rep;
  rep.B = B;
  for (char r : retried) rep.resampled += static_cast<std::size_t>(r);
  for (const auto& d : diff) (d.empty() ? rep.skipped : rep.used)++;
  if (rep.used == 0) raise(ErrorKind::degenerate, "ensemble", "every CVIM replicate had an empty out-of-bag set");
  for (std::size_t i = 0; i < n; ++i) {
    CvimEntry e;
    e.column = i;
    e.conditioning = z[i].peers;
    e.fallback = z[i].fallback;
    e.strata = z[i].strata.size();
    CompensatedSum sum;
    for (const auto& d : diff)
      if (!d.empty()) sum.add(d[i]);
    e.value = sum.value() / static_cast<double>(rep.used);
    double var = 0.0;
    for (const auto& d : diff)
      if (!d.empty()) var += (d[i] - e.value) * (d[i] - e.value);
    e.spread = rep.used > 1 ? std::sqrt(var / static_cast<double>(rep.used - 1)) : 0.0;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

}  // namespace snpassoc
