#pragma once

// Brute-force reference computations used by the tests. Written directly
// from the definitions, sharing nothing with the library beyond plain data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace oracle {

struct Table {
  std::vector<std::vector<int>> x;  // rows of 0/1/2
  std::vector<int> y;               // +1 / -1
  std::size_t n() const { return x.empty() ? 0 : x[0].size(); }
};

// Contiguous folds of size floor(N/K), the last one running to N.
inline std::vector<std::vector<std::size_t>> folds(std::size_t N, std::size_t K) {
  std::vector<std::vector<std::size_t>> out(K);
  const std::size_t q = N / K;
  for (std::size_t j = 0; j < N; ++j) out[std::min(j / q, K - 1)].push_back(j);
  return out;
}

// MDR rule on training rows `train` for predictor subset `cols`: +1 iff the
// cell's case share exceeds the overall case share. Cells keyed by values.
inline int mdr_label(const Table& t, const std::vector<std::size_t>& train, const std::vector<std::size_t>& cols,
                     const std::vector<int>& row) {
  long cases = 0, total = 0, cell_cases = 0, cell_total = 0;
  for (std::size_t j : train) {
    ++total;
    cases += t.y[j] == 1;
    bool same = true;
    for (std::size_t c : cols) same = same && t.x[j][c] == row[c];
    if (same) {
      ++cell_total;
      cell_cases += t.y[j] == 1;
    }
  }
  if (cell_total == 0) return -1;
  // cell_cases / cell_total > cases / total
  return cell_cases * total > cases * cell_total ? 1 : -1;
}

// Independent rule: prod_i P(X_i = x_i | Y=1) > prod_i P(X_i = x_i | Y=-1),
// compared as exact fractions via cross multiplication in long double logs
// only when counts are all positive; zero counts handled separately.
inline int mdrir_label(const Table& t, const std::vector<std::size_t>& train, const std::vector<std::size_t>& cols,
                       const std::vector<int>& row) {
  long n1 = 0, n0 = 0;
  for (std::size_t j : train) (t.y[j] == 1 ? n1 : n0)++;
  // Compare prod a_i / n1 vs prod b_i / n0 with integers (small sizes only).
  long double lhs = 1, rhs = 1;
  for (std::size_t c : cols) {
    long a = 0, b = 0;
    for (std::size_t j : train)
      if (t.x[j][c] == row[c]) (t.y[j] == 1 ? a : b)++;
    lhs *= static_cast<long double>(a) * n0;
    rhs *= static_cast<long double>(b) * n1;
  }
  return lhs > rhs ? 1 : -1;
}

enum class Rule { mdr, mdrir };

// K-fold CV balanced error: 1/2 sum_y 1/K sum_k miss_{k,y} / count_{k,y}.
// nullopt when a fold or its complement misses a class.
inline std::optional<double> cv_error(const Table& t, std::size_t K, const std::vector<std::size_t>& cols, Rule rule) {
  const auto f = folds(t.y.size(), K);
  double case_rate = 0, control_rate = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> train;
    std::set<std::size_t> test(f[k].begin(), f[k].end());
    for (std::size_t j = 0; j < t.y.size(); ++j)
      if (!test.count(j)) train.push_back(j);
    long tc = 0, tk = 0, fc = 0, fk = 0;
    for (std::size_t j : train) (t.y[j] == 1 ? tc : tk)++;
    if (tc == 0 || tk == 0) return std::nullopt;
    long miss_c = 0, miss_k = 0;
    for (std::size_t j : f[k]) {
      const int p = rule == Rule::mdr ? mdr_label(t, train, cols, t.x[j]) : mdrir_label(t, train, cols, t.x[j]);
      if (t.y[j] == 1) {
        ++fc;
        miss_c += p != 1;
      } else {
        ++fk;
        miss_k += p != -1;
      }
    }
    if (fc == 0 || fk == 0) return std::nullopt;
    case_rate += static_cast<double>(miss_c) / static_cast<double>(fc);
    control_rate += static_cast<double>(miss_k) / static_cast<double>(fk);
  }
  return 0.5 * (case_rate / static_cast<double>(K) + control_rate / static_cast<double>(K));
}

// All non-empty subsets of {0..n-1} with at most r_max elements, sorted by
// (error, subset) after scoring.
inline std::vector<std::pair<double, std::vector<std::size_t>>> mdr_ranking(const Table& t, std::size_t K,
                                                                            std::size_t r_max, Rule rule) {
  std::vector<std::pair<double, std::vector<std::size_t>>> out;
  const std::size_t n = t.n();
  for (std::size_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) cols.push_back(i);
    if (cols.size() > r_max) continue;
    const auto e = cv_error(t, K, cols, rule);
    if (!e) return {};
    out.push_back({*e, cols});
  }
  // Errors equal to 1e-12 tie and fall back to the subset order.
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    const double ka = std::round(a.first * 1e12), kb = std::round(b.first * 1e12);
    return ka != kb ? ka < kb : a.second < b.second;
  });
  return out;
}

inline double gini_of(double cases, double total) {
  if (total == 0) return 0;
  const double p = cases / total;
  return 2 * p * (1 - p);
}

struct SplitChoice {
  std::size_t column;
  int threshold;
  double score;
};

// Exhaustive search over (i, t) in column-major, threshold-minor order; a
// candidate needs children of at least max(min_node,1) rows and a sum
// strictly below the parent index.
inline std::optional<SplitChoice> best_split(const Table& t, const std::vector<std::size_t>& rows, std::size_t min_node) {
  double cases = 0;
  for (std::size_t j : rows) cases += t.y[j] == 1;
  const double parent = gini_of(cases, static_cast<double>(rows.size()));
  std::optional<SplitChoice> best;
  for (std::size_t i = 0; i < t.n(); ++i) {
    for (int th = 0; th <= 1; ++th) {
      double pc = 0, pn = 0, mc = 0, mn = 0;
      for (std::size_t j : rows) {
        if (t.x[j][i] <= th) {
          ++pn;
          pc += t.y[j] == 1;
        } else {
          ++mn;
          mc += t.y[j] == 1;
        }
      }
      const double floor = static_cast<double>(std::max<std::size_t>(min_node, 1));
      if (pn < floor || mn < floor) continue;
      const double s = gini_of(pc, pn) + gini_of(mc, mn);
      if (!best || s < best->score) best = SplitChoice{i, th, s};
    }
  }
  if (best && !(best->score < parent - 1e-12)) return std::nullopt;
  return best;
}

// Balanced error of a labelling of law cells: cells (mass, case prob).
inline double law_error(const std::vector<double>& mass, const std::vector<double>& prob, const std::vector<int>& f) {
  double p1 = 0;
  for (std::size_t c = 0; c < mass.size(); ++c) p1 += mass[c] * prob[c];
  double fp = 0, fn = 0;
  for (std::size_t c = 0; c < mass.size(); ++c) {
    if (f[c] == 1) fp += mass[c] * (1 - prob[c]);
    else fn += mass[c] * prob[c];
  }
  return 0.5 * fp / (1 - p1) + 0.5 * fn / p1;
}

// Expression trees over n variables with at most `leaves` leaves, as printed
// strings "(a op b)" with variables x1..xn.
inline std::vector<std::string> all_trees(std::size_t n, std::size_t leaves) {
  std::vector<std::vector<std::string>> by_size(leaves + 1);
  for (std::size_t v = 1; v <= n; ++v) by_size[1].push_back("x" + std::to_string(v));
  for (std::size_t s = 2; s <= leaves; ++s)
    for (std::size_t l = 1; l < s; ++l)
      for (const auto& a : by_size[l])
        for (const auto& b : by_size[s - l])
          for (const char* op : {" + ", " * "}) by_size[s].push_back("(" + a + op + b + ")");
  std::vector<std::string> out;
  for (const auto& v : by_size) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace oracle
