#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "snpassoc/dataset.hpp"
#include "snpassoc/mdr.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

using CellFreqs = std::array<double, 3>;

struct PlantedEffect {
  FactorCombo combo;
  std::vector<double> penetrance;  // P(Y=1 | cell), indexed like cell_index
};

enum class EffectCombination { max, additive, multiplicative };

inline const char* to_string(EffectCombination c) {
  switch (c) {
    case EffectCombination::max: return "max";
    case EffectCombination::additive: return "additive";
    case EffectCombination::multiplicative: return "multiplicative";
  }
  return "?";
}

struct GenSpec {
  std::size_t N = 0;
  std::size_t n = 0;
  std::vector<CellFreqs> allele_freqs;  // one per predictor, or a single entry shared by all
  std::vector<PlantedEffect> effects;
  double baseline = 0.5;  // disease probability when no effect is planted
  double noise = 0.0;     // label flip probability
  std::uint64_t seed = 0;
  EffectCombination combination = EffectCombination::max;

  const CellFreqs& freqs(std::size_t i) const { return allele_freqs.size() == 1 ? allele_freqs[0] : allele_freqs[i]; }
};

inline bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

inline void validate(const GenSpec& spec) {
  if (spec.N == 0 || spec.n == 0) raise(ErrorKind::parameter, "synth", "N and n must be positive");
  if (spec.allele_freqs.size() != 1 && spec.allele_freqs.size() != spec.n)
    raise(ErrorKind::parameter, "synth", "allele_freqs needs one entry or one per predictor");
  for (const auto& f : spec.allele_freqs) {
    for (double p : f)
      if (!is_probability(p)) raise(ErrorKind::parameter, "synth", "allele frequency outside [0,1]");
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) raise(ErrorKind::parameter, "synth", "allele frequencies must sum to 1");
  }
  if (!is_probability(spec.baseline)) raise(ErrorKind::parameter, "synth", "baseline outside [0,1]");
  if (!is_probability(spec.noise)) raise(ErrorKind::parameter, "synth", "noise outside [0,1]");
  for (const auto& e : spec.effects) {
    check_combo(e.combo, spec.n);
    if (e.penetrance.size() != pow3(e.combo.order()))
      raise(ErrorKind::parameter, "synth",
            "penetrance table for " + e.combo.to_string({}) + " needs " + std::to_string(pow3(e.combo.order())) + " cells");
    for (double p : e.penetrance)
      if (!is_probability(p)) raise(ErrorKind::parameter, "synth", "penetrance outside [0,1]");
  }
}

// Disease probability of x before label noise.
inline double disease_probability(const GenSpec& spec, RowView x) {
  if (spec.effects.empty()) return spec.baseline;
  double p = 0.0;
  switch (spec.combination) {
    case EffectCombination::max:
      for (const auto& e : spec.effects) p = std::max(p, e.penetrance[cell_index(e.combo, x)]);
      return p;
    case EffectCombination::additive:
      p = spec.baseline;
      for (const auto& e : spec.effects) p += e.penetrance[cell_index(e.combo, x)] - spec.baseline;
      return std::clamp(p, 0.0, 1.0);
    case EffectCombination::multiplicative:
      p = spec.baseline;
      for (const auto& e : spec.effects)
        p *= spec.baseline > 0.0 ? e.penetrance[cell_index(e.combo, x)] / spec.baseline : 0.0;
      return std::clamp(p, 0.0, 1.0);
  }
  return p;
}

inline double case_probability(const GenSpec& spec, RowView x) {
  const double p = disease_probability(spec, x);
  return p * (1.0 - spec.noise) + (1.0 - p) * spec.noise;
}

namespace detail {

inline Dataset draw(const GenSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Genotype> cells(spec.N * spec.n);
  std::vector<Label> y(spec.N);
  for (std::size_t j = 0; j < spec.N; ++j) {
    for (std::size_t i = 0; i < spec.n; ++i) {
      const auto& f = spec.freqs(i);
      const double u = uniform01(rng);
      cells[j * spec.n + i] = u < f[0] ? 0 : (u < f[0] + f[1] ? 1 : 2);
    }
    const RowView x(cells.data() + j * spec.n, spec.n);
    Label label = uniform01(rng) < disease_probability(spec, x) ? kCase : kControl;
    if (uniform01(rng) < spec.noise) label = -label;
    y[j] = label;
  }
  return Dataset(spec.N, spec.n, std::move(cells), std::move(y));
}

}  // namespace detail

// Independent predictors, phenotype from the planted penetrances, then label
// noise. A draw with an empty class is redrawn once.
inline Dataset generate(const GenSpec& spec) {
  validate(spec);
  Dataset ds = detail::draw(spec, spec.seed);
  if (ds.case_count() > 0 && ds.control_count() > 0) return ds;
  ds = detail::draw(spec, derive_seed(spec.seed, stream::synth_retry));
  if (ds.case_count() > 0 && ds.control_count() > 0) return ds;
  raise(ErrorKind::degenerate, "synth", "generated sample has an empty class after one redraw");
}

// Predictors the phenotype depends on, ascending.
inline std::vector<std::size_t> relevant_columns(const GenSpec& spec) {
  std::vector<std::size_t> cols;
  for (const auto& e : spec.effects) cols.insert(cols.end(), e.combo.indices.begin(), e.combo.indices.end());
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

// Law of (X_U, Y) over the relevant columns U. Cell vectors list values of U
// in ascending column order.
inline std::vector<LawCell> law_of(const GenSpec& spec) {
  validate(spec);
  const auto cols = relevant_columns(spec);
  const std::size_t cells = pow3(cols.size());
  std::vector<LawCell> law;
  law.reserve(cells);
  std::vector<Genotype> full(spec.n, 0);
  for (std::size_t c = 0; c < cells; ++c) {
    LawCell cell;
    cell.x.resize(cols.size());
    cell.mass = 1.0;
    std::size_t rest = c;
    for (std::size_t k = cols.size(); k-- > 0;) {
      cell.x[k] = static_cast<Genotype>(rest % 3);
      rest /= 3;
      full[cols[k]] = cell.x[k];
      cell.mass *= spec.freqs(cols[k])[cell.x[k]];
    }
    cell.case_prob = case_probability(spec, full);
    law.push_back(std::move(cell));
  }
  return law;
}

// Balanced error of the optimal rule under the generating law.
inline double bayes_balanced_error(const GenSpec& spec) {
  const auto law = law_of(spec);
  const double prevalence = prevalence_of(law);
  std::vector<std::pair<std::vector<Genotype>, double>> table;
  for (const auto& c : law) table.emplace_back(c.x, c.case_prob);
  auto p = [table](RowView x) -> std::optional<double> {
    for (const auto& [cell, prob] : table)
      if (std::equal(cell.begin(), cell.end(), x.begin(), x.end())) return prob;
    return std::nullopt;
  };
  return balanced_error_law(optimal_rule(p, prevalence), law);
}

inline CellFreqs uniform_freqs() { return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}; }

// Genotype frequencies under random mating for minor allele frequency q.
inline CellFreqs hardy_weinberg(double q) { return {(1 - q) * (1 - q), 2 * q * (1 - q), q * q}; }

// Two-way interaction: high penetrance where x_a and x_b have equal parity.
inline PlantedEffect parity_effect(std::size_t a, std::size_t b, double high = 0.9, double low = 0.1) {
  PlantedEffect e;
  e.combo.indices = {a, b};
  e.penetrance.resize(9);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) e.penetrance[u * 3 + v] = (u % 2 == v % 2) ? high : low;
  return e;
}

inline GenSpec parity_spec(std::size_t N, std::size_t n, std::size_t a, std::size_t b, std::uint64_t seed,
                           CellFreqs freqs = uniform_freqs()) {
  GenSpec s;
  s.N = N;
  s.n = n;
  s.allele_freqs = {freqs};
  s.effects = {parity_effect(a, b)};
  s.seed = seed;
  return s;
}

inline GenSpec null_spec(std::size_t N, std::size_t n, std::uint64_t seed, double baseline = 0.5) {
  GenSpec s;
  s.N = N;
  s.n = n;
  s.allele_freqs = {uniform_freqs()};
  s.baseline = baseline;
  s.seed = seed;
  return s;
}

}  // namespace snpassoc
