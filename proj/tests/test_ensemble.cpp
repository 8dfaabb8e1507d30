#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "snpassoc/ensemble.hpp"
#include "snpassoc/synth.hpp"

using namespace snpassoc;

namespace {

GenSpec marginal_spec(std::size_t N, std::size_t n, std::size_t causal, std::uint64_t seed) {
  GenSpec spec;
  spec.N = N;
  spec.n = n;
  spec.allele_freqs = {uniform_freqs()};
  spec.effects = {PlantedEffect{FactorCombo{{causal}}, {0.05, 0.2, 0.95}}};
  spec.seed = seed;
  return spec;
}

// Four cases at x=0, four controls at x=2.
Dataset separable() {
  return Dataset(8, 1, {0, 0, 0, 0, 2, 2, 2, 2}, {1, 1, 1, 1, -1, -1, -1, -1});
}

}  // namespace

TEST(Forest, DefaultTreeCount) {
  EXPECT_EQ(default_rf_tree_count(100), 1000u);
  EXPECT_EQ(default_rf_tree_count(200), 1059u);
  EXPECT_EQ(default_rf_tree_count(500), 3107u);
  EXPECT_EQ(default_rf_tree_count(1000), 6907u);
  EXPECT_EQ(default_rf_tree_count_log10(500), 1349u);
  const Dataset ds = generate(marginal_spec(200, 3, 0, 1));
  RfConfig cfg;
  EXPECT_EQ(fit_rf(ds, all_rows(ds), cfg, 1, 4).size(), 1059u);
}

TEST(Forest, ProbabilityFromVotes) {
  RfModel m;
  const std::vector<Genotype> x{0};
  m.trees = {ClassTree::leaf(kCase), ClassTree::leaf(kCase), ClassTree::leaf(kCase)};
  EXPECT_EQ(rf_prob(m, x), 1.0);
  m.trees = {ClassTree::leaf(kCase), ClassTree::leaf(kControl)};
  EXPECT_EQ(rf_prob(m, x), 0.5);
  m.trees = {ClassTree::leaf(kCase), ClassTree::leaf(kControl), ClassTree::leaf(kControl)};
  EXPECT_DOUBLE_EQ(rf_prob(m, x), 1.0 / 3.0);
  m.threshold = 0.3;
  EXPECT_EQ(rf_predict(m, x), kCase);
  m.threshold = 0.5;
  EXPECT_EQ(rf_predict(m, x), kControl);
}

TEST(Forest, SingleTreeMatchesItsBootstrapTree) {
  const Dataset ds = generate(marginal_spec(300, 4, 1, 2));
  RfConfig cfg;
  cfg.trees = 1;
  const RfModel m = fit_rf(ds, all_rows(ds), cfg, 9);
  ASSERT_EQ(m.size(), 1u);
  const ClassTree t = grow_tree(ds, m.bootstraps[0], cfg.tree);
  EXPECT_EQ(t, m.trees[0]);
  for (std::size_t j = 0; j < ds.rows(); ++j) EXPECT_EQ(rf_predict(m, ds.row(j)), t.predict(ds.row(j)));
}

TEST(Forest, DeterministicAcrossWorkers) {
  const Dataset ds = generate(marginal_spec(200, 4, 1, 3));
  RfConfig cfg;
  cfg.trees = 64;
  cfg.tree.features_per_split = 2;
  const RfModel a = fit_rf(ds, all_rows(ds), cfg, 5, 1);
  const RfModel b = fit_rf(ds, all_rows(ds), cfg, 5, 8);
  EXPECT_EQ(a.trees, b.trees);
  EXPECT_EQ(a.bootstraps, b.bootstraps);
  const RfModel c = fit_rf(ds, all_rows(ds), cfg, 6, 1);
  EXPECT_NE(a.bootstraps, c.bootstraps);
}

TEST(Forest, BootstrapHasBothClasses) {
  const Dataset ds(6, 1, {0, 1, 2, 0, 1, 2}, {1, -1, -1, -1, -1, -1});
  for (std::uint64_t s = 0; s < 200; ++s) {
    try {
      const Subsample b = bootstrap_sample(ds, all_rows(ds), s, s + 1000);
      const ClassCounts c = count_classes(ds, b);
      EXPECT_GT(c.cases, 0u);
      EXPECT_GT(c.controls, 0u);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::degenerate);
    }
  }
}

TEST(Boosting, PseudoResponseAndInitialValue) {
  EXPECT_EQ(pseudo_response(kCase, 0.0), 1.0);
  EXPECT_EQ(pseudo_response(kControl, 0.0), -1.0);
  EXPECT_NEAR(pseudo_response(kCase, 1.0), 2.0 / (1.0 + std::exp(2.0)), 1e-15);
  const Dataset ds = separable();
  SgbConfig cfg{2, 1, 1.0, 1.0, 1, SplitCriterion::summed, false};
  EXPECT_EQ(fit_sgb(ds, all_rows(ds), cfg, 1).f0, 0.0);
  const Dataset skew(4, 1, {0, 1, 2, 0}, {1, 1, 1, -1});
  SgbConfig one{1, 1, 1.0, 1.0, 1, SplitCriterion::summed, false};
  EXPECT_NEAR(fit_sgb(skew, all_rows(skew), one, 1).f0, 0.5 * std::log(3.0), 1e-15);
}

TEST(Boosting, OneStageHandValue) {
  const Dataset ds = separable();
  const SgbModel m = fit_sgb(ds, all_rows(ds), SgbConfig{2, 1, 1.0, 1.0, 1, SplitCriterion::summed, false}, 3);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.stages[0].tree.leaf_count(), 2u);
  EXPECT_NEAR(sgb_log_odds(m, std::vector<Genotype>{0}), 1.0, 1e-15);
  EXPECT_NEAR(sgb_log_odds(m, std::vector<Genotype>{2}), -1.0, 1e-15);
  EXPECT_NEAR(sgb_prob(m, std::vector<Genotype>{0}), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(m.stage_loss[0], std::log1p(std::exp(-2.0)), 1e-15);
}

TEST(Boosting, ProbabilityStaysInsideUnitInterval) {
  SgbModel m;
  EXPECT_EQ(sgb_prob(m, std::vector<Genotype>{0}), 0.5);
  EXPECT_EQ(clamp_log_odds(100.0), 15.0);
  EXPECT_EQ(clamp_log_odds(-100.0), -15.0);
  EXPECT_EQ(clamp_log_odds(3.0), 3.0);
  m.config.rho = 1.0;
  m.stages.push_back(SgbStage{ClassTree::leaf(kCase), {1e6}, {}});
  const double p = sgb_prob(m, std::vector<Genotype>{0});
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
  m.stages[0].weights[0] = -1e6;
  const double q = sgb_prob(m, std::vector<Genotype>{0});
  EXPECT_GT(q, 0.0);
  EXPECT_LT(q, 1.0);
}

TEST(Boosting, LastStageLossMatchesRecomputedScores) {
  const Dataset ds = generate(parity_spec(300, 4, 0, 1, 4));
  SgbConfig cfg;
  cfg.stages = 100;
  cfg.criterion = SplitCriterion::weighted;
  const SgbModel m = fit_sgb(ds, all_rows(ds), cfg, 8);
  std::vector<double> f(ds.rows());
  for (std::size_t j = 0; j < ds.rows(); ++j) f[j] = sgb_log_odds(m, ds.row(j));
  EXPECT_NEAR(m.stage_loss.back(), logistic_loss(ds, all_rows(ds), f), 1e-12);
}

TEST(Boosting, ThresholdMonotone) {
  const Dataset ds = generate(marginal_spec(300, 4, 2, 5));
  const SgbModel m = fit_sgb(ds, all_rows(ds), SgbConfig{}, 2);
  std::size_t prev = ds.rows() + 1;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < ds.rows(); ++j) pos += sgb_predict(m, ds.row(j), t) == kCase;
    EXPECT_LE(pos, prev);
    prev = pos;
  }
}

TEST(Boosting, FullSampleLossNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset ds = generate(parity_spec(300, 4, 0, 1, seed));
    SgbConfig cfg;
    cfg.stages = 50;
    cfg.eta = 1.0;
    cfg.criterion = SplitCriterion::weighted;
    const SgbModel m = fit_sgb(ds, all_rows(ds), cfg, seed);
    double prev = std::log(2.0) + 1e-12;
    for (double l : m.stage_loss) {
      EXPECT_LE(l, prev + 1e-12) << seed;
      prev = l;
    }
  }
}

TEST(Boosting, Determinism) {
  const Dataset ds = generate(marginal_spec(200, 4, 2, 5));
  const SgbModel a = fit_sgb(ds, all_rows(ds), SgbConfig{}, 4);
  const SgbModel b = fit_sgb(ds, all_rows(ds), SgbConfig{}, 4);
  EXPECT_EQ(a.stage_loss, b.stage_loss);
}

TEST(Boosting, ConfigChecks) {
  const Dataset ds = separable();
  EXPECT_THROW(fit_sgb(ds, all_rows(ds), SgbConfig{4, 10, 0.1, 0.5, 1, SplitCriterion::summed, false}, 1), Error);
  EXPECT_THROW(fit_sgb(ds, all_rows(ds), SgbConfig{2, 10, 0.0, 1.0, 1, SplitCriterion::summed, false}, 1), Error);
  EXPECT_THROW(fit_sgb(ds, all_rows(ds), SgbConfig{2, 0, 0.1, 1.0, 1, SplitCriterion::summed, false}, 1), Error);
}

TEST(ChiSquare, IndependentAndIdenticalColumns) {
  const Dataset ds = generate(null_spec(3000, 2, 6));
  const ChiSquareTest indep = chi_square_independence(ds, all_rows(ds), 0, 1);
  EXPECT_EQ(indep.df, 4u);
  EXPECT_GT(indep.p_value, 1e-4);
  const ChiSquareTest same = chi_square_independence(ds, all_rows(ds), 0, 0);
  EXPECT_NEAR(same.statistic, 2.0 * 3000.0, 1e-6);
  EXPECT_LT(same.p_value, 1e-12);
  const Dataset flat(4, 2, {0, 1, 0, 2, 0, 0, 0, 1}, {1, 1, -1, -1});
  EXPECT_EQ(chi_square_independence(flat, all_rows(flat), 0, 1).df, 0u);
}

TEST(Cvim, PermutationKeepsStratumContents) {
  const Dataset ds = generate(null_spec(300, 3, 7));
  const auto strata = strata_of(ds, {1, 2});
  Rng rng = make_rng(1);
  const auto col = permute_within_strata(ds, 0, strata, rng);
  for (const auto& rows : strata) {
    std::map<Genotype, int> before, after;
    for (std::size_t j : rows) {
      ++before[ds.at(j, 0)];
      ++after[col[j]];
    }
    EXPECT_EQ(before, after);
  }
}

TEST(Cvim, CausalColumnRanksFirst) {
  int first = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset ds = generate(marginal_spec(300, 5, 2, seed));
    CvimConfig cfg;
    cfg.replicates = 50;
    first += cvim(ds, cfg, seed, 4).ranking()[0] == 2;
  }
  EXPECT_GE(first, 9);
}

TEST(Cvim, NullImportanceNearZero) {
  const Dataset ds = generate(null_spec(300, 4, 11));
  CvimConfig cfg;
  cfg.replicates = 200;
  const CvimReport r = cvim(ds, cfg, 3, 4);
  for (const auto& e : r.entries) EXPECT_LT(std::abs(e.value), 0.02);
}

TEST(Cvim, DeterministicAcrossWorkers) {
  const Dataset ds = generate(marginal_spec(200, 4, 1, 12));
  CvimConfig cfg;
  cfg.replicates = 40;
  const CvimReport a = cvim(ds, cfg, 7, 1);
  const CvimReport b = cvim(ds, cfg, 7, 8);
  for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].value, b.entries[i].value);
  EXPECT_EQ(a.used + a.skipped, 40u);
}
