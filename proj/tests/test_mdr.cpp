#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "snpassoc/mdr.hpp"
#include "snpassoc/synth.hpp"

using namespace snpassoc;

namespace {

Dataset random_dataset(std::mt19937_64& g, std::size_t N, std::size_t n) {
  std::vector<Genotype> cells(N * n);
  std::vector<Label> y(N);
  for (auto& c : cells) c = static_cast<Genotype>(g() % 3);
  for (auto& v : y) v = g() % 2 ? kCase : kControl;
  y[0] = kCase;
  y[1] = kControl;
  return Dataset(N, n, cells, y);
}

oracle::Table table_of(const Dataset& ds) {
  oracle::Table t;
  for (std::size_t j = 0; j < ds.rows(); ++j) {
    t.x.emplace_back(ds.row(j).begin(), ds.row(j).end());
    t.y.push_back(ds.label(j));
  }
  return t;
}

}  // namespace

TEST(FitMdr, HighRiskCellEmptyCellAndTie) {
  // x=1: 3 cases / 1 control; x=0: 1 case / 3 controls; x=2 empty. Marginal 0.5.
  const Dataset ds(8, 1, {1, 1, 1, 1, 0, 0, 0, 0}, {1, 1, 1, -1, 1, -1, -1, -1});
  const MdrModel m = fit_mdr(ds, all_rows(ds), FactorCombo{{0}});
  EXPECT_EQ(m.rule(), (std::vector<Label>{kControl, kCase, kControl}));
  EXPECT_EQ(m.threshold(), 0.5);
  const Dataset tie(4, 1, {1, 1, 0, 0}, {1, -1, 1, -1});
  EXPECT_EQ(fit_mdr(tie, all_rows(tie), FactorCombo{{0}}).rule()[1], kControl);
}

TEST(FitMdr, SingleClassRejected) {
  const Dataset ds(2, 1, {0, 1}, {1, 1});
  EXPECT_THROW(fit_mdr(ds, all_rows(ds), FactorCombo{{0}}), Error);
  EXPECT_THROW(fit_mdrir(ds, all_rows(ds), FactorCombo{{0}}), Error);
  const Dataset ok(2, 1, {0, 1}, {1, -1});
  EXPECT_THROW(fit_mdr(ok, all_rows(ok), FactorCombo{{1}}), Error);
  EXPECT_THROW(fit_mdr(ok, all_rows(ok), FactorCombo{}), Error);
}

TEST(FitMdrir, OneFactorHandComputation) {
  // Cases: level 2 in 3 of 5 (0.6). Controls: level 2 in 1 of 5 (0.2).
  const Dataset ds(10, 1, {2, 2, 2, 0, 1, 2, 0, 0, 1, 1}, {1, 1, 1, 1, 1, -1, -1, -1, -1, -1});
  const MdrModel m = fit_mdrir(ds, all_rows(ds), FactorCombo{{0}});
  EXPECT_EQ(m.rule()[2], kCase);
  EXPECT_EQ(m.variant(), MdrVariant::independent_rule);
}

TEST(FitMdrir, BothProductsZeroIsControl) {
  const Dataset ds(4, 2, {0, 0, 0, 1, 1, 0, 1, 1}, {1, 1, -1, -1});
  const MdrModel m = fit_mdrir(ds, all_rows(ds), FactorCombo{{0, 1}});
  EXPECT_EQ(m.rule()[cell_index(FactorCombo{{0, 1}}, std::vector<Genotype>{2, 2})], kControl);
}

TEST(FitMdrir, LogSpaceAgreesWithDirectProducts) {
  std::mt19937_64 g(4);
  for (int it = 0; it < 1000; ++it) {
    const std::size_t N = 4 + g() % 20, n = 1 + g() % 3;
    const Dataset ds = random_dataset(g, N, n);
    FactorCombo c;
    for (std::size_t i = 0; i < n; ++i) c.indices.push_back(i);
    const MdrModel m = fit_mdrir(ds, all_rows(ds), c);
    std::size_t n1 = ds.case_count(), n0 = ds.control_count();
    for (std::size_t cell = 0; cell < pow3(n); ++cell) {
      std::vector<int> lv(n);
      std::size_t rest = cell;
      for (std::size_t i = n; i-- > 0;) {
        lv[i] = static_cast<int>(rest % 3);
        rest /= 3;
      }
      double l = 0, r = 0;
      bool lz = false, rz = false;
      for (std::size_t i = 0; i < n; ++i) {
        double a = 0, b = 0;
        for (std::size_t j = 0; j < N; ++j)
          if (ds.at(j, i) == lv[i]) (ds.label(j) == kCase ? a : b) += 1;
        if (a == 0) lz = true;
        else l += std::log(a / static_cast<double>(n1));
        if (b == 0) rz = true;
        else r += std::log(b / static_cast<double>(n0));
      }
      const bool high = !lz && (rz || l > r + 1e-12);
      const bool tied = !lz && !rz && std::abs(l - r) <= 1e-12;
      if (!tied) {
        EXPECT_EQ(m.rule()[cell] == kCase, high) << it << " " << cell;
      }
    }
  }
}

TEST(FitMdr, RowOrderInvariance) {
  std::mt19937_64 g(6);
  for (int it = 0; it < 200; ++it) {
    const Dataset ds = random_dataset(g, 20, 3);
    Subsample s = all_rows(ds);
    std::vector<std::size_t> rev(s.rbegin(), s.rend());
    std::shuffle(rev.begin(), rev.end(), g);
    const FactorCombo c{{0, 2}};
    EXPECT_EQ(fit_mdr(ds, s, c).rule(), fit_mdr(ds, rev, c).rule());
    EXPECT_EQ(fit_mdrir(ds, s, c).rule(), fit_mdrir(ds, rev, c).rule());
  }
}

TEST(FitMdr, MatchesPlugInOptimalRuleOnPopulatedCells) {
  std::mt19937_64 g(7);
  int checked = 0;
  for (int it = 0; it < 300; ++it) {
    const Dataset ds = random_dataset(g, 120, 2);
    const Subsample s = all_rows(ds);
    const FactorCombo c{{0, 1}};
    bool populated = true;
    for (std::size_t cell = 0; cell < 9 && populated; ++cell) {
      std::size_t a = 0, b = 0;
      for (std::size_t j : s)
        if (cell_index(c, ds.row(j)) == cell) (ds.label(j) == kCase ? a : b)++;
      populated = a > 0 && b > 0;
    }
    if (!populated) continue;
    ++checked;
    const MdrModel m = fit_mdr(ds, s, c);
    const PredictionFn star = optimal_rule([&](RowView x) { return empirical_cell_prob(ds, s, x); }, case_fraction(ds, s));
    for (std::size_t j : s) EXPECT_EQ(m.predict(ds.row(j)), star(ds.row(j)));
  }
  EXPECT_GT(checked, 100);
}

TEST(Search, CountsCombinations) {
  const Dataset ds = generate(null_spec(60, 6, 2));
  MdrSearchOptions opt;
  opt.r_min = 1;
  opt.r_max = 2;
  opt.restrict_to = std::vector<std::size_t>{0, 2, 3, 5};
  const auto rep = mdr_search(ds, shuffle_then_fold(ds, 3, 1), opt, 0);
  EXPECT_EQ(rep.search_space, 10u);
  EXPECT_EQ(rep.ranked.size(), 10u);
  for (std::size_t k = 1; k < rep.ranked.size(); ++k)
    EXPECT_LE(error_rank_key(rep.ranked[k - 1].error.value), error_rank_key(rep.ranked[k].error.value));
}

TEST(Search, RefusesOversizedSearch) {
  const Dataset ds = generate(null_spec(60, 6, 2));
  MdrSearchOptions opt;
  opt.r_max = 3;
  opt.max_cell_updates = 100;
  try {
    mdr_search(ds, make_folds(60, 3), opt, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("41 combinations"), std::string::npos) << e.what();
  }
  opt.r_max = 7;
  EXPECT_THROW(mdr_search(ds, make_folds(60, 3), opt, 0), Error);
}

TEST(Search, RecoversPlantedPair) {
  const Dataset ds = generate(parity_spec(400, 6, 0, 1, 3));
  MdrSearchOptions opt;
  opt.r_max = 2;
  const auto rep = mdr_search(ds, shuffle_then_fold(ds, 6, 3), opt, 0);
  EXPECT_EQ(rep.ranked.front().combo, (FactorCombo{{0, 1}}));
}

TEST(Search, RestrictToGeneticColumns) {
  GenSpec spec = parity_spec(300, 5, 1, 2, 9);
  Dataset raw = generate(spec);
  std::vector<PredictorKind> kinds(5, PredictorKind::genetic);
  kinds[0] = PredictorKind::external;
  const Dataset ds(raw.rows(), raw.cols(), raw.cells(), raw.phenotype(), raw.names(), kinds);
  MdrSearchOptions opt;
  opt.r_max = 2;
  opt.restrict_to = ds.columns_of_kind(PredictorKind::genetic);
  const auto rep = mdr_search(ds, shuffle_then_fold(ds, 6, 1), opt, 0);
  EXPECT_EQ(rep.search_space, 4u + 6u);
  for (const auto& r : rep.ranked) EXPECT_NE(r.combo.indices.front(), 0u);
  EXPECT_EQ(rep.ranked.front().combo, (FactorCombo{{1, 2}}));
}

TEST(Search, DuplicateColumnNeverHurtsBest) {
  std::mt19937_64 g(12);
  for (int it = 0; it < 40; ++it) {
    const Dataset ds = generate(parity_spec(90, 3, 0, 1, it));
    std::vector<Genotype> cells;
    for (std::size_t j = 0; j < ds.rows(); ++j) {
      cells.insert(cells.end(), ds.row(j).begin(), ds.row(j).end());
      cells.push_back(ds.at(j, g() % 3));
    }
    const Dataset aug(ds.rows(), 4, cells, ds.phenotype());
    const FoldPlan plan = make_folds(ds.rows(), 3);
    MdrSearchOptions opt;
    opt.r_max = 2;
    double base, more;
    try {
      base = mdr_search(ds, plan, opt, 0).ranked.front().error.value;
      more = mdr_search(aug, plan, opt, 0).ranked.front().error.value;
    } catch (const Error&) {
      continue;
    }
    EXPECT_LE(more, base + 1e-12);
  }
}

TEST(Search, MatchesOracleRankingOnTinyInstances) {
  std::mt19937_64 g(13);
  int checked = 0;
  for (int it = 0; it < 400; ++it) {
    const std::size_t N = 6 + g() % 7, n = 1 + g() % 3, K = 2 + g() % 2;
    const Dataset ds = random_dataset(g, N, n);
    for (auto rule : {oracle::Rule::mdr, oracle::Rule::mdrir}) {
      const auto want = oracle::mdr_ranking(table_of(ds), K, n, rule);
      MdrSearchOptions opt;
      opt.r_max = n;
      opt.variant = rule == oracle::Rule::mdr ? MdrVariant::classic : MdrVariant::independent_rule;
      if (want.empty()) {
        EXPECT_THROW(mdr_search(ds, make_folds(N, K), opt, 0), Error);
        continue;
      }
      const auto got = mdr_search(ds, make_folds(N, K), opt, 0);
      ASSERT_EQ(got.ranked.size(), want.size());
      for (std::size_t k = 0; k < want.size(); ++k) {
        EXPECT_NEAR(got.ranked[k].error.value, want[k].first, 1e-12);
        EXPECT_EQ(got.ranked[k].combo.indices, want[k].second);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Search, ParallelMatchesSerial) {
  const Dataset ds = generate(parity_spec(200, 6, 2, 4, 1));
  MdrSearchOptions opt;
  opt.r_max = 3;
  const FoldPlan plan = shuffle_then_fold(ds, 6, 1);
  const auto a = mdr_search(ds, plan, opt, 0, 1);
  const auto b = mdr_search(ds, plan, opt, 0, 8);
  ASSERT_EQ(a.ranked.size(), b.ranked.size());
  for (std::size_t k = 0; k < a.ranked.size(); ++k) {
    EXPECT_EQ(a.ranked[k].combo, b.ranked[k].combo);
    EXPECT_EQ(a.ranked[k].error.value, b.ranked[k].error.value);
  }
}

TEST(Combo, CellIndexAndNames) {
  const FactorCombo c{{1, 3}};
  EXPECT_EQ(cell_index(c, std::vector<Genotype>{0, 2, 0, 1}), 7u);
  EXPECT_EQ(c.to_string({"a", "b", "c", "d"}), "b,d");
  EXPECT_EQ(c.to_string({}), "x2,x4");
}
