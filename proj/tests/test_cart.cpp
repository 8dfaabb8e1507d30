#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "snpassoc/cart.hpp"
#include "snpassoc/synth.hpp"

using namespace snpassoc;

namespace {

Dataset random_dataset(std::mt19937_64& g, std::size_t N, std::size_t n) {
  std::vector<Genotype> cells(N * n);
  std::vector<Label> y(N);
  for (auto& c : cells) c = static_cast<Genotype>(g() % 3);
  for (auto& v : y) v = g() % 2 ? kCase : kControl;
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

// ((x1=2) and (x3=2)) or (x4>0)
ClassTree figure_three() {
  const ClassTree x3 = ClassTree::split(2, 1, ClassTree::leaf(kControl), ClassTree::leaf(kCase));
  const ClassTree x1 = ClassTree::split(0, 1, ClassTree::leaf(kControl), x3);
  return ClassTree::split(3, 0, x1, ClassTree::leaf(kCase));
}

// Every cell of {0,1,2}^2 `copies` times, labelled by rule.
template <class Rule>
Dataset grid(std::size_t copies, Rule rule) {
  std::vector<Genotype> cells;
  std::vector<Label> y;
  for (std::size_t c = 0; c < copies; ++c)
    for (Genotype a = 0; a < 3; ++a)
      for (Genotype b = 0; b < 3; ++b) {
        cells.push_back(a);
        cells.push_back(b);
        y.push_back(rule(a, b) ? kCase : kControl);
      }
  return Dataset(y.size(), 2, cells, y);
}

}  // namespace

TEST(Gini, Values) {
  EXPECT_EQ(gini_index(2, 2), 0.5);
  EXPECT_EQ(gini_index(3, 0), 0.0);
  EXPECT_EQ(gini_index(3, 1), 0.375);
  EXPECT_EQ(gini_index(0, 0), 0.0);
  const Dataset ds(4, 1, {0, 0, 0, 0}, {1, 1, 1, -1});
  EXPECT_EQ(gini(ds, all_rows(ds), [](RowView) { return true; }), 0.375);
  EXPECT_EQ(gini(ds, all_rows(ds), [](RowView) { return false; }), 0.0);
}

TEST(BestSplit, PureRegionHasNone) {
  const Dataset ds(6, 2, {0, 1, 1, 2, 2, 0, 0, 0, 1, 1, 2, 2}, {1, 1, 1, 1, 1, 1});
  EXPECT_FALSE(best_split(ds, all_rows(ds), 1).has_value());
}

TEST(BestSplit, SeparatingPredictorAtZero) {
  std::vector<Genotype> cells;
  const std::vector<Label> y{1, 1, 1, 1, -1, -1, -1, -1};
  const Genotype sep[8] = {0, 0, 0, 0, 2, 1, 2, 1};
  const Genotype noise[8] = {1, 2, 0, 1, 2, 0, 1, 0};
  for (int j = 0; j < 8; ++j) {
    cells.push_back(noise[j]);
    cells.push_back(sep[j]);
  }
  const Dataset sepds(8, 2, cells, y);
  const auto s = best_split(sepds, all_rows(sepds), 1);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->column, 1u);
  EXPECT_EQ(s->threshold, 0);
  EXPECT_EQ(s->score, 0.0);
}

TEST(BestSplit, MatchesBruteForce) {
  std::mt19937_64 g(21);
  for (int it = 0; it < 500; ++it) {
    const std::size_t N = 2 + g() % 20, n = 1 + g() % 3, min_node = g() % 4;
    const Dataset ds = random_dataset(g, N, n);
    const auto want = oracle::best_split(table_of(ds), oracle::folds(N, 1)[0], min_node);
    const auto got = best_split(ds, all_rows(ds), min_node);
    ASSERT_EQ(got.has_value(), want.has_value()) << it;
    if (!got) continue;
    EXPECT_EQ(got->column, want->column);
    EXPECT_EQ(got->threshold, want->threshold);
    EXPECT_NEAR(got->score, want->score, 1e-15);
  }
}

TEST(BestSplit, RegionRestrictsRows) {
  const Dataset ds = grid(6, [](Genotype a, Genotype b) { return a != 0 && b != 0; });
  Region r(2, 0b111);
  r[0] = 0b110;  // x1 in {1,2}
  const auto s = best_split(ds, all_rows(ds), r, 5);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->column, 1u);
  EXPECT_EQ(s->threshold, 0);
  Region none(2, 0);
  EXPECT_THROW(best_split(ds, all_rows(ds), none, 5), Error);
}

TEST(Grow, SingleLeafMajority) {
  const Dataset ds(5, 1, {0, 1, 2, 0, 1}, {1, 1, 1, -1, -1});
  const ClassTree t = grow_tree(ds, all_rows(ds), TreeConfig{1, 1, SplitCriterion::summed, std::nullopt});
  EXPECT_EQ(t.leaf_count(), 1u);
  EXPECT_EQ(t.predict(std::vector<Genotype>{2}), kCase);
}

TEST(Grow, EqualCountsLeafIsControl) {
  const Dataset ds(4, 1, {0, 1, 2, 0}, {1, 1, -1, -1});
  const ClassTree t = grow_tree(ds, all_rows(ds), TreeConfig{1, 1, SplitCriterion::summed, std::nullopt});
  EXPECT_EQ(t.predict(std::vector<Genotype>{0}), kControl);
}

TEST(Grow, ProductRuleNeedsTwoLevels) {
  const Dataset ds = grid(10, [](Genotype a, Genotype b) { return (a * b) % 3 != 0; });
  const ClassTree t = grow_tree(ds, all_rows(ds), TreeConfig{16, 5, SplitCriterion::summed, std::nullopt});
  EXPECT_EQ(t.depth(), 2u);
  for (std::size_t j = 0; j < ds.rows(); ++j) EXPECT_EQ(t.predict(ds.row(j)), ds.label(j));
}

TEST(Grow, ParityStaysSingleLeafUnderSummedRule) {
  const Dataset ds = generate(parity_spec(400, 4, 0, 1, 3));
  EXPECT_EQ(grow_tree(ds, all_rows(ds)).leaf_count(), 1u);
  TreeConfig weighted;
  weighted.criterion = SplitCriterion::weighted;
  EXPECT_GT(grow_tree(ds, all_rows(ds), weighted).leaf_count(), 1u);
}

TEST(Grow, DeterministicAndLeafCapped) {
  std::mt19937_64 g(22);
  for (int it = 0; it < 50; ++it) {
    const Dataset ds = random_dataset(g, 80, 5);
    TreeConfig cfg{4, 2, SplitCriterion::weighted, std::nullopt};
    const ClassTree a = grow_tree(ds, all_rows(ds), cfg);
    EXPECT_EQ(a, grow_tree(ds, all_rows(ds), cfg));
    EXPECT_LE(a.leaf_count(), 4u);
  }
}

TEST(Grow, ChildGiniSumNeverAboveParent) {
  std::mt19937_64 g(23);
  for (int it = 0; it < 100; ++it) {
    GenSpec spec;
    spec.N = 200;
    spec.n = 4;
    spec.allele_freqs = {uniform_freqs()};
    spec.effects = {PlantedEffect{FactorCombo{{g() % 4}}, {0.05, 0.2, 0.95}}};
    spec.seed = it;
    const Dataset ds = generate(spec);
    const ClassTree t = grow_tree(ds, all_rows(ds), TreeConfig{16, 1, SplitCriterion::summed, std::nullopt});
    for (const auto& node : t.nodes()) {
      if (node.leaf) continue;
      const auto& p = t.nodes()[node.plus];
      const auto& m = t.nodes()[node.minus];
      const double parent = gini_index(p.case_weight + m.case_weight, p.control_weight + m.control_weight);
      EXPECT_LE(gini_index(p.case_weight, p.control_weight) + gini_index(m.case_weight, m.control_weight), parent);
    }
  }
}

TEST(Grow, LeafRegionsPartitionTheSpace) {
  std::mt19937_64 g(24);
  const Dataset ds = generate(parity_spec(300, 5, 0, 1, 4));
  TreeConfig cfg;
  cfg.criterion = SplitCriterion::weighted;
  const ClassTree t = grow_tree(ds, all_rows(ds), cfg);
  const auto regions = t.regions(5);
  std::vector<Genotype> x(5);
  for (int it = 0; it < 10000; ++it) {
    for (auto& v : x) v = static_cast<Genotype>(g() % 3);
    std::size_t hits = 0, which = 0;
    for (std::size_t r = 0; r < regions.size(); ++r)
      if (in_region(regions[r], x)) {
        ++hits;
        which = r;
      }
    EXPECT_EQ(hits, 1u);
    EXPECT_EQ(which, t.leaf_of(x));
  }
}

TEST(Grow, TrainingErrorNonIncreasingInLeafCapOnBalancedData) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    GenSpec spec = parity_spec(300, 4, 0, 2, seed);
    const Dataset ds = balance_resample(generate(spec), seed);
    double prev = 1.0;
    for (std::size_t D = 1; D <= 12; ++D) {
      TreeConfig cfg{D, 3, SplitCriterion::weighted, std::nullopt};
      const double e = balanced_error_direct(grow_tree(ds, all_rows(ds), cfg).as_prediction_fn(), ds, all_rows(ds));
      EXPECT_LE(e, prev + 1e-12) << seed << " D=" << D;
      prev = e;
    }
  }
}

TEST(Predict, FigureThree) {
  const ClassTree t = figure_three();
  EXPECT_EQ(t.predict(std::vector<Genotype>{2, 0, 2, 0}), kCase);
  EXPECT_EQ(t.predict(std::vector<Genotype>{1, 2, 2, 0}), kControl);
  EXPECT_EQ(t.predict(std::vector<Genotype>{0, 0, 0, 0}), kControl);
  EXPECT_EQ(t.predict(std::vector<Genotype>{0, 0, 0, 1}), kCase);
  EXPECT_EQ(t.leaf_count(), 4u);
  std::vector<Genotype> x(4);
  for (int c = 0; c < 81; ++c) {
    int r = c;
    for (auto& v : x) {
      v = static_cast<Genotype>(r % 3);
      r /= 3;
    }
    const bool want = (x[0] == 2 && x[2] == 2) || x[3] > 0;
    EXPECT_EQ(t.predict(x), want ? kCase : kControl);
  }
}

TEST(Predict, SingleLeafConstant) {
  const ClassTree t = ClassTree::leaf(kCase);
  EXPECT_EQ(t.predict(std::vector<Genotype>{0, 1}), kCase);
  EXPECT_EQ(t.to_string(), "+1");
  EXPECT_THROW(ClassTree::split(0, 2, t, t), Error);
}

TEST(Config, Validation) {
  EXPECT_THROW(check_tree_config(TreeConfig{0, 5, SplitCriterion::summed, std::nullopt}), Error);
}
