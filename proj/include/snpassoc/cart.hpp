#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "snpassoc/dataset.hpp"
#include "snpassoc/metrics.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

// G(C) = 2p(1-p) with p the (weighted) case share of C; 0 for an empty C.
inline double gini_index(double case_weight, double control_weight) {
  const double total = case_weight + control_weight;
  if (!(total > 0.0)) return 0.0;
  const double p = case_weight / total;
  return 2.0 * p * (1.0 - p);
}

template <class CellPredicate>
double gini(const Dataset& ds, const Subsample& s, CellPredicate&& in_cell) {
  const auto p = empirical_set_prob(ds, s, std::forward<CellPredicate>(in_cell));
  return p ? 2.0 * *p * (1.0 - *p) : 0.0;
}

// summed: G(A+) + G(A-). weighted: the children's Gini weighted by their
// share of the parent (an extension, not the default).
enum class SplitCriterion { summed, weighted };

inline const char* to_string(SplitCriterion c) { return c == SplitCriterion::summed ? "summed" : "weighted"; }

struct TreeConfig {
  std::size_t max_leaves = 16;  // D_max
  std::size_t min_node = 5;     // smallest admissible child
  SplitCriterion criterion = SplitCriterion::summed;
  // Extension, off by default: number of columns drawn per split.
  std::optional<std::size_t> features_per_split;
};

inline void check_tree_config(const TreeConfig& cfg) {
  if (cfg.max_leaves == 0) raise(ErrorKind::parameter, "cart", "max_leaves must be at least 1");
  if (cfg.features_per_split && *cfg.features_per_split == 0)
    raise(ErrorKind::parameter, "cart", "features_per_split must be at least 1");
}

struct Split {
  std::size_t column = 0;
  Genotype threshold = 0;  // A+ = {x_i <= t}
  double score = 0.0;      // G(A+) + G(A-)
};

// Region of a node: allowed values per column as 3-bit masks.
using Region = std::vector<std::uint8_t>;

inline bool in_region(const Region& r, RowView x) {
  for (std::size_t i = 0; i < r.size(); ++i)
    if (!(r[i] & (1u << x[i]))) return false;
  return true;
}

inline std::uint8_t below_mask(Genotype t) { return static_cast<std::uint8_t>((1u << (t + 1)) - 1u); }

class ClassTree {
 public:
  struct Node {
    bool leaf = true;
    std::size_t column = 0;
    Genotype threshold = 0;
    std::size_t plus = 0;   // child for x_i <= t
    std::size_t minus = 0;  // child for x_i > t
    Label label = kControl;
    std::size_t leaf_id = 0;
    double case_weight = 0.0;
    double control_weight = 0.0;
  };

  static ClassTree leaf(Label label) {
    ClassTree t;
    Node n;
    n.label = label;
    t.nodes_.push_back(n);
    t.reindex();
    return t;
  }

  // Internal node testing x_column <= threshold.
  static ClassTree split(std::size_t column, Genotype threshold, const ClassTree& plus, const ClassTree& minus) {
    if (threshold > 1) raise(ErrorKind::parameter, "cart", "split threshold must be 0 or 1");
    ClassTree t;
    Node root;
    root.leaf = false;
    root.column = column;
    root.threshold = threshold;
    t.nodes_.push_back(root);
    t.nodes_[0].plus = t.append(plus);
    t.nodes_[0].minus = t.append(minus);
    t.reindex();
    return t;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }
  // Node index of each leaf, by leaf id.
  const std::vector<std::size_t>& leaves() const noexcept { return leaves_; }

  std::size_t leaf_of(RowView x) const {
    std::size_t i = 0;
    while (!nodes_[i].leaf) i = x[nodes_[i].column] <= nodes_[i].threshold ? nodes_[i].plus : nodes_[i].minus;
    return nodes_[i].leaf_id;
  }

  Label predict(RowView x) const { return nodes_[leaves_[leaf_of(x)]].label; }

  // Leaf regions in leaf-id order; they partition {0,1,2}^n.
  std::vector<Region> regions(std::size_t n) const {
    std::vector<Region> out(leaves_.size());
    collect(0, Region(n, 0b111), out);
    return out;
  }

  std::size_t depth() const { return depth_of(0); }

  std::string to_string(const std::vector<std::string>& names = {}) const { return render(0, names); }

  PredictionFn as_prediction_fn() const {
    auto shared = std::make_shared<const ClassTree>(*this);
    return PredictionFn([shared](RowView x) { return shared->predict(x); },
                        "classification tree with " + std::to_string(leaf_count()) + " leaves");
  }

  friend bool operator==(const ClassTree& a, const ClassTree& b) {
    if (a.nodes_.size() != b.nodes_.size()) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
      const Node& x = a.nodes_[i];
      const Node& y = b.nodes_[i];
      if (x.leaf != y.leaf || x.label != y.label) return false;
      if (!x.leaf && (x.column != y.column || x.threshold != y.threshold || x.plus != y.plus || x.minus != y.minus))
        return false;
    }
    return true;
  }

 private:
  friend class TreeGrower;

  std::size_t append(const ClassTree& sub) {
    const std::size_t offset = nodes_.size();
    for (Node n : sub.nodes_) {
      if (!n.leaf) {
        n.plus += offset;
        n.minus += offset;
      }
      nodes_.push_back(n);
    }
    return offset;
  }

  void reindex() {
    leaves_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].leaf) {
        nodes_[i].leaf_id = leaves_.size();
        leaves_.push_back(i);
      }
  }

  void collect(std::size_t i, Region r, std::vector<Region>& out) const {
    const Node& n = nodes_[i];
    if (n.leaf) {
      out[n.leaf_id] = std::move(r);
      return;
    }
    Region minus = r;
    r[n.column] &= below_mask(n.threshold);
    minus[n.column] &= static_cast<std::uint8_t>(~below_mask(n.threshold) & 0b111);
    collect(n.plus, std::move(r), out);
    collect(n.minus, std::move(minus), out);
  }

  std::size_t depth_of(std::size_t i) const {
    if (nodes_[i].leaf) return 0;
    return 1 + std::max(depth_of(nodes_[i].plus), depth_of(nodes_[i].minus));
  }

  std::string render(std::size_t i, const std::vector<std::string>& names) const {
    const Node& n = nodes_[i];
    if (n.leaf) return n.label == kCase ? "+1" : "-1";
    const std::string var = n.column < names.size() ? names[n.column] : "x" + std::to_string(n.column + 1);
    return "[" + var + "<=" + std::to_string(n.threshold) + " ? " + render(n.plus, names) + " : " +
           render(n.minus, names) + "]";
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> leaves_;
};

namespace detail {

// Rows as positions into parallel (row, label, weight) arrays.
struct TrainingView {
  const Dataset& ds;
  const Subsample& rows;
  const std::vector<Label>& labels;
  const std::vector<double>& weights;
};

inline std::optional<Split> best_split_positions(const TrainingView& tv, const std::vector<std::size_t>& pos,
                                                 const std::vector<std::size_t>& columns, std::size_t min_node,
                                                 double parent_gini, SplitCriterion criterion) {
  const std::size_t floor = std::max<std::size_t>(min_node, 1);
  std::optional<Split> best;
  for (std::size_t i : columns) {
    double wc[3] = {0, 0, 0}, wk[3] = {0, 0, 0};
    std::size_t cnt[3] = {0, 0, 0};
    for (std::size_t p : pos) {
      const Genotype v = tv.ds.at(tv.rows[p], i);
      ++cnt[v];
      (tv.labels[p] == kCase ? wc : wk)[v] += tv.weights[p];
    }
    for (Genotype t = 0; t <= 1; ++t) {
      double pc = 0, pk = 0, mc = 0, mk = 0;
      std::size_t pn = 0, mn = 0;
      for (Genotype v = 0; v < 3; ++v) {
        if (v <= t) {
          pc += wc[v];
          pk += wk[v];
          pn += cnt[v];
        } else {
          mc += wc[v];
          mk += wk[v];
          mn += cnt[v];
        }
      }
      if (pn < floor || mn < floor) continue;
      double score = gini_index(pc, pk) + gini_index(mc, mk);
      if (criterion == SplitCriterion::weighted) {
        const double wp = pc + pk, wm = mc + mk;
        score = wp + wm > 0.0 ? (wp * gini_index(pc, pk) + wm * gini_index(mc, mk)) / (wp + wm) : 0.0;
      }
      if (!best || score < best->score) best = Split{i, t, score};
    }
  }
  // Only strictly informative partitions are made.
  if (best && !(best->score < parent_gini - 1e-12)) return std::nullopt;
  return best;
}

}  // namespace detail

// Best (i, t) for the rows of S, or nullopt when no admissible split lowers
// the summed Gini below G(S). Ties go to the smaller column, then threshold.
inline std::optional<Split> best_split(const Dataset& ds, const Subsample& s, std::size_t min_node = 5,
                                       SplitCriterion criterion = SplitCriterion::summed) {
  check_subsample(ds, s, "cart");
  std::vector<Label> labels(s.size());
  for (std::size_t p = 0; p < s.size(); ++p) labels[p] = ds.label(s[p]);
  const std::vector<double> weights(s.size(), 1.0);
  std::vector<std::size_t> pos(s.size()), cols(ds.cols());
  for (std::size_t p = 0; p < s.size(); ++p) pos[p] = p;
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  const ClassCounts c = count_classes(ds, s);
  return detail::best_split_positions({ds, s, labels, weights}, pos, cols, min_node,
                                      gini_index(static_cast<double>(c.cases), static_cast<double>(c.controls)),
                                      criterion);
}

// Restricted to the rows of S lying in a region.
inline std::optional<Split> best_split(const Dataset& ds, const Subsample& s, const Region& region,
                                       std::size_t min_node = 5, SplitCriterion criterion = SplitCriterion::summed) {
  Subsample in;
  for (std::size_t j : s)
    if (in_region(region, ds.row(j))) in.push_back(j);
  if (in.empty()) raise(ErrorKind::precondition, "cart", "region holds no training rows");
  return best_split(ds, in, min_node, criterion);
}

class TreeGrower {
 public:
  TreeGrower(const Dataset& ds, const Subsample& rows, const std::vector<Label>& labels,
             const std::vector<double>& weights, const TreeConfig& cfg, std::uint64_t seed)
      : tv_{ds, rows, labels, weights}, cfg_(cfg), rng_(make_rng(seed)) {}

  ClassTree grow() {
    check_tree_config(cfg_);
    std::vector<std::size_t> all(tv_.rows.size());
    for (std::size_t p = 0; p < all.size(); ++p) all[p] = p;
    tree_.nodes_.clear();
    open_.clear();
    add_leaf(std::move(all));
    std::size_t leaves = 1;
    while (leaves < cfg_.max_leaves) {
      // Expand the splittable leaf with the largest size x Gini.
      std::optional<std::size_t> pick;
      for (std::size_t k = 0; k < open_.size(); ++k) {
        if (!open_[k].split) continue;
        if (!pick || open_[k].priority > open_[*pick].priority) pick = k;
      }
      if (!pick) break;
      Open leaf = std::move(open_[*pick]);
      open_.erase(open_.begin() + static_cast<std::ptrdiff_t>(*pick));
      std::vector<std::size_t> plus, minus;
      for (std::size_t p : leaf.pos)
        (tv_.ds.at(tv_.rows[p], leaf.split->column) <= leaf.split->threshold ? plus : minus).push_back(p);
      auto& node = tree_.nodes_[leaf.node];
      node.leaf = false;
      node.column = leaf.split->column;
      node.threshold = leaf.split->threshold;
      const std::size_t pi = add_leaf(std::move(plus));
      const std::size_t mi = add_leaf(std::move(minus));
      tree_.nodes_[leaf.node].plus = pi;
      tree_.nodes_[leaf.node].minus = mi;
      ++leaves;
    }
    tree_.reindex();
    return tree_;
  }

 private:
  struct Open {
    std::size_t node;
    std::vector<std::size_t> pos;
    std::optional<Split> split;
    double priority;
  };

  std::size_t add_leaf(std::vector<std::size_t> pos) {
    ClassTree::Node n;
    for (std::size_t p : pos) (tv_.labels[p] == kCase ? n.case_weight : n.control_weight) += tv_.weights[p];
    n.label = n.case_weight > n.control_weight ? kCase : kControl;
    const std::size_t id = tree_.nodes_.size();
    tree_.nodes_.push_back(n);
    const double g = gini_index(n.case_weight, n.control_weight);
    Open o{id, std::move(pos), std::nullopt, (n.case_weight + n.control_weight) * g};
    if (g > 0.0) o.split = detail::best_split_positions(tv_, o.pos, columns(), cfg_.min_node, g, cfg_.criterion);
    open_.push_back(std::move(o));
    return id;
  }

  std::vector<std::size_t> columns() {
    const std::size_t n = tv_.ds.cols();
    std::vector<std::size_t> cols(n);
    for (std::size_t i = 0; i < n; ++i) cols[i] = i;
    if (cfg_.features_per_split && *cfg_.features_per_split < n) {
      fisher_yates(std::span<std::size_t>(cols), rng_);
      cols.resize(*cfg_.features_per_split);
      std::sort(cols.begin(), cols.end());
    }
    return cols;
  }

  detail::TrainingView tv_;
  TreeConfig cfg_;
  Rng rng_;
  ClassTree tree_;
  std::vector<Open> open_;
};

// CART on rows S (repeats allowed, as in a bootstrap sample).
inline ClassTree grow_tree(const Dataset& ds, const Subsample& s, const TreeConfig& cfg = {}, std::uint64_t seed = 0) {
  check_subsample(ds, s, "cart");
  if (s.empty()) raise(ErrorKind::precondition, "cart", "cannot grow a tree on an empty subsample");
  std::vector<Label> labels(s.size());
  for (std::size_t p = 0; p < s.size(); ++p) labels[p] = ds.label(s[p]);
  const std::vector<double> weights(s.size(), 1.0);
  return TreeGrower(ds, s, labels, weights, cfg, seed).grow();
}

// CART on externally supplied labels and row weights.
inline ClassTree grow_tree_weighted(const Dataset& ds, const Subsample& s, const std::vector<Label>& labels,
                                    const std::vector<double>& weights, const TreeConfig& cfg = {},
                                    std::uint64_t seed = 0) {
  check_subsample(ds, s, "cart");
  if (s.empty()) raise(ErrorKind::precondition, "cart", "cannot grow a tree on an empty subsample");
  if (labels.size() != s.size() || weights.size() != s.size())
    raise(ErrorKind::parameter, "cart", "labels and weights must match the subsample");
  return TreeGrower(ds, s, labels, weights, cfg, seed).grow();
}

inline TrainedModel cart_trainer(TreeConfig cfg = {}) {
  return [cfg](const Dataset& ds, const Subsample& s, std::uint64_t seed) {
    return grow_tree(ds, s, cfg, seed).as_prediction_fn();
  };
}

}  // namespace snpassoc
