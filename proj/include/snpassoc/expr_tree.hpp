#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "snpassoc/common.hpp"
#include "snpassoc/dataset.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

enum class TreeOp : std::uint8_t { sum, product };

// Binary expression tree over ternary variables with mod-3 sum and product
// knots, stored in prefix order. A subtree is the contiguous token range
// [i, subtree_end(i)), which makes the neighbour moves simple splices.
class ExprTree {
 public:
  struct Token {
    bool leaf = true;
    TreeOp op = TreeOp::sum;  // knots only
    std::uint32_t variable = 0;  // leaves only
    friend bool operator==(const Token&, const Token&) = default;
  };

  ExprTree() = default;
  explicit ExprTree(std::vector<Token> tokens) : tokens_(std::move(tokens)) { validate(); }

  static ExprTree leaf(std::size_t variable) {
    return ExprTree({Token{true, TreeOp::sum, static_cast<std::uint32_t>(variable)}});
  }
  static ExprTree knot(TreeOp op, const ExprTree& left, const ExprTree& right) {
    std::vector<Token> t{Token{false, op, 0}};
    t.insert(t.end(), left.tokens_.begin(), left.tokens_.end());
    t.insert(t.end(), right.tokens_.begin(), right.tokens_.end());
    return ExprTree(std::move(t));
  }

  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool is_leaf(std::size_t i) const { return tokens_[i].leaf; }

  // Complexity C(T): number of leaves.
  std::size_t complexity() const {
    return static_cast<std::size_t>(std::count_if(tokens_.begin(), tokens_.end(), [](const Token& t) { return t.leaf; }));
  }

  std::size_t subtree_end(std::size_t i) const {
    std::size_t need = 1;
    while (need > 0) {
      need += tokens_[i].leaf ? 0 : 2;
      --need;
      ++i;
    }
    return i;
  }
  std::size_t left_child(std::size_t i) const { return i + 1; }
  std::size_t right_child(std::size_t i) const { return subtree_end(i + 1); }

  ExprTree subtree(std::size_t i) const {
    return ExprTree(std::vector<Token>(tokens_.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens_.begin() + static_cast<std::ptrdiff_t>(subtree_end(i))));
  }

  // Copy with the subtree at i replaced by `with`.
  ExprTree replace(std::size_t i, const ExprTree& with) const {
    std::vector<Token> t(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(i));
    t.insert(t.end(), with.tokens_.begin(), with.tokens_.end());
    t.insert(t.end(), tokens_.begin() + static_cast<std::ptrdiff_t>(subtree_end(i)), tokens_.end());
    return ExprTree(std::move(t));
  }

  // Parent position of every token (-1 for the root).
  std::vector<std::ptrdiff_t> parents() const {
    std::vector<std::ptrdiff_t> p(tokens_.size(), -1);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].leaf) continue;
      p[left_child(i)] = static_cast<std::ptrdiff_t>(i);
      p[right_child(i)] = static_cast<std::ptrdiff_t>(i);
    }
    return p;
  }

  Genotype eval(RowView x) const {
    std::size_t pos = 0;
    return eval_at(x, pos);
  }

  std::string to_string(const std::vector<std::string>& names = {}) const {
    std::size_t pos = 0;
    return print_at(names, pos);
  }

  friend bool operator==(const ExprTree&, const ExprTree&) = default;

 private:
  Genotype eval_at(RowView x, std::size_t& pos) const {
    const Token& t = tokens_[pos++];
    if (t.leaf) return x[t.variable];
    const unsigned a = eval_at(x, pos);
    const unsigned b = eval_at(x, pos);
    return static_cast<Genotype>(t.op == TreeOp::sum ? (a + b) % 3 : (a * b) % 3);
  }

  std::string print_at(const std::vector<std::string>& names, std::size_t& pos) const {
    const Token& t = tokens_[pos++];
    if (t.leaf)
      return t.variable < names.size() ? names[t.variable] : "x" + std::to_string(t.variable + 1);
    std::string a = print_at(names, pos);
    std::string b = print_at(names, pos);
    return "(" + a + (t.op == TreeOp::sum ? " + " : " * ") + b + ")";
  }

  void validate() const {
    if (tokens_.empty()) raise(ErrorKind::parameter, "logicreg", "empty expression tree");
    std::size_t need = 1;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (need == 0) raise(ErrorKind::parameter, "logicreg", "malformed expression tree");
      need += tokens_[i].leaf ? 0 : 2;
      --need;
    }
    if (need != 0) raise(ErrorKind::parameter, "logicreg", "malformed expression tree");
  }

  std::vector<Token> tokens_;
};

// Parses the printed form, e.g. "((x1 * x2) * (x3 + x4))". Variables are
// dataset names or x<k> (1-based).
inline ExprTree parse_tree(const std::string& text, const std::vector<std::string>& names = {}) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto fail = [&](const std::string& why) -> void {
    raise(ErrorKind::parameter, "logicreg", "cannot parse tree '" + text + "': " + why);
  };
  std::function<ExprTree()> parse = [&]() -> ExprTree {
    skip();
    if (pos >= text.size()) fail("unexpected end");
    if (text[pos] == '(') {
      ++pos;
      ExprTree a = parse();
      skip();
      if (pos >= text.size() || (text[pos] != '+' && text[pos] != '*')) fail("expected + or *");
      const TreeOp op = text[pos] == '+' ? TreeOp::sum : TreeOp::product;
      ++pos;
      ExprTree b = parse();
      skip();
      if (pos >= text.size() || text[pos] != ')') fail("expected )");
      ++pos;
      return ExprTree::knot(op, a, b);
    }
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) && text[pos] != ')' &&
           text[pos] != '(' && text[pos] != '+' && text[pos] != '*')
      ++pos;
    const std::string name = text.substr(start, pos - start);
    if (name.empty()) fail("expected a variable");
    auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return ExprTree::leaf(static_cast<std::size_t>(it - names.begin()));
    if (name.size() > 1 && name[0] == 'x' &&
        std::all_of(name.begin() + 1, name.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      const std::size_t k = std::stoul(name.substr(1));
      if (k == 0) fail("variables are 1-based");
      return ExprTree::leaf(k - 1);
    }
    fail("unknown variable '" + name + "'");
    return {};
  };
  ExprTree t = parse();
  skip();
  if (pos != text.size()) fail("trailing characters");
  return t;
}

// ---------------------------------------------------------------------------
// Structural models restricting where external factors may appear.

enum class StructureModel {
  unconstrained,
  model1,  // external factors only as single-leaf trees
  model2,  // external leaf sits under a product knot whose sibling is a genetic leaf
  model3,  // external factors only
  model4,  // genetic factors only
};

inline const char* to_string(StructureModel m) {
  switch (m) {
    case StructureModel::unconstrained: return "unconstrained";
    case StructureModel::model1: return "model1";
    case StructureModel::model2: return "model2";
    case StructureModel::model3: return "model3";
    case StructureModel::model4: return "model4";
  }
  return "?";
}

inline bool satisfies(const ExprTree& t, StructureModel model, const std::vector<PredictorKind>& kinds) {
  const auto& tok = t.tokens();
  auto external = [&](std::size_t i) { return tok[i].leaf && kinds[tok[i].variable] == PredictorKind::external; };
  auto genetic = [&](std::size_t i) { return tok[i].leaf && kinds[tok[i].variable] == PredictorKind::genetic; };
  for (const auto& k : tok)
    if (k.leaf && k.variable >= kinds.size()) return false;
  switch (model) {
    case StructureModel::unconstrained:
      return true;
    case StructureModel::model1:
      if (t.size() == 1) return true;
      for (std::size_t i = 0; i < tok.size(); ++i)
        if (external(i)) return false;
      return true;
    case StructureModel::model2: {
      const auto parent = t.parents();
      for (std::size_t i = 0; i < tok.size(); ++i) {
        if (!external(i)) continue;
        if (parent[i] < 0) return false;
        const auto p = static_cast<std::size_t>(parent[i]);
        if (tok[p].op != TreeOp::product) return false;
        const std::size_t sibling = t.left_child(p) == i ? t.right_child(p) : t.left_child(p);
        if (!genetic(sibling)) return false;
      }
      return true;
    }
    case StructureModel::model3:
      for (std::size_t i = 0; i < tok.size(); ++i)
        if (tok[i].leaf && !external(i)) return false;
      return true;
    case StructureModel::model4:
      for (std::size_t i = 0; i < tok.size(); ++i)
        if (tok[i].leaf && !genetic(i)) return false;
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Neighbour moves

enum class MoveKind {
  variable_change,
  operator_change,
  delete_leaf,     // knot with two leaf children -> one of them
  split_leaf,      // leaf x -> (x op x_j)
  branch_pruning,  // knot with a non-leaf child -> one of its children
  branch_growing,  // non-leaf branch B -> (x_j op B)
};

inline constexpr std::size_t kMoveKinds = 6;

inline const char* to_string(MoveKind m) {
  switch (m) {
    case MoveKind::variable_change: return "variable change";
    case MoveKind::operator_change: return "operator change";
    case MoveKind::delete_leaf: return "deleting a leaf";
    case MoveKind::split_leaf: return "splitting a leaf";
    case MoveKind::branch_pruning: return "branch pruning";
    case MoveKind::branch_growing: return "branch growing";
  }
  return "?";
}

struct TreeMove {
  MoveKind kind;
  ExprTree result;
};

// Every distinct neighbour of t reachable by one move, before constraint
// filtering. A neighbour reachable by two moves, such as (x * x) -> (x * (x * x))
// by splitting the right leaf or growing the root, is listed once under the
// earlier kind in MoveKind order.
inline std::vector<TreeMove> enumerate_moves(const ExprTree& t, std::size_t n_vars, std::size_t r_max) {
  std::vector<TreeMove> out;
  const auto& tok = t.tokens();
  const std::size_t leaves = t.complexity();
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (tok[i].leaf) {
      for (std::size_t v = 0; v < n_vars; ++v) {
        if (v == tok[i].variable) continue;
        out.push_back({MoveKind::variable_change, t.replace(i, ExprTree::leaf(v))});
      }
      if (leaves + 1 <= r_max) {
        for (TreeOp op : {TreeOp::sum, TreeOp::product})
          for (std::size_t v = 0; v < n_vars; ++v)
            out.push_back({MoveKind::split_leaf,
                           t.replace(i, ExprTree::knot(op, ExprTree::leaf(tok[i].variable), ExprTree::leaf(v)))});
      }
      continue;
    }
    {
      auto flipped = tok;
      flipped[i].op = tok[i].op == TreeOp::sum ? TreeOp::product : TreeOp::sum;
      out.push_back({MoveKind::operator_change, ExprTree(std::move(flipped))});
    }
    const std::size_t l = t.left_child(i), r = t.right_child(i);
    const MoveKind shrink = (tok[l].leaf && tok[r].leaf) ? MoveKind::delete_leaf : MoveKind::branch_pruning;
    out.push_back({shrink, t.replace(i, t.subtree(l))});
    out.push_back({shrink, t.replace(i, t.subtree(r))});
    if (leaves + 1 <= r_max) {
      const ExprTree branch = t.subtree(i);
      for (TreeOp op : {TreeOp::sum, TreeOp::product})
        for (std::size_t v = 0; v < n_vars; ++v)
          out.push_back({MoveKind::branch_growing, t.replace(i, ExprTree::knot(op, ExprTree::leaf(v), branch))});
    }
  }
  std::map<std::string, MoveKind> first;
  for (const auto& m : out) {
    auto [it, fresh] = first.emplace(m.result.to_string(), m.kind);
    if (!fresh && m.kind < it->second) it->second = m.kind;
  }
  std::vector<TreeMove> unique;
  for (auto& m : out) {
    auto it = first.find(m.result.to_string());
    if (it == first.end() || it->second != m.kind) continue;
    first.erase(it);
    unique.push_back(std::move(m));
  }
  return unique;
}

// Moves that turn `from` into `to`. Works from the tree shapes alone, without
// consulting enumerate_moves.
inline std::set<MoveKind> classify_move(const ExprTree& from, const ExprTree& to) {
  std::set<MoveKind> found;
  const auto& a = from.tokens();
  const auto& b = to.tokens();
  // Same shape: count differing leaves and knots.
  if (a.size() == b.size()) {
    bool same_shape = true;
    std::size_t var_diff = 0, op_diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].leaf != b[i].leaf) {
        same_shape = false;
        break;
      }
      if (a[i].leaf) var_diff += a[i].variable != b[i].variable;
      else op_diff += a[i].op != b[i].op;
    }
    if (same_shape) {
      if (var_diff == 1 && op_diff == 0) found.insert(MoveKind::variable_change);
      if (var_diff == 0 && op_diff == 1) found.insert(MoveKind::operator_change);
      return found;
    }
  }
  // Different shape: walk down while one side of each knot pair is identical,
  // then test the local rewrite at the point of difference.
  std::function<void(const ExprTree&, const ExprTree&)> walk = [&](const ExprTree& x, const ExprTree& y) {
    // Local rewrites at the root of x / y.
    if (!x.is_leaf(0)) {
      const ExprTree xl = x.subtree(x.left_child(0)), xr = x.subtree(x.right_child(0));
      if (y == xl || y == xr) {
        found.insert((xl.size() == 1 && xr.size() == 1) ? MoveKind::delete_leaf : MoveKind::branch_pruning);
      }
    }
    if (!y.is_leaf(0)) {
      const ExprTree yl = y.subtree(y.left_child(0)), yr = y.subtree(y.right_child(0));
      // Splitting keeps the old leaf on the left; growing puts the new leaf on the left.
      if (x.size() == 1 && yr.size() == 1 && yl == x) found.insert(MoveKind::split_leaf);
      if (x.size() > 1 && yl.size() == 1 && yr == x) found.insert(MoveKind::branch_growing);
    }
    if (!x.is_leaf(0) && !y.is_leaf(0) && x.tokens()[0].op == y.tokens()[0].op) {
      const ExprTree xl = x.subtree(x.left_child(0)), xr = x.subtree(x.right_child(0));
      const ExprTree yl = y.subtree(y.left_child(0)), yr = y.subtree(y.right_child(0));
      if (xl == yl && !(xr == yr)) walk(xr, yr);
      if (xr == yr && !(xl == yl)) walk(xl, yl);
    }
  };
  if (!(from == to)) walk(from, to);
  return found;
}

// The kind under which enumerate_moves lists `to` as a neighbour of `from`.
inline std::optional<MoveKind> canonical_move(const ExprTree& from, const ExprTree& to) {
  const auto found = classify_move(from, to);
  if (found.empty()) return std::nullopt;
  return *found.begin();
}

}  // namespace snpassoc
