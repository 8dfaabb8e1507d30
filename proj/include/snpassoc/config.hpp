#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "snpassoc/cart.hpp"
#include "snpassoc/dataset.hpp"
#include "snpassoc/ensemble.hpp"
#include "snpassoc/logicreg.hpp"
#include "snpassoc/mdr.hpp"
#include "snpassoc/synth.hpp"

namespace snpassoc {

// Raised for an invalid run configuration; `where` is the key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& msg)
      : std::runtime_error(where + ": " + msg), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

struct DatasetBlock {
  std::string path;  // resolved against the config file's directory
  CsvSchema schema;
};

struct PermBlock {
  std::size_t replicates = 100;
  double alpha = 0.05;
};

struct MdrParams {
  MdrSearchOptions search;
  std::vector<std::string> restrict_to;
  std::size_t top = 10;
};

struct LrParams {
  AnnealOptions anneal;
};

struct CartParams {
  TreeConfig tree;
};

struct RfParams {
  RfConfig rf;
};

struct SgbGrid {
  std::vector<std::size_t> leaves, stages;
  std::vector<double> rho, eta;
  bool empty() const { return leaves.empty() && stages.empty() && rho.empty() && eta.empty(); }
};

struct SgbParams {
  SgbConfig sgb;
  SgbGrid grid;
};

struct CvimParams {
  CvimConfig cvim;
};

struct SynthParams {
  GenSpec spec;
  std::string output;  // CSV destination, resolved
  std::vector<std::string> names;
};

using MethodParams = std::variant<MdrParams, LrParams, CartParams, RfParams, SgbParams, CvimParams, SynthParams>;

struct RunConfig {
  std::string source;  // config file path
  std::string text;    // verbatim config
  std::uint64_t seed = 1;
  std::size_t folds = 6;
  bool shuffle = true;
  std::optional<unsigned> workers;
  std::string output;
  std::optional<DatasetBlock> dataset;
  std::size_t balance_repeats = 0;
  std::optional<PermBlock> permtest;
  std::string method;  // mdr | mdrir | logicreg | cart | rf | sgb | cvim | synth
  bool via_permtest_block = false;
  MethodParams params;
};

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"mdr", "mdrir", "logicreg", "cart", "rf", "sgb", "cvim", "permtest", "synth"};
  return names;
}

namespace detail {

// Map reader that tracks the key path and rejects unknown keys.
class Block {
 public:
  Block(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_, "expected a mapping");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const {
    seen_.insert(key);
    return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull();
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return convert<T>(node_[key], at(key));
  }

  template <class T>
  T require(const std::string& key) const {
    if (!has(key)) throw ConfigError(at(key), "required key is missing");
    return convert<T>(node_[key], at(key));
  }

  template <class T>
  std::vector<T> list(const std::string& key) const {
    if (!has(key)) return {};
    const YAML::Node n = node_[key];
    if (n.IsScalar()) return {convert<T>(n, at(key))};
    if (!n.IsSequence()) throw ConfigError(at(key), "expected a list");
    std::vector<T> out;
    for (std::size_t k = 0; k < n.size(); ++k) out.push_back(convert<T>(n[k], at(key) + "[" + std::to_string(k) + "]"));
    return out;
  }

  Block child(const std::string& key) const {
    has(key);
    return Block(node_ && node_.IsMap() ? node_[key] : YAML::Node(), at(key));
  }

  YAML::Node raw(const std::string& key) const {
    has(key);
    return node_[key];
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError(at(key), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

  template <class T>
  static T convert(const YAML::Node& n, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> || std::is_same_v<T, unsigned>) {
        const auto s = n.as<std::string>();
        if (!s.empty() && s[0] == '-') throw ConfigError(where, "must not be negative");
        return n.as<T>();
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      throw ConfigError(where, "cannot read value '" + (n.IsScalar() ? n.Scalar() : std::string("<node>")) + "'");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

inline void ensure(bool ok, const std::string& where, const std::string& msg) {
  if (!ok) throw ConfigError(where, msg);
}

inline std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path.string();
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

inline SplitCriterion read_criterion(const Block& b, SplitCriterion fallback) {
  const auto s = b.get<std::string>("criterion", to_string(fallback));
  if (s == "summed") return SplitCriterion::summed;
  if (s == "weighted") return SplitCriterion::weighted;
  throw ConfigError(b.at("criterion"), "expected summed or weighted");
}

inline TreeConfig read_tree(const Block& b, TreeConfig t) {
  t.max_leaves = b.get<std::size_t>("max_leaves", t.max_leaves);
  t.min_node = b.get<std::size_t>("min_node", t.min_node);
  t.criterion = read_criterion(b, t.criterion);
  if (b.has("features_per_split")) t.features_per_split = b.get<std::size_t>("features_per_split", 0);
  ensure(t.max_leaves >= 1, b.at("max_leaves"), "must be at least 1");
  ensure(!t.features_per_split || *t.features_per_split >= 1, b.at("features_per_split"), "must be at least 1");
  return t;
}

inline StructureModel read_model(const std::string& s, const std::string& where) {
  if (s == "unconstrained") return StructureModel::unconstrained;
  if (s == "model1") return StructureModel::model1;
  if (s == "model2") return StructureModel::model2;
  if (s == "model3") return StructureModel::model3;
  if (s == "model4") return StructureModel::model4;
  throw ConfigError(where, "expected unconstrained, model1, model2, model3 or model4");
}

inline std::size_t read_column(const YAML::Node& n, const std::string& where, std::size_t cols,
                               const std::vector<std::string>& names) {
  const auto s = Block::convert<std::string>(n, where);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return i;
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size() && v >= 1 && static_cast<std::size_t>(v) <= cols) return static_cast<std::size_t>(v - 1);
  } catch (const std::exception&) {
  }
  throw ConfigError(where, "unknown predictor '" + s + "' (use a name or a 1-based index)");
}

inline GenSpec read_genspec(const Block& b, std::vector<std::string>* names) {
  GenSpec g;
  g.N = b.require<std::size_t>("N");
  g.n = b.require<std::size_t>("n");
  ensure(g.N >= 1, b.at("N"), "must be at least 1");
  ensure(g.n >= 1, b.at("n"), "must be at least 1");
  names->clear();
  for (std::size_t i = 0; i < g.n; ++i) names->push_back("x" + std::to_string(i + 1));
  if (b.has("maf")) {
    g.allele_freqs = {hardy_weinberg(b.get<double>("maf", 0.0))};
  } else if (b.has("allele_freqs")) {
    const YAML::Node f = b.raw("allele_freqs");
    ensure(f.IsSequence() && f.size() > 0, b.at("allele_freqs"), "expected a list of [p0, p1, p2] triples");
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::string w = b.at("allele_freqs") + "[" + std::to_string(i) + "]";
      ensure(f[i].IsSequence() && f[i].size() == 3, w, "expected [p0, p1, p2]");
      g.allele_freqs.push_back({Block::convert<double>(f[i][0], w), Block::convert<double>(f[i][1], w),
                                Block::convert<double>(f[i][2], w)});
    }
  } else {
    g.allele_freqs = {uniform_freqs()};
  }
  g.baseline = b.get<double>("baseline", g.baseline);
  g.noise = b.get<double>("noise", g.noise);
  const auto comb = b.get<std::string>("combination", "max");
  if (comb == "max") g.combination = EffectCombination::max;
  else if (comb == "additive") g.combination = EffectCombination::additive;
  else if (comb == "multiplicative") g.combination = EffectCombination::multiplicative;
  else throw ConfigError(b.at("combination"), "expected max, additive or multiplicative");
  if (b.has("effects")) {
    const YAML::Node es = b.raw("effects");
    ensure(es.IsSequence(), b.at("effects"), "expected a list");
    for (std::size_t k = 0; k < es.size(); ++k) {
      Block e(es[k], b.at("effects") + "[" + std::to_string(k) + "]");
      PlantedEffect eff;
      const YAML::Node combo = e.raw("combo");
      ensure(combo && combo.IsSequence() && combo.size() > 0, e.at("combo"), "expected a list of predictors");
      for (std::size_t c = 0; c < combo.size(); ++c)
        eff.combo.indices.push_back(read_column(combo[c], e.at("combo"), g.n, *names));
      std::sort(eff.combo.indices.begin(), eff.combo.indices.end());
      ensure(std::adjacent_find(eff.combo.indices.begin(), eff.combo.indices.end()) == eff.combo.indices.end(),
             e.at("combo"), "predictors must be distinct");
      if (e.has("parity")) {
        ensure(eff.combo.order() == 2, e.at("parity"), "parity effects take exactly two predictors");
        const Block p = e.child("parity");
        eff = parity_effect(eff.combo.indices[0], eff.combo.indices[1], p.get<double>("high", 0.9), p.get<double>("low", 0.1));
        p.finish();
      } else {
        eff.penetrance = e.list<double>("penetrance");
        ensure(eff.penetrance.size() == pow3(eff.combo.order()), e.at("penetrance"),
               "needs " + std::to_string(pow3(eff.combo.order())) + " entries");
      }
      e.finish();
      g.effects.push_back(std::move(eff));
    }
  }
  try {
    validate(g);
  } catch (const Error& err) {
    throw ConfigError(b.path(), err.what());
  }
  return g;
}

inline MethodParams read_method(const Block& m, const std::string& name, const std::string& base_dir) {
  if (name == "mdr" || name == "mdrir") {
    MdrParams p;
    p.search.variant = name == "mdr" ? MdrVariant::classic : MdrVariant::independent_rule;
    p.search.r_min = m.get<std::size_t>("r_min", p.search.r_min);
    p.search.r_max = m.get<std::size_t>("r_max", p.search.r_max);
    p.search.max_cell_updates = m.get<double>("max_cell_updates", p.search.max_cell_updates);
    p.search.mdrir.add_one_smoothing = m.get<bool>("add_one_smoothing", p.search.mdrir.add_one_smoothing);
    p.restrict_to = m.list<std::string>("restrict_to");
    p.top = m.get<std::size_t>("top", p.top);
    ensure(p.search.r_min >= 1, m.at("r_min"), "must be at least 1");
    ensure(p.search.r_max >= p.search.r_min, m.at("r_max"), "must be at least r_min");
    return p;
  }
  if (name == "logicreg") {
    LrParams p;
    auto& a = p.anneal;
    a.trees = m.get<std::size_t>("trees", a.trees);
    a.r_max = m.get<std::size_t>("r_max", a.r_max);
    a.model = read_model(m.get<std::string>("model", "unconstrained"), m.at("model"));
    a.restarts = m.get<std::size_t>("restarts", a.restarts);
    a.refit_per_fold = m.get<bool>("refit_per_fold", a.refit_per_fold);
    const Block s = m.child("schedule");
    const auto kind = s.get<std::string>("kind", "geometric");
    if (kind == "geometric") a.schedule.kind = CoolingSchedule::Kind::geometric;
    else if (kind == "descent") a.schedule.kind = CoolingSchedule::Kind::descent;
    else throw ConfigError(s.at("kind"), "expected geometric or descent");
    if (s.has("initial_temperature")) a.schedule.initial_temperature = s.get<double>("initial_temperature", 0.0);
    a.schedule.final_ratio = s.get<double>("final_ratio", a.schedule.final_ratio);
    a.schedule.steps = s.get<std::size_t>("steps", a.schedule.steps);
    a.schedule.probe_forests = s.get<std::size_t>("probe_forests", a.schedule.probe_forests);
    s.finish();
    const Block b = m.child("beta");
    a.beta.tol = b.get<double>("tol", a.beta.tol);
    a.beta.max_iter = b.get<std::size_t>("max_iter", a.beta.max_iter);
    a.beta.step_cap = b.get<double>("step_cap", a.beta.step_cap);
    b.finish();
    ensure(a.trees >= 1, m.at("trees"), "must be at least 1");
    ensure(a.r_max >= 1, m.at("r_max"), "must be at least 1");
    ensure(a.restarts >= 1, m.at("restarts"), "must be at least 1");
    ensure(a.schedule.steps >= 1, s.at("steps"), "must be at least 1");
    ensure(!a.schedule.initial_temperature || *a.schedule.initial_temperature > 0, s.at("initial_temperature"),
           "must be positive");
    ensure(a.schedule.final_ratio > 0, s.at("final_ratio"), "must be positive");
    return p;
  }
  if (name == "cart") {
    CartParams p;
    p.tree = read_tree(m, p.tree);
    return p;
  }
  if (name == "rf") {
    RfParams p;
    if (m.has("trees")) p.rf.trees = m.get<std::size_t>("trees", 0);
    ensure(!p.rf.trees || *p.rf.trees >= 1, m.at("trees"), "must be at least 1");
    p.rf.tree = read_tree(m, p.rf.tree);
    return p;
  }
  if (name == "sgb") {
    SgbParams p;
    auto& c = p.sgb;
    c.leaves = m.get<std::size_t>("leaves", c.leaves);
    c.stages = m.get<std::size_t>("stages", c.stages);
    c.rho = m.get<double>("rho", c.rho);
    c.eta = m.get<double>("eta", c.eta);
    c.min_node = m.get<std::size_t>("min_node", c.min_node);
    c.subsample_weights = m.get<bool>("subsample_weights", c.subsample_weights);
    c.criterion = read_criterion(m, c.criterion);
    const Block g = m.child("grid");
    p.grid.leaves = g.list<std::size_t>("leaves");
    p.grid.stages = g.list<std::size_t>("stages");
    p.grid.rho = g.list<double>("rho");
    p.grid.eta = g.list<double>("eta");
    g.finish();
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    ensure(c.leaves >= 1, m.at("leaves"), "must be at least 1");
    ensure(c.stages >= 1, m.at("stages"), "must be at least 1");
    ensure(in_unit(c.rho), m.at("rho"), "must lie in (0,1]");
    ensure(in_unit(c.eta), m.at("eta"), "must lie in (0,1]");
    for (auto v : p.grid.leaves) ensure(v >= 1, g.at("leaves"), "entries must be at least 1");
    for (auto v : p.grid.stages) ensure(v >= 1, g.at("stages"), "entries must be at least 1");
    for (auto v : p.grid.rho) ensure(in_unit(v), g.at("rho"), "entries must lie in (0,1]");
    for (auto v : p.grid.eta) ensure(in_unit(v), g.at("eta"), "entries must lie in (0,1]");
    return p;
  }
  if (name == "cvim") {
    CvimParams p;
    p.cvim.replicates = m.get<std::size_t>("replicates", p.cvim.replicates);
    p.cvim.level = m.get<double>("level", p.cvim.level);
    p.cvim.tree = read_tree(m, p.cvim.tree);
    ensure(p.cvim.replicates >= 1, m.at("replicates"), "must be at least 1");
    ensure(p.cvim.level > 0 && p.cvim.level < 1, m.at("level"), "must lie in (0,1)");
    return p;
  }
  if (name == "synth") {
    SynthParams p;
    p.spec = read_genspec(m, &p.names);
    p.output = resolve(base_dir, m.require<std::string>("output"));
    return p;
  }
  throw ConfigError(m.at("name"), "unknown method '" + name + "'");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source, std::string("not valid YAML: ") + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError(source, "empty configuration");
  const std::string base_dir =
      source == "<config>" ? std::string() : std::filesystem::path(source).parent_path().string();
  detail::Block top(root, "");
  RunConfig cfg;
  cfg.source = source;
  cfg.text = text;
  cfg.seed = top.get<std::uint64_t>("seed", cfg.seed);
  cfg.folds = top.get<std::size_t>("folds", cfg.folds);
  cfg.shuffle = top.get<bool>("shuffle", cfg.shuffle);
  if (top.has("workers")) cfg.workers = top.get<unsigned>("workers", 1);
  cfg.output = detail::resolve(base_dir, top.get<std::string>("output", ""));
  detail::ensure(cfg.folds >= 2, "folds", "must be at least 2");
  detail::ensure(!cfg.workers || *cfg.workers >= 1, "workers", "must be at least 1");

  if (top.has("dataset")) {
    const detail::Block d = top.child("dataset");
    DatasetBlock db;
    db.path = detail::resolve(base_dir, d.require<std::string>("path"));
    db.schema.phenotype = d.get<std::string>("phenotype", db.schema.phenotype);
    const auto coding = d.get<std::string>("coding", "plus_minus_one");
    if (coding == "plus_minus_one") db.schema.coding = PhenotypeCoding::plus_minus_one;
    else if (coding == "zero_one") db.schema.coding = PhenotypeCoding::zero_one;
    else throw ConfigError(d.at("coding"), "expected plus_minus_one or zero_one");
    const auto sep = d.get<std::string>("separator", ",");
    detail::ensure(sep.size() == 1 || sep == "\\t", d.at("separator"), "must be a single character");
    db.schema.separator = sep == "\\t" ? '\t' : sep[0];
    db.schema.predictors = d.list<std::string>("predictors");
    db.schema.external = d.list<std::string>("external");
    db.schema.require_both_classes = true;
    d.finish();
    cfg.dataset = db;
  }
  if (top.has("balance")) {
    const detail::Block b = top.child("balance");
    cfg.balance_repeats = b.get<std::size_t>("repeats", 1);
    b.finish();
  }
  if (top.has("permtest")) {
    const detail::Block p = top.child("permtest");
    PermBlock pb;
    pb.replicates = p.get<std::size_t>("replicates", pb.replicates);
    pb.alpha = p.get<double>("alpha", pb.alpha);
    detail::ensure(pb.replicates >= 1, p.at("replicates"), "must be at least 1");
    detail::ensure(pb.alpha > 0 && pb.alpha < 1, p.at("alpha"), "must lie in (0,1)");
    p.finish();
    cfg.permtest = pb;
  }

  detail::ensure(top.has("method"), "method", "required key is missing");
  detail::Block m = top.child("method");
  cfg.method = m.require<std::string>("name");
  if (cfg.method == "permtest") {
    // A permutation test of a nested model block.
    PermBlock pb;
    pb.replicates = m.get<std::size_t>("replicates", pb.replicates);
    pb.alpha = m.get<double>("alpha", pb.alpha);
    detail::ensure(pb.replicates >= 1, m.at("replicates"), "must be at least 1");
    detail::ensure(pb.alpha > 0 && pb.alpha < 1, m.at("alpha"), "must lie in (0,1)");
    detail::ensure(!cfg.permtest, "permtest", "give the permutation test either as a method or as a block, not both");
    cfg.permtest = pb;
    cfg.via_permtest_block = true;
    detail::ensure(m.has("target"), m.at("target"), "required key is missing");
    m.finish();
    m = top.child("method").child("target");
    cfg.method = m.require<std::string>("name");
    detail::ensure(cfg.method != "permtest" && cfg.method != "synth" && cfg.method != "cvim", m.at("name"),
                   "permutation tests apply to mdr, mdrir, logicreg, cart, rf or sgb");
  }
  cfg.params = detail::read_method(m, cfg.method, base_dir);
  m.finish();
  top.finish();

  if (cfg.method == "synth") {
    detail::ensure(!cfg.permtest, "permtest", "not available for synth");
  } else {
    detail::ensure(cfg.dataset.has_value(), "dataset", "required for method " + cfg.method);
  }
  if (cfg.method == "cvim") detail::ensure(!cfg.permtest, "permtest", "not available for cvim");
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open configuration file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace snpassoc
