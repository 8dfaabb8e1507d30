#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "snpassoc/common.hpp"
#include "snpassoc/random.hpp"

namespace snpassoc {

enum class PredictorKind { genetic, external };

inline const char* to_string(PredictorKind kind) {
  return kind == PredictorKind::genetic ? "genetic" : "external";
}

// Case-control sample: an N x n ternary predictor matrix (row-major) and a
// +/-1 phenotype vector. Immutable once built; every constructor validates.
class Dataset {
 public:
  Dataset(std::size_t rows, std::size_t cols, std::vector<Genotype> cells,
          std::vector<Label> phenotype, std::vector<std::string> names = {},
          std::vector<PredictorKind> kinds = {})
      : rows_(rows),
        cols_(cols),
        cells_(std::move(cells)),
        phenotype_(std::move(phenotype)),
        names_(std::move(names)),
        kinds_(std::move(kinds)) {
    if (rows_ == 0 || cols_ == 0) raise(ErrorKind::data, "dataset", "need N >= 1 and n >= 1");
    if (cells_.size() != rows_ * cols_)
      raise(ErrorKind::data, "dataset", "predictor matrix size does not match N x n");
    if (phenotype_.size() != rows_)
      raise(ErrorKind::data, "dataset", "phenotype length does not match N");
    if (names_.empty()) {
      for (std::size_t i = 0; i < cols_; ++i) names_.push_back("x" + std::to_string(i + 1));
    }
    if (kinds_.empty()) kinds_.assign(cols_, PredictorKind::genetic);
    if (names_.size() != cols_ || kinds_.size() != cols_)
      raise(ErrorKind::data, "dataset", "names/kinds must have one entry per predictor");
    std::set<std::string> seen;
    for (const auto& nm : names_) {
      if (!seen.insert(nm).second) raise(ErrorKind::data, "dataset", "duplicate predictor name '" + nm + "'");
    }
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      if (cells_[k] > 2) {
        raise(ErrorKind::data, "dataset",
              "row " + std::to_string(k / cols_ + 1) + ", column '" + names_[k % cols_] +
                  "': value " + std::to_string(int(cells_[k])) + " is not in {0,1,2}");
      }
    }
    for (std::size_t j = 0; j < rows_; ++j) {
      if (phenotype_[j] != kCase && phenotype_[j] != kControl)
        raise(ErrorKind::data, "dataset",
              "row " + std::to_string(j + 1) + ": phenotype must be -1 or +1");
      if (phenotype_[j] == kCase) ++cases_;
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  RowView row(std::size_t j) const noexcept { return {cells_.data() + j * cols_, cols_}; }
  Genotype at(std::size_t j, std::size_t i) const noexcept { return cells_[j * cols_ + i]; }
  Label label(std::size_t j) const noexcept { return phenotype_[j]; }
  const std::vector<Label>& phenotype() const noexcept { return phenotype_; }
  const std::vector<Genotype>& cells() const noexcept { return cells_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<PredictorKind>& kinds() const noexcept { return kinds_; }
  std::size_t case_count() const noexcept { return cases_; }
  std::size_t control_count() const noexcept { return rows_ - cases_; }

  std::vector<std::size_t> columns_of_kind(PredictorKind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cols_; ++i)
      if (kinds_[i] == kind) out.push_back(i);
    return out;
  }

  std::optional<std::size_t> column_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  // Same predictors, new phenotype vector (the permuted samples of a
  // permutation test).
  Dataset with_phenotype(std::vector<Label> phenotype) const {
    return Dataset(rows_, cols_, cells_, std::move(phenotype), names_, kinds_);
  }

  Dataset with_column(std::size_t column, const std::vector<Genotype>& values) const {
    std::vector<Genotype> cells = cells_;
    for (std::size_t j = 0; j < rows_; ++j) cells[j * cols_ + column] = values[j];
    return Dataset(rows_, cols_, std::move(cells), phenotype_, names_, kinds_);
  }

  // Rows in the given order; duplicates allowed.
  Dataset select_rows(std::span<const std::size_t> rows) const {
    std::vector<Genotype> cells;
    cells.reserve(rows.size() * cols_);
    std::vector<Label> y;
    y.reserve(rows.size());
    for (std::size_t j : rows) {
      auto r = row(j);
      cells.insert(cells.end(), r.begin(), r.end());
      y.push_back(phenotype_[j]);
    }
    return Dataset(rows.size(), cols_, std::move(cells), std::move(y), names_, kinds_);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<Genotype> cells_;
  std::vector<Label> phenotype_;
  std::vector<std::string> names_;
  std::vector<PredictorKind> kinds_;
  std::size_t cases_ = 0;
};

// Row indices of a subsample xi(S). 0-based; bootstrap subsamples may repeat rows.
using Subsample = std::vector<std::size_t>;

inline Subsample all_rows(const Dataset& ds) {
  Subsample s(ds.rows());
  std::iota(s.begin(), s.end(), std::size_t{0});
  return s;
}

inline void check_subsample(const Dataset& ds, const Subsample& s, std::string_view module) {
  if (s.empty()) raise(ErrorKind::parameter, module, "subsample is empty");
  for (std::size_t j : s)
    if (j >= ds.rows()) raise(ErrorKind::parameter, module, "subsample index out of range");
}

struct ClassCounts {
  std::size_t cases = 0;
  std::size_t controls = 0;
  std::size_t total() const noexcept { return cases + controls; }
  std::size_t of(Label y) const noexcept { return y == kCase ? cases : controls; }
};

inline ClassCounts count_classes(const Dataset& ds, const Subsample& s) {
  ClassCounts c;
  for (std::size_t j : s) (ds.label(j) == kCase ? c.cases : c.controls)++;
  return c;
}

inline ClassCounts require_both_classes(const Dataset& ds, const Subsample& s,
                                        std::string_view module) {
  const ClassCounts c = count_classes(ds, s);
  if (c.cases == 0 || c.controls == 0)
    raise(ErrorKind::precondition, module,
          "subsample contains only " + std::string(c.cases == 0 ? "controls" : "cases") +
              "; both classes are required");
  return c;
}

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
  std::size_t K = 0;
  std::vector<std::vector<std::size_t>> folds;

  std::size_t rows() const {
    std::size_t n = 0;
    for (const auto& f : folds) n += f.size();
    return n;
  }

  // Training rows for fold k: everything outside S_k, in row order.
  Subsample complement(std::size_t k) const {
    std::vector<bool> in(rows(), false);
    for (std::size_t j : folds[k]) in[j] = true;
    Subsample out;
    for (std::size_t j = 0; j < in.size(); ++j)
      if (!in[j]) out.push_back(j);
    return out;
  }
};

namespace detail {
inline void check_fold_args(std::size_t N, std::size_t K) {
  if (K == 0 || K > N)
    raise(ErrorKind::parameter, "dataset",
          "fold count K=" + std::to_string(K) + " must satisfy 1 <= K <= N=" + std::to_string(N));
}
}  // namespace detail

// Contiguous blocks: fold k (1-based) covers (k-1)[N/K]+1 .. k[N/K], the last
// fold runs to N.
inline FoldPlan make_folds(std::size_t N, std::size_t K) {
  detail::check_fold_args(N, K);
  FoldPlan plan;
  plan.K = K;
  const std::size_t q = N / K;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t begin = k * q;
    const std::size_t end = (k + 1 < K) ? (k + 1) * q : N;
    std::vector<std::size_t> fold(end - begin);
    std::iota(fold.begin(), fold.end(), begin);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// Block formula applied to a seeded uniform permutation of the rows.
inline FoldPlan shuffle_then_fold(const Dataset& ds, std::size_t K, std::uint64_t seed) {
  const std::size_t N = ds.rows();
  detail::check_fold_args(N, K);
  Rng rng = make_rng(derive_seed(seed, stream::folds));
  const auto perm = random_permutation(N, rng);
  FoldPlan plan = make_folds(N, K);
  for (auto& fold : plan.folds) {
    for (auto& j : fold) j = perm[j];
    std::sort(fold.begin(), fold.end());
  }
  return plan;
}

// Minority class grown by with-replacement draws from itself until the two
// classes have equal counts. Original rows keep their positions; the extra
// rows are appended.
inline Dataset balance_resample(const Dataset& ds, std::uint64_t seed) {
  const Subsample all = all_rows(ds);
  const ClassCounts c = require_both_classes(ds, all, "dataset");
  if (c.cases == c.controls) return ds;
  const Label minority = c.cases < c.controls ? kCase : kControl;
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < ds.rows(); ++j)
    if (ds.label(j) == minority) pool.push_back(j);
  const std::size_t extra = (c.cases < c.controls ? c.controls - c.cases : c.cases - c.controls);
  Rng rng = make_rng(derive_seed(seed, stream::balance));
  std::vector<std::size_t> rows = all;
  for (std::size_t e = 0; e < extra; ++e) rows.push_back(pool[uniform_index(rng, pool.size())]);
  return ds.select_rows(rows);
}

// ---------------------------------------------------------------------------
// Delimited text files

enum class PhenotypeCoding { plus_minus_one, zero_one };

struct CsvSchema {
  std::string phenotype = "phenotype";
  PhenotypeCoding coding = PhenotypeCoding::plus_minus_one;
  char separator = ',';
  // Predictor columns in order; empty means every non-phenotype column.
  std::vector<std::string> predictors;
  // Columns tagged as external risk factors; the rest are genetic.
  std::vector<std::string> external;
  // Reject files where one class is absent instead of deferring the check.
  bool require_both_classes = false;
};

namespace detail {
inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }
}  // namespace detail

inline Dataset read_dataset(std::istream& in, const CsvSchema& schema,
                            const std::string& source = "<stream>") {
  const std::string where = source + ": ";
  std::string line;
  std::size_t line_no = 0;
  do {
    if (!std::getline(in, line)) raise(ErrorKind::data, "dataset", where + "missing header row");
    ++line_no;
  } while (detail::blank(line));
  const auto header = detail::split(line, schema.separator);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!pos.emplace(header[c], c).second)
      raise(ErrorKind::data, "dataset", where + "duplicate column '" + header[c] + "' in header");
  }
  auto column = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) raise(ErrorKind::data, "dataset", where + "unknown column '" + name + "'");
    return it->second;
  };
  const std::size_t y_col = column(schema.phenotype);
  std::vector<std::string> names = schema.predictors;
  if (names.empty()) {
    for (const auto& h : header)
      if (h != schema.phenotype) names.push_back(h);
  }
  std::vector<std::size_t> x_cols;
  for (const auto& nm : names) x_cols.push_back(column(nm));
  std::set<std::string> external(schema.external.begin(), schema.external.end());
  for (const auto& e : external) {
    column(e);
    if (std::find(names.begin(), names.end(), e) == names.end())
      raise(ErrorKind::data, "dataset", where + "external column '" + e + "' is not a predictor");
  }
  std::vector<PredictorKind> kinds;
  for (const auto& nm : names)
    kinds.push_back(external.count(nm) ? PredictorKind::external : PredictorKind::genetic);

  std::vector<Genotype> cells;
  std::vector<Label> y;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    ++row;
    const auto fields = detail::split(line, schema.separator);
    const std::string loc = where + "line " + std::to_string(line_no) + " (row " + std::to_string(row) + ")";
    if (fields.size() != header.size())
      raise(ErrorKind::data, "dataset",
            loc + ": malformed row with " + std::to_string(fields.size()) + " fields, expected " +
                std::to_string(header.size()));
    const std::string& yv = fields[y_col];
    Label label = 0;
    if (schema.coding == PhenotypeCoding::plus_minus_one) {
      if (yv == "1" || yv == "+1") label = kCase;
      else if (yv == "-1") label = kControl;
    } else {
      if (yv == "1") label = kCase;
      else if (yv == "0") label = kControl;
    }
    if (label == 0)
      raise(ErrorKind::data, "dataset",
            loc + ", column '" + schema.phenotype + "': invalid phenotype '" + yv + "' (expected " +
                (schema.coding == PhenotypeCoding::plus_minus_one ? "-1 or 1" : "0 or 1") + ")");
    y.push_back(label);
    for (std::size_t c = 0; c < x_cols.size(); ++c) {
      const std::string& v = fields[x_cols[c]];
      if (v.empty())
        raise(ErrorKind::data, "dataset", loc + ", column '" + names[c] + "': missing value");
      if (v.size() != 1 || v[0] < '0' || v[0] > '2')
        raise(ErrorKind::data, "dataset",
              loc + ", column '" + names[c] + "': value '" + v + "' is not a ternary code 0/1/2");
      cells.push_back(static_cast<Genotype>(v[0] - '0'));
    }
  }
  if (row == 0) raise(ErrorKind::data, "dataset", where + "no data rows");
  const std::size_t n = names.size();
  Dataset ds(row, n, std::move(cells), std::move(y), std::move(names), std::move(kinds));
  if (schema.require_both_classes && (ds.case_count() == 0 || ds.control_count() == 0))
    raise(ErrorKind::data, "dataset",
          where + "empty class: no " + (ds.case_count() == 0 ? "cases" : "controls") + " in file");
  return ds;
}

inline Dataset load_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::io, "dataset", "cannot open '" + path + "'");
  return read_dataset(in, schema, path);
}

inline void write_dataset(std::ostream& out, const Dataset& ds, const CsvSchema& schema) {
  const char sep = schema.separator;
  for (const auto& nm : ds.names()) out << nm << sep;
  out << schema.phenotype << '\n';
  for (std::size_t j = 0; j < ds.rows(); ++j) {
    for (std::size_t i = 0; i < ds.cols(); ++i) out << int(ds.at(j, i)) << sep;
    if (schema.coding == PhenotypeCoding::zero_one) out << (ds.label(j) == kCase ? 1 : 0);
    else out << ds.label(j);
    out << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::io, "dataset", "cannot write '" + path + "'");
  write_dataset(out, ds, schema);
}

// Schema that round-trips a dataset written by write_dataset.
inline CsvSchema schema_for(const Dataset& ds, CsvSchema base = {}) {
  base.predictors = ds.names();
  base.external.clear();
  for (std::size_t i = 0; i < ds.cols(); ++i)
    if (ds.kinds()[i] == PredictorKind::external) base.external.push_back(ds.names()[i]);
  return base;
}

}  // namespace snpassoc
