#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace snpassoc {

// Ternary code of a SNP or discretised external factor: 0, 1 or 2.
using Genotype = std::uint8_t;

// Phenotype label: +1 for a case, -1 for a control.
using Label = int;
inline constexpr Label kCase = 1;
inline constexpr Label kControl = -1;

using RowView = std::span<const Genotype>;

enum class ErrorKind {
  parameter,     // caller passed an out-of-range argument
  data,          // malformed or invalid input data
  precondition,  // a statistical precondition failed (e.g. a class is absent)
  degenerate,    // a resampled replicate is unusable; callers may retry
  io,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::data: return "data";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

// Every failure raised by the library carries the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

[[noreturn]] inline void raise(ErrorKind kind, std::string_view module,
                               const std::string& message) {
  throw Error(kind, std::string(module), message);
}

// Neumaier-compensated accumulator; results do not depend on how many
// terms were grouped before reduction.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace snpassoc
