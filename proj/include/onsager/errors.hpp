#pragma once

#include <stdexcept>
#include <string>

namespace onsager {

enum class ErrorKind {
  domain,
  argument,
  overflow,
  accuracy,
  validation,
  singular_linearization,
  degenerate_index,
  undefined_critical_value,
  threshold_undefined,
  inconclusive_audit,
  branch_not_found,
  marginal_stability,
  step_size,
  resolution,
  divergence,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::argument: return "argument";
    case ErrorKind::overflow: return "overflow";
    case ErrorKind::accuracy: return "accuracy";
    case ErrorKind::validation: return "validation";
    case ErrorKind::singular_linearization: return "singular_linearization";
    case ErrorKind::degenerate_index: return "degenerate_index";
    case ErrorKind::undefined_critical_value: return "undefined_critical_value";
    case ErrorKind::threshold_undefined: return "threshold_undefined";
    case ErrorKind::inconclusive_audit: return "inconclusive_audit";
    case ErrorKind::branch_not_found: return "branch_not_found";
    case ErrorKind::marginal_stability: return "marginal_stability";
    case ErrorKind::step_size: return "step_size";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Input problems (bad arguments, out-of-domain values) as opposed to
/// numerical failures. The CLI maps the former to exit code 2.
inline bool is_input_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain:
    case ErrorKind::argument:
    case ErrorKind::validation:
    case ErrorKind::step_size:
    case ErrorKind::resolution:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class AccuracyError : public Error {
 public:
  AccuracyError(const std::string& what, double achieved)
      : Error(ErrorKind::accuracy, what), achieved_(achieved) {}

  /// Estimated error actually reached.
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

/// Carries the 1-based coefficient index that failed a check.
class IndexedError : public Error {
 public:
  IndexedError(ErrorKind kind, const std::string& what, int index)
      : Error(kind, what), index_(index) {}

  int index() const noexcept { return index_; }

 private:
  int index_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_valid_time)
      : Error(ErrorKind::divergence, what), last_valid_time_(last_valid_time) {}

  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

}  // namespace onsager
