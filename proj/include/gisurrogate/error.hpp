#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gisur {

enum class ErrorKind {
  NotPositiveDefinite,
  NotSymmetric,
  DimensionMismatch,
  ConvergenceFailure,
  NonFinite,
  DegenerateElement,
  NewtonDivergence,
  SingularTangent,
  DimensionUnsupported,
  ExhaustedSequence,
  InconsistentDimensions,
  ZeroReference,
  NegativeVariance,
  AllRestartsFailed,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers can branch
/// on it (e.g. retry a factorization with jitter on NotPositiveDefinite).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gisur
