#pragma once

#include <cstddef>

#include "gisurrogate/numerics.hpp"

namespace gisur {

/// Axis-aligned box of the design space.
struct ParamBounds {
  Vector lower;
  Vector upper;

  std::size_t size() const { return static_cast<std::size_t>(lower.size()); }
  double range(std::size_t i) const { return upper[i] - lower[i]; }
  /// lower == upper: the parameter is held fixed and gets a zero sensitivity.
  bool frozen(std::size_t i) const { return upper[i] == lower[i]; }
  Vector midpoint() const { return 0.5 * (lower + upper); }
  void validate() const;
};

struct ParamPoint {
  Vector values;
  ParamBounds bounds;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool in_bounds() const;
};

ParamPoint make_point(const ParamBounds& bounds, const Vector& values);
ParamPoint midpoint(const ParamBounds& bounds);

}  // namespace gisur
