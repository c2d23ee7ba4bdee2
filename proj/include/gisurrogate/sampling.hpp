#pragma once

#include <cstddef>
#include <vector>

#include "gisurrogate/testbed.hpp"

namespace gisur {

inline constexpr std::size_t kSobolMaxDimension = 8;
inline constexpr std::size_t kSobolMaxPoints = std::size_t{1} << 16;

/// Unscrambled Sobol points at sequence indices skip+1 .. skip+m (index 0,
/// the origin, is never returned), Gray-code order, Joe-Kuo direction
/// numbers. Row k of the result is one point in (0,1)^d.
Matrix sobol_unit(std::size_t m, std::size_t d, std::size_t skip = 0);

/// lower + x * (upper - lower), component-wise, for every row of x.
std::vector<ParamPoint> scale_to_bounds(const Matrix& unit_points, const ParamBounds& bounds);

struct DesignPlan {
  std::size_t skip = 0;
  std::size_t requested = 0;
  std::vector<ParamPoint> accepted;
  /// Sobol index (1-based, after skip) of every accepted point.
  std::vector<std::size_t> sequence_index;
  std::size_t rejected = 0;
};

/// Walks the Sobol sequence over cfg.bounds keeping feasible points until
/// `target` are accepted. Plans for increasing targets are prefixes of one
/// another. Throws ExhaustedSequence after 2^16 points.
DesignPlan plan_dataset(std::size_t target, const TestbedConfig& cfg, std::size_t skip = 0);

}  // namespace gisur
