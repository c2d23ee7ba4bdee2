#include "gisurrogate/sampling.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace gisur {

namespace {

constexpr int kBits = 32;

// Joe & Kuo (new-joe-kuo-6.21201), dimensions 2..8: degree s, coefficient a,
// initial direction numbers m_1..m_s. Dimension 1 is the van der Corput sequence.
struct PrimitivePoly {
  int degree;
  std::uint32_t coeff;
  std::array<std::uint32_t, 5> m;
};

constexpr std::array<PrimitivePoly, kSobolMaxDimension - 1> kJoeKuo{{
    {1, 0, {1, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0}},
    {4, 4, {1, 3, 5, 13, 0}},
    {5, 2, {1, 1, 5, 5, 17}},
}};

std::array<std::uint32_t, kBits> direction_numbers(std::size_t dim) {
  std::array<std::uint32_t, kBits> v{};
  if (dim == 0) {
    for (int k = 0; k < kBits; ++k) v[k] = std::uint32_t{1} << (kBits - 1 - k);
    return v;
  }
  const PrimitivePoly& poly = kJoeKuo[dim - 1];
  const int s = poly.degree;
  for (int k = 0; k < s; ++k) v[k] = poly.m[k] << (kBits - 1 - k);
  for (int k = s; k < kBits; ++k) {
    std::uint32_t x = v[k - s] ^ (v[k - s] >> s);
    for (int j = 1; j < s; ++j) {
      if ((poly.coeff >> (s - 1 - j)) & 1u) x ^= v[k - j];
    }
    v[k] = x;
  }
  return v;
}

int lowest_zero_bit(std::uint64_t i) {
  int c = 0;
  while (i & 1u) {
    i >>= 1;
    ++c;
  }
  return c;
}

}  // namespace

Matrix sobol_unit(std::size_t m, std::size_t d, std::size_t skip) {
  if (d < 1 || d > kSobolMaxDimension) {
    throw Error(ErrorKind::DimensionUnsupported,
                "Sobol dimension " + std::to_string(d) + " outside [1, 8]");
  }
  if (m + skip > kSobolMaxPoints) {
    throw Error(ErrorKind::InvalidArgument, "at most 2^16 Sobol points are supported");
  }
  std::vector<std::array<std::uint32_t, kBits>> dirs;
  for (std::size_t k = 0; k < d; ++k) dirs.push_back(direction_numbers(k));

  Matrix out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  std::vector<std::uint32_t> state(d, 0);
  constexpr double kScale = 1.0 / 4294967296.0;  // 2^-32
  // Gray-code recurrence: point i+1 = point i XOR v[c], c = lowest zero bit of i.
  for (std::size_t i = 0; i < skip + m; ++i) {
    const int c = lowest_zero_bit(i);
    for (std::size_t k = 0; k < d; ++k) state[k] ^= dirs[k][c];
    if (i >= skip) {
      for (std::size_t k = 0; k < d; ++k) {
        out(static_cast<Eigen::Index>(i - skip), static_cast<Eigen::Index>(k)) = state[k] * kScale;
      }
    }
  }
  return out;
}

std::vector<ParamPoint> scale_to_bounds(const Matrix& unit_points, const ParamBounds& bounds) {
  bounds.validate();
  if (unit_points.cols() != static_cast<Eigen::Index>(bounds.size())) {
    throw Error(ErrorKind::DimensionMismatch, "point dimension does not match bounds");
  }
  std::vector<ParamPoint> points;
  points.reserve(static_cast<std::size_t>(unit_points.rows()));
  const Vector range = bounds.upper - bounds.lower;
  for (Eigen::Index r = 0; r < unit_points.rows(); ++r) {
    Vector v = bounds.lower + unit_points.row(r).transpose().cwiseProduct(range);
    // x = 1 must land on the upper bound exactly.
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      if (unit_points(r, k) == 1.0) v[k] = bounds.upper[k];
    }
    points.push_back(ParamPoint{std::move(v), bounds});
  }
  return points;
}

DesignPlan plan_dataset(std::size_t target, const TestbedConfig& cfg, std::size_t skip) {
  if (target < 1) throw Error(ErrorKind::InvalidArgument, "plan target must be >= 1");
  const Testbed testbed(cfg);
  DesignPlan plan;
  plan.skip = skip;
  plan.requested = target;
  const std::size_t d = cfg.bounds.size();
  const std::size_t available = kSobolMaxPoints - skip;
  // Generate in growing chunks; the sequence is deterministic so chunking
  // does not affect the result.
  std::size_t generated = 0;
  std::size_t chunk = std::max<std::size_t>(64, 2 * target);
  while (plan.accepted.size() < target) {
    if (generated >= available) {
      throw Error(ErrorKind::ExhaustedSequence,
                  "only " + std::to_string(plan.accepted.size()) + " of " + std::to_string(target) +
                      " feasible points within 2^16 Sobol points");
    }
    const std::size_t count = std::min(chunk, available - generated);
    const Matrix unit = sobol_unit(count, d, skip + generated);
    const auto points = scale_to_bounds(unit, cfg.bounds);
    for (std::size_t k = 0; k < points.size() && plan.accepted.size() < target; ++k) {
      if (testbed.is_feasible(points[k])) {
        plan.accepted.push_back(points[k]);
        plan.sequence_index.push_back(skip + generated + k + 1);
      } else {
        ++plan.rejected;
      }
    }
    generated += count;
    chunk *= 2;
  }
  return plan;
}

}  // namespace gisur
