#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "gisurrogate/testbed.hpp"

namespace gisur {

/// Unit-reluctivity stiffness at pbar, zero state: the weight of the POD
/// inner product <u, v> = u^T Abar v.
Matrix build_weight(const ParamPoint& pbar, const TestbedConfig& cfg);

enum class ColumnKind { State, GradientAugmented };

struct ColumnLabel {
  std::size_t sample = 0;     // 0-based sample index
  ColumnKind kind = ColumnKind::State;
  std::size_t parameter = 0;  // meaningful for GradientAugmented only
};

inline constexpr double kDefaultAugmentationStep = 1e-3;

struct SnapshotMatrix {
  Matrix columns;  // n x n_cols
  std::vector<ColumnLabel> labels;
  double h = 0.0;
};

/// Plain: one column per solution. Augmented: per sample the block
/// [u, u + h du/dp_1, ..., u + h du/dp_{n_p}].
SnapshotMatrix build_snapshots(const std::vector<FieldSolution>& solutions, bool augment,
                               double h = kDefaultAugmentationStep);
SnapshotMatrix build_snapshots(const std::vector<const FieldSolution*>& solutions, bool augment,
                               double h = kDefaultAugmentationStep);

/// Eigenvalues below this fraction of the largest are treated as zero.
inline constexpr double kRankCutoff = 1e-12;

struct WeightedPodBasis {
  Matrix Q;                             // n x r, Q^T Abar Q = I
  Vector eigenvalues;                   // r entries, descending, > 0
  std::shared_ptr<const Matrix> weight; // Abar
  std::size_t numerical_rank = 0;
  bool rank_capped = false;             // requested r exceeded the numerical rank

  std::size_t rank() const { return static_cast<std::size_t>(Q.cols()); }
};

/// Method of snapshots on the Gram matrix U^T Abar U.
WeightedPodBasis compute_basis(const SnapshotMatrix& snapshots, std::shared_ptr<const Matrix> weight,
                               std::size_t r);
WeightedPodBasis compute_basis(const SnapshotMatrix& snapshots, const Matrix& weight, std::size_t r);

/// Same basis truncated to its first r modes.
WeightedPodBasis truncate(const WeightedPodBasis& basis, std::size_t r);

Vector project(const WeightedPodBasis& basis, const Vector& u);
Matrix project_sensitivities(const WeightedPodBasis& basis, const Matrix& sensitivities);
Vector reconstruct(const WeightedPodBasis& basis, const Vector& xi);

/// sqrt((u - ut)^T A (u - ut) / (u^T A u)); throws ZeroReference if u^T A u = 0.
double relative_error(const Vector& u, const Vector& approx, const Matrix& A);

}  // namespace gisur
