#include "gisurrogate/pod.hpp"

#include <cmath>
#include <string>

namespace gisur {

Matrix build_weight(const ParamPoint& pbar, const TestbedConfig& cfg) {
  return Testbed(cfg).unit_stiffness(pbar);
}

SnapshotMatrix build_snapshots(const std::vector<const FieldSolution*>& solutions, bool augment, double h) {
  if (solutions.empty()) throw Error(ErrorKind::InconsistentDimensions, "no solutions given");
  if (augment && !(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "augmentation step h must be > 0");
  const Eigen::Index n = solutions.front()->u.size();
  const Eigen::Index np = solutions.front()->sensitivities.cols();
  for (const FieldSolution* s : solutions) {
    if (s->u.size() != n) throw Error(ErrorKind::InconsistentDimensions, "state lengths differ");
    if (augment && (s->sensitivities.rows() != n || s->sensitivities.cols() != np)) {
      throw Error(ErrorKind::InconsistentDimensions, "sensitivity shapes differ");
    }
  }
  const Eigen::Index per_sample = augment ? 1 + np : 1;
  SnapshotMatrix out;
  out.h = augment ? h : 0.0;
  out.columns.resize(n, per_sample * static_cast<Eigen::Index>(solutions.size()));
  Eigen::Index c = 0;
  for (std::size_t j = 0; j < solutions.size(); ++j) {
    const FieldSolution& s = *solutions[j];
    out.columns.col(c++) = s.u;
    out.labels.push_back({j, ColumnKind::State, 0});
    if (!augment) continue;
    for (Eigen::Index i = 0; i < np; ++i) {
      out.columns.col(c++) = s.u + h * s.sensitivities.col(i);
      out.labels.push_back({j, ColumnKind::GradientAugmented, static_cast<std::size_t>(i)});
    }
  }
  return out;
}

SnapshotMatrix build_snapshots(const std::vector<FieldSolution>& solutions, bool augment, double h) {
  std::vector<const FieldSolution*> ptrs;
  ptrs.reserve(solutions.size());
  for (const auto& s : solutions) ptrs.push_back(&s);
  return build_snapshots(ptrs, augment, h);
}

WeightedPodBasis compute_basis(const SnapshotMatrix& snapshots, std::shared_ptr<const Matrix> weight,
                               std::size_t r) {
  if (!weight) throw Error(ErrorKind::InvalidArgument, "missing POD weight");
  const Matrix& U = snapshots.columns;
  const Matrix& W = *weight;
  if (W.rows() != U.rows() || W.cols() != U.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "weight size does not match snapshot length");
  }
  if (r < 1) throw Error(ErrorKind::InvalidArgument, "requested rank must be >= 1");

  const Matrix WU = W * U;
  Matrix gram = U.transpose() * WU;
  gram = 0.5 * (gram + gram.transpose()).eval();
  const SymmetricEigen eig = sym_eig(gram);
  if (!(eig.values[0] > 0.0)) throw Error(ErrorKind::ZeroReference, "snapshot matrix is zero in the weighted norm");

  std::size_t rank = 0;
  while (rank < static_cast<std::size_t>(eig.values.size()) &&
         eig.values[static_cast<Eigen::Index>(rank)] > kRankCutoff * eig.values[0]) {
    ++rank;
  }
  WeightedPodBasis basis;
  basis.weight = std::move(weight);
  basis.numerical_rank = rank;
  basis.rank_capped = r > rank;
  const auto keep = static_cast<Eigen::Index>(std::min(r, rank));
  basis.eigenvalues = eig.values.head(keep);
  basis.Q = U * eig.vectors.leftCols(keep);
  for (Eigen::Index i = 0; i < keep; ++i) basis.Q.col(i) /= std::sqrt(basis.eigenvalues[i]);

  // Modes near the cutoff lose weighted orthonormality through the 1/sqrt(lambda)
  // scaling; one Cholesky-QR pass in the weighted inner product restores it
  // without changing the span or the mode ordering.
  const Matrix G = basis.Q.transpose() * W * basis.Q;
  if ((G - Matrix::Identity(keep, keep)).cwiseAbs().maxCoeff() > 1e-12) {
    Eigen::LLT<Matrix> llt(0.5 * (G + G.transpose()));
    if (llt.info() == Eigen::Success) {
      basis.Q = llt.matrixU().solve<Eigen::OnTheRight>(basis.Q);
    }
  }
  return basis;
}

WeightedPodBasis compute_basis(const SnapshotMatrix& snapshots, const Matrix& weight, std::size_t r) {
  return compute_basis(snapshots, std::make_shared<const Matrix>(weight), r);
}

WeightedPodBasis truncate(const WeightedPodBasis& basis, std::size_t r) {
  if (r < 1 || r > basis.rank()) throw Error(ErrorKind::InvalidArgument, "truncation rank out of range");
  WeightedPodBasis out = basis;
  out.Q = basis.Q.leftCols(static_cast<Eigen::Index>(r));
  out.eigenvalues = basis.eigenvalues.head(static_cast<Eigen::Index>(r));
  out.rank_capped = false;
  return out;
}

Vector project(const WeightedPodBasis& basis, const Vector& u) {
  if (u.size() != basis.Q.rows()) throw Error(ErrorKind::DimensionMismatch, "state length does not match basis");
  return basis.Q.transpose() * (*basis.weight * u);
}

Matrix project_sensitivities(const WeightedPodBasis& basis, const Matrix& sensitivities) {
  if (sensitivities.rows() != basis.Q.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "sensitivity rows do not match basis");
  }
  return basis.Q.transpose() * (*basis.weight * sensitivities);
}

Vector reconstruct(const WeightedPodBasis& basis, const Vector& xi) {
  if (xi.size() != basis.Q.cols()) throw Error(ErrorKind::DimensionMismatch, "coefficient length does not match rank");
  return basis.Q * xi;
}

double relative_error(const Vector& u, const Vector& approx, const Matrix& A) {
  if (u.size() != approx.size() || A.rows() != u.size() || A.cols() != u.size()) {
    throw Error(ErrorKind::DimensionMismatch, "relative_error operand sizes differ");
  }
  const double ref = u.dot(A * u);
  if (!(ref > 0.0)) throw Error(ErrorKind::ZeroReference, "reference field has zero energy norm");
  const Vector e = u - approx;
  return std::sqrt(std::max(0.0, e.dot(A * e)) / ref);
}

}  // namespace gisur
