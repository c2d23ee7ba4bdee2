#include "gisurrogate/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace gisur {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DegenerateElement: return "DegenerateElement";
    case ErrorKind::NewtonDivergence: return "NewtonDivergence";
    case ErrorKind::SingularTangent: return "SingularTangent";
    case ErrorKind::DimensionUnsupported: return "DimensionUnsupported";
    case ErrorKind::ExhaustedSequence: return "ExhaustedSequence";
    case ErrorKind::InconsistentDimensions: return "InconsistentDimensions";
    case ErrorKind::ZeroReference: return "ZeroReference";
    case ErrorKind::NegativeVariance: return "NegativeVariance";
    case ErrorKind::AllRestartsFailed: return "AllRestartsFailed";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

void require_finite(const Matrix& m, std::string_view what) {
  if (m.size() == 0) {
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " is empty");
  }
  if (!m.allFinite()) {
    throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
  }
}

void require_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) {
    throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
  }
}

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const Eigen::Index n = m.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      if (std::abs(m(i, j) - m(j, i)) > tol * scale) return false;
    }
  }
  return true;
}

Vector SpdFactorization::solve(const Vector& b) const { return llt_.solve(b); }

Matrix SpdFactorization::solve(const Matrix& b) const { return llt_.solve(b); }

Matrix SpdFactorization::solve_lower(const Matrix& b) const {
  return llt_.matrixL().solve(b);
}

void SpdFactorization::solve_lower_in_place(Vector& b) const {
  if (static_cast<std::size_t>(b.size()) != size()) throw Error(ErrorKind::DimensionMismatch, "rhs size mismatch");
  llt_.matrixL().solveInPlace(b);
}

namespace {

double log_det_from_factor(const Eigen::LLT<Matrix>& llt) {
  const auto& l = llt.matrixLLT();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) sum += std::log(l(i, i));
  return 2.0 * sum;
}

void require_square_symmetric(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorKind::DimensionMismatch,
                "expected a non-empty square matrix, got " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
  }
  require_finite(m, "matrix");
  if (!is_symmetric(m)) throw Error(ErrorKind::NotSymmetric, "matrix is not symmetric");
}

}  // namespace

SpdFactorization spd_factorize(const Matrix& m) {
  require_square_symmetric(m);
  SpdFactorization f;
  f.llt_.compute(m);
  if (f.llt_.info() != Eigen::Success) {
    throw Error(ErrorKind::NotPositiveDefinite, "non-positive pivot in Cholesky factorization");
  }
  f.log_det_ = log_det_from_factor(f.llt_);
  if (!std::isfinite(f.log_det_)) {
    throw Error(ErrorKind::NotPositiveDefinite, "zero pivot in Cholesky factorization");
  }
  return f;
}

SpdFactorization spd_factorize_jittered(const Matrix& m, double max_relative_jitter) {
  try {
    return spd_factorize(m);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotPositiveDefinite) throw;
  }
  const double mean_diag = m.trace() / static_cast<double>(m.rows());
  Matrix shifted = m;
  for (double eps = 1e-10; eps <= max_relative_jitter * (1.0 + 1e-9); eps *= 10.0) {
    const double shift = eps * std::abs(mean_diag);
    shifted.diagonal() = m.diagonal().array() + shift;
    try {
      SpdFactorization f = spd_factorize(shifted);
      f.jitter_ = shift;
      return f;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotPositiveDefinite) throw;
    }
  }
  throw Error(ErrorKind::NotPositiveDefinite,
              "factorization failed after jitter escalation to " + std::to_string(max_relative_jitter));
}

Matrix spd_solve(const SpdFactorization& f, const Matrix& b) {
  if (static_cast<std::size_t>(b.rows()) != f.size()) {
    throw Error(ErrorKind::DimensionMismatch, "rhs rows " + std::to_string(b.rows()) +
                                                  " != factor size " + std::to_string(f.size()));
  }
  return f.solve(b);
}

Vector spd_solve(const SpdFactorization& f, const Vector& b) {
  if (static_cast<std::size_t>(b.size()) != f.size()) {
    throw Error(ErrorKind::DimensionMismatch, "rhs length " + std::to_string(b.size()) +
                                                  " != factor size " + std::to_string(f.size()));
  }
  return f.solve(b);
}

SymmetricEigen sym_eig(const Matrix& m, std::size_t size_cap) {
  require_square_symmetric(m);
  if (static_cast<std::size_t>(m.rows()) > size_cap) {
    throw Error(ErrorKind::InvalidArgument, "sym_eig size " + std::to_string(m.rows()) +
                                                " exceeds cap " + std::to_string(size_cap));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::ConvergenceFailure, "symmetric eigensolver did not converge");
  }
  const Eigen::Index n = m.rows();
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  // Eigen returns ascending order.
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values[k] = solver.eigenvalues()[n - 1 - k];
    Vector v = solver.eigenvectors().col(n - 1 - k);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    out.vectors.col(k) = v;
  }
  return out;
}

}  // namespace gisur
