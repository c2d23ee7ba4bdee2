#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstddef>
#include <string_view>

#include "gisurrogate/error.hpp"

namespace gisur {

// Dense column-major storage; every matrix in the toolkit is small enough
// (n <= ~10^4, Gram and covariance blocks <= ~600) to stay dense.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Throws NonFinite if any entry is NaN/Inf, InvalidArgument if empty.
void require_finite(const Matrix& m, std::string_view what);
void require_finite(const Vector& v, std::string_view what);

/// True when |m(i,j) - m(j,i)| <= tol * max(1, max|m|) for all entries.
bool is_symmetric(const Matrix& m, double tol = 1e-10);

/// Cholesky factor L (M = L L^T) plus the log-determinant of M.
class SpdFactorization {
 public:
  SpdFactorization() = default;

  std::size_t size() const { return static_cast<std::size_t>(llt_.rows()); }
  double log_det() const { return log_det_; }
  /// Diagonal shift that was added before factorizing (0 when none).
  double jitter() const { return jitter_; }
  Matrix lower() const { return llt_.matrixL(); }

  Vector solve(const Vector& b) const;
  Matrix solve(const Matrix& b) const;
  /// L^{-1} b; used for quadratic forms b^T M^{-1} b = |L^{-1} b|^2.
  Matrix solve_lower(const Matrix& b) const;
  void solve_lower_in_place(Vector& b) const;

 private:
  friend SpdFactorization spd_factorize(const Matrix& m);
  friend SpdFactorization spd_factorize_jittered(const Matrix& m, double max_relative_jitter);

  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

/// Throws NotSymmetric (tolerance 1e-10 relative) or NotPositiveDefinite.
SpdFactorization spd_factorize(const Matrix& m);

/// Jitter policy: on NotPositiveDefinite retry with
/// M + eps * trace(M)/size * I, eps = 1e-10, 1e-9, ... up to max_relative_jitter.
SpdFactorization spd_factorize_jittered(const Matrix& m, double max_relative_jitter = 1e-6);

/// Throws DimensionMismatch when b.rows() != f.size().
Matrix spd_solve(const SpdFactorization& f, const Matrix& b);
Vector spd_solve(const SpdFactorization& f, const Vector& b);

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values[k]; largest-magnitude entry positive
};

inline constexpr std::size_t kSymEigSizeCap = 4096;

SymmetricEigen sym_eig(const Matrix& m, std::size_t size_cap = kSymEigSizeCap);

}  // namespace gisur
