#pragma once

#include <Eigen/Dense>

#include <span>

namespace neuropgm {

/// Dense 2-D container used throughout (time x voxel and derived shapes).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Lower Cholesky factor with its cached log-determinant.
struct CholeskyFactor {
  Matrix L;
  double logdet = 0.0;

  Eigen::Index size() const { return L.rows(); }

  /// Solves A X = B.
  Matrix solve(const Matrix& B) const;
  Vector solve(const Vector& b) const;
  /// Solves L Y = B (half-whitening).
  Matrix solve_lower(const Matrix& B) const;
  Matrix inverse() const;
  Matrix reconstruct() const { return L * L.transpose(); }
};

/// Factorizes a symmetric positive definite matrix. The input is symmetrized
/// after a relative symmetry check of 1e-10; any pivot <= pivot_floor throws
/// NotSPD.
CholeskyFactor cholesky_logdet(const Matrix& A, double pivot_floor = 0.0);

/// Closest matrix with orthonormal columns to A (V x K, V >= K): U V^T of the
/// thin SVD. Throws RankDeficient when a singular value is < 1e-12 * max.
Matrix orthogonal_procrustes(const Matrix& A);

/// Q factor of a thin Householder QR (V x K, orthonormal columns).
Matrix thin_orthonormal_basis(const Matrix& A);

Matrix symmetrize(const Matrix& A);

bool all_finite(const Matrix& A);

/// Symmetric eigendecomposition with eigenvalues in ascending order.
struct SymEigen {
  Vector values;
  Matrix vectors;
};
SymEigen sym_eigen(const Matrix& A);

/// Pearson correlation between two equal-length samples. Returns 0 when
/// either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
double pearson(const Vector& a, const Vector& b);

}  // namespace neuropgm
