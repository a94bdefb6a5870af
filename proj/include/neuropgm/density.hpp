#pragma once

#include "neuropgm/covariance.hpp"
#include "neuropgm/linalg.hpp"

namespace neuropgm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double mvn_logpdf(const Vector& x, const Vector& mu, const Matrix& cov);
double mvn_logpdf(const Vector& x, const Vector& mu, const CovarianceSpec& cov);

/// Matrix-normal log-density of an m x n matrix X with row covariance R
/// (m x m) and column covariance C (n x n); equivalent to
/// vec(X) ~ N(vec(M), C kron R). Standard normalization.
double matnormal_logpdf(const Matrix& X, const Matrix& M, const Matrix& R, const Matrix& C);
double matnormal_logpdf(const Matrix& X, const Matrix& M, const CovarianceSpec& R,
                        const CovarianceSpec& C);

struct MatNormalGradient {
  double value = 0.0;
  Matrix dR;  // dlogp/dR (symmetric, entrywise convention)
  Matrix dC;
  Matrix dM;
};
MatNormalGradient matnormal_logpdf_grad(const Matrix& X, const Matrix& M, const Matrix& R,
                                        const Matrix& C);

/// Log-density of vec(X) under C1 kron R1 + C2 kron R2. R1 and C1 may be
/// positive semidefinite; R2 and C2 must be SPD. Never forms an mn x mn
/// matrix: both terms are whitened by the second pair and the whitened first
/// pair is diagonalized.
double kron_sum_mvn_logpdf(const Matrix& X, const Matrix& M, const Matrix& R1, const Matrix& C1,
                           const Matrix& R2, const Matrix& C2);
double kron_sum_mvn_logpdf(const Matrix& X, const Matrix& M, const Matrix& R1, const Matrix& C1,
                           const CovarianceSpec& R2, const CovarianceSpec& C2);

struct KronSumGradient {
  double value = 0.0;
  Matrix dR1, dC1, dR2, dC2, dM;
};
KronSumGradient kron_sum_mvn_logpdf_grad(const Matrix& X, const Matrix& M, const Matrix& R1,
                                         const Matrix& C1, const Matrix& R2, const Matrix& C2);

/// Same density with a low-rank first row term R1 = F F^T (F is m x r). Cost
/// is linear in m beyond the whitening of R2, so it suits stacked-voxel row
/// spaces. Value only.
double kron_sum_mvn_logpdf_lowrank(const Matrix& X, const Matrix& M, const Matrix& F,
                                   const Matrix& C1, const CovarianceSpec& R2, const Matrix& C2);

/// Dense reference Kronecker product (small sizes only; used by tests and
/// oracles).
Matrix kron(const Matrix& A, const Matrix& B);

/// Column-stacking vec().
Vector vec(const Matrix& A);

}  // namespace neuropgm
