#pragma once

#include <optional>
#include <string>
#include <variant>

#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// sigma^2 * I
struct ScaledIdentity {
  double variance = 1.0;
};

/// diag(d)
struct Diagonal {
  Vector d;
};

/// Stationary AR(1): entry (i, j) = variance * phi^|i-j|.
struct AR1 {
  double variance = 1.0;
  double phi = 0.0;
};

struct DenseSPD {
  Matrix A;
};

/// Squared-exponential kernel over points (one row per point):
/// magnitude * exp(-|p_i - p_j|^2 / (2 length_scale^2)) + jitter * [i == j].
struct SEKernel {
  Matrix points;
  double magnitude = 1.0;
  double length_scale = 1.0;
  double jitter = 0.0;

  /// Kernel with the default jitter floor of 1e-8 * magnitude.
  static SEKernel with_default_jitter(Matrix points, double magnitude, double length_scale);
};

using CovarianceSpec = std::variant<ScaledIdentity, Diagonal, AR1, DenseSPD, SEKernel>;

std::string cov_family_name(const CovarianceSpec& spec);

/// Throws BadSpec when a parameter violates the family's domain.
void validate(const CovarianceSpec& spec);

/// Dimension fixed by the spec itself (Diagonal, DenseSPD, SEKernel), if any.
std::optional<Eigen::Index> fixed_dimension(const CovarianceSpec& spec);

/// Dense n x n covariance. Throws DimensionMismatch when n disagrees with a
/// fixed dimension.
Matrix cov_materialize(const CovarianceSpec& spec, Eigen::Index n);

CholeskyFactor cov_cholesky(const CovarianceSpec& spec, Eigen::Index n);

/// Unconstrained parameterization: log for positive scalars, atanh for phi,
/// log-diagonal Cholesky entries for dense SPD, (log magnitude, log length)
/// for the kernel (jitter held fixed).
Vector cov_pack(const CovarianceSpec& spec);
CovarianceSpec cov_unpack(const CovarianceSpec& like, const Vector& theta);
Eigen::Index cov_param_count(const CovarianceSpec& spec);

/// Chain rule: given G = dF/dSigma (symmetric, entrywise convention
/// dF = sum_ij G_ij dSigma_ij), returns dF/dtheta for the packed parameters.
Vector cov_param_gradient(const CovarianceSpec& spec, Eigen::Index n, const Matrix& G);

/// Scale of the covariance: sigma^2 for ScaledIdentity/AR1, mean diagonal
/// otherwise.
CovarianceSpec cov_scaled(const CovarianceSpec& spec, double factor);

/// Tridiagonal AR(1) precision helpers.
namespace ar1 {

double logdet(Eigen::Index n, double variance, double phi);
/// Returns Sigma^{-1} x in O(n).
Vector precision_apply(const Vector& x, double variance, double phi);
/// d(Sigma^{-1})/dphi applied to x in O(n).
Vector precision_dphi_apply(const Vector& x, double variance, double phi);

}  // namespace ar1

}  // namespace neuropgm
