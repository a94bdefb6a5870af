#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "neuropgm/covariance.hpp"
#include "neuropgm/fit_report.hpp"
#include "neuropgm/linalg.hpp"

namespace neuropgm {

struct RidgeOptions {
  std::optional<double> precision;  // unset: choose by evidence on a 20-point grid
  std::optional<double> noise_var;  // unset: maximize the evidence given the precision
};

struct RidgeFit {
  Vector w;
  double precision = 1.0;
  double noise_var = 1.0;
  double log_evidence = 0.0;
};

/// Posterior mean (X^T X + noise_var * precision * I)^{-1} X^T y under the
/// prior w ~ N(0, I / precision).
RidgeFit fit_ridge(const Matrix& X, const Vector& y, const RidgeOptions& opts = {});

/// log N(y; 0, X diag(v) X^T + noise_var I).
double linear_gaussian_evidence(const Matrix& X, const Vector& y, const Vector& v, double noise_var);

struct ArdOptions {
  int max_iters = 500;
  double tol = 1e-8;
  double floor = 1e-12;
  std::optional<double> noise_var;  // unset: re-estimated each iteration
};

struct ArdFit {
  Vector w;
  Vector variances;
  double noise_var = 1.0;
  std::vector<double> evidence_trace;
  bool converged = false;
  int fallback_steps = 0;  // fixed-point proposals replaced by an EM step
};

/// Evidence maximization with one prior variance per coefficient. Each
/// iteration tries the MacKay fixed-point update and falls back to the EM
/// update whenever the evidence would drop.
ArdFit fit_ard(const Matrix& X, const Vector& y, const ArdOptions& opts = {});

/// diag(exp u).
Diagonal drd_covariance(const Vector& u);

struct DrdHyper {
  double b = 0.0;          // prior mean of u
  double rho = 1.0;        // kernel magnitude
  double length = 1.0;     // kernel length scale
  double noise_var = 1.0;  // observation noise
};

struct DrdObjective {
  double value = 0.0;
  Vector grad;  // d value / d u
};

/// -log N(y; 0, X diag(exp u) X^T + noise_var I) - log N(u; b 1, K_SE(points)),
/// constants included.
DrdObjective drd_neg_log_posterior(const Vector& u, const DrdHyper& hyper, const Matrix& X, const Vector& y,
                                   const Matrix& points);

struct DrdOptions {
  int outer_evals = 30;
  int inner_iters = 40;
  double length_min = 0.5;
  std::optional<double> length_max;  // default: extent of the points
  double rho_min = 1e-3;
  double rho_max = 1e3;
  std::uint64_t seed = 0;
};

struct DrdModel {
  Vector w;
  Vector posterior_var;  // diagonal of the weight posterior covariance
  Vector u;
  DrdHyper hyper;
  Matrix points;
  double log_evidence = 0.0;  // Laplace approximation at the chosen hyperparameters
  std::vector<double> inner_trace;  // objective over the final MAP solve
  bool flagged = false;
  FitReport report;  // trace: negative Laplace evidence over accepted outer moves
};

DrdModel fit_drd(const Matrix& X, const Vector& y, const Matrix& points, const DrdOptions& opts = {});

Vector drd_predict(const DrdModel& model, const Matrix& X_new);
/// sign of the prediction with 0 mapped to +1.
Vector drd_classify(const DrdModel& model, const Matrix& X_new);

}  // namespace neuropgm
