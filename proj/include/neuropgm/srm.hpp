#pragma once

#include <cstdint>
#include <vector>

#include "neuropgm/fit_report.hpp"
#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// Shared response model. Data for subject m arrive as X_m (T x V_m); the
/// model is X_m^T = W_m S + mu_m 1^T + noise.
struct SrmModel {
  int K = 0;
  std::vector<Matrix> W;       // V_m x K, orthonormal columns
  std::vector<Vector> mu;      // V_m (zero for the deterministic fit)
  std::vector<double> rho2;    // empty for the deterministic fit
  Matrix sigma_s;              // K x K (empty for the deterministic fit)
  Matrix S;                    // K x T shared response (posterior mean)
};

struct SrmOptions {
  int max_iters = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool diagonal_shared_cov = false;
};

struct SrmFit {
  SrmModel model;
  FitReport report;  // trace: objective (deterministic) or log-likelihood
};

/// Orthonormal starting bases: thin Q of X_m^T G with one seeded T x K
/// Gaussian G shared by all subjects.
std::vector<Matrix> srm_initial_bases(const std::vector<Matrix>& datasets, int K, std::uint64_t seed);

/// Sum over subjects of |X_m^T - W_m S|_F^2.
double srm_deterministic_objective(const std::vector<Matrix>& datasets, const std::vector<Matrix>& W, const Matrix& S);

SrmFit fit_srm_deterministic(const std::vector<Matrix>& datasets, int K, const SrmOptions& opts = {});

/// Marginal log-likelihood of all subjects with S integrated out.
double srm_marginal_loglik(const std::vector<Matrix>& datasets, const SrmModel& model);

SrmFit fit_srm_probabilistic(const std::vector<Matrix>& datasets, int K, const SrmOptions& opts = {});

struct HyperalignmentFit {
  std::vector<Matrix> W;  // V x V orthogonal
  Matrix S;               // V x T template
  FitReport report;
};

/// Sum over subjects of |W_m^T X_m^T - S|_F^2.
double hyperalignment_objective(const std::vector<Matrix>& datasets, const std::vector<Matrix>& W, const Matrix& S);

HyperalignmentFit fit_hyperalignment(const std::vector<Matrix>& datasets, int max_iters = 200, double tol = 1e-6);

/// W_m^T (X^T - mu_m 1^T) for new data X (T' x V_m) of subject m.
Matrix srm_transform(const SrmModel& model, const Matrix& X, int subject);

}  // namespace neuropgm
