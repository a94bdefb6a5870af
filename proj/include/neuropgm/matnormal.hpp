#pragma once

#include <cstdint>
#include <vector>

#include "neuropgm/covariance.hpp"
#include "neuropgm/fit_report.hpp"
#include "neuropgm/linalg.hpp"
#include "neuropgm/srm.hpp"

namespace neuropgm {

/// Matrix-normal factor models for X_m^T (V_m x T) = W_m S + mu_m 1^T + R_m with
/// R_m ~ MN(0, Sigma_v,m, Sigma_t).
///   MN-SRM: S ~ MN(0, Sigma_s, I_T), W_m a parameter.
///   DP-SRM: W_m ~ MN(0, I, Sigma_w), S a parameter.
/// Sigma_t is AR1 (variance fixed at 1) or ScaledIdentity (fixed at I);
/// Sigma_v is Diagonal or ScaledIdentity per subject.
struct MnModel {
  ModelTag variant = ModelTag::MnSrm;
  int K = 0;
  std::vector<Matrix> W;   // V_m x K (DP-SRM: posterior mean)
  std::vector<Vector> mu;  // V_m
  Matrix S;                // K x T (MN-SRM: posterior mean)
  Matrix sigma_s;          // MN-SRM
  Matrix sigma_w;          // DP-SRM
  CovarianceSpec sigma_t = AR1{1.0, 0.0};
  std::vector<CovarianceSpec> sigma_v;
  FitReport report;  // trace: marginal log-likelihood

  double temporal_phi() const;
};

/// log p(X_1..X_M) with S integrated out: all subjects stacked on the voxel
/// axis, density of C1 kron R1 + C2 kron R2 with R1 = W Sigma_s W^T (low rank),
/// C1 = I_T, R2 = blockdiag(Sigma_v,m), C2 = Sigma_t.
double mnsrm_marginal_loglik(const std::vector<Matrix>& datasets, const MnModel& model);

/// Sum over subjects of log N(vec(X_m^T); vec(mu_m 1^T), (S^T Sigma_w S) kron I + Sigma_t kron Sigma_v,m).
double dpsrm_marginal_loglik(const std::vector<Matrix>& datasets, const MnModel& model);

struct DpsrmGradient {
  double value = 0.0;
  Matrix dS;                        // K x T
  std::vector<Vector> dmu;          // per subject
  Matrix dsigma_w;                  // K x K, entrywise convention
  Vector dsigma_t;                  // packed parameters of sigma_t
  std::vector<Vector> dsigma_v;     // packed parameters of each sigma_v
};

DpsrmGradient dpsrm_marginal_grad(const std::vector<Matrix>& datasets, const MnModel& model);

struct MnOptions {
  int max_iters = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  CovarianceSpec temporal = AR1{1.0, 0.0};  // family and starting point of Sigma_t
  bool diagonal_voxel = true;               // Diagonal (true) or ScaledIdentity Sigma_v
};

MnModel fit_mnsrm(const std::vector<Matrix>& datasets, int K, const MnOptions& opts = {});
MnModel fit_dpsrm(const std::vector<Matrix>& datasets, int K, const MnOptions& opts = {});

struct HeldoutScore {
  double rmse = 0.0;
  double loglik = 0.0;  // predictive log-density of the held-out half
};

/// Scores a new subject X_new (T x V): time points with odd index are held
/// out. The subject's loadings, voxel means and noise are fitted on the even
/// half with the shared parameters frozen; the held-out half is predicted by
/// the loadings plus the conditional mean of the temporally correlated
/// residual.
HeldoutScore mn_heldout_score(const MnModel& model, const Matrix& X_new);

/// Same split for an SRM fit: Procrustes loadings on the even half, mean
/// prediction on the odd half, white residual.
HeldoutScore srm_heldout_score(const SrmModel& model, const Matrix& X_new);

/// RMSE of X_m^T - (W_m S + mu_m 1^T) over all entries.
double mn_training_rmse(const MnModel& model, const Matrix& X, int subject);

}  // namespace neuropgm
