#pragma once

#include <string>
#include <vector>

#include "neuropgm/fit_report.hpp"
#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// One task event. Onset and duration are in samples.
struct Event {
  double onset = 0.0;
  double duration = 1.0;
  double amplitude = 1.0;
  std::string condition;
};

struct DesignMatrix {
  Matrix S;                             // T x K
  std::vector<std::string> conditions;  // column labels

  /// Throws BadSpec on non-finite entries or an all-zero column.
  void validate() const;
};

/// Double-gamma response (peak 1, undershoot near 15 s) sampled every 2 s.
Vector default_hrf();

/// Each condition column is the boxcar train of its events convolved with
/// `kernel` and truncated to T. Conditions are ordered by first appearance.
/// An event starting before 0 or ending after T throws BadSpec.
DesignMatrix convolve_design(const std::vector<Event>& events, int T, const Vector& kernel);

struct Similarity {
  Matrix matrix;                 // K x K, unit diagonal
  std::vector<bool> degenerate;  // rows with zero variance
};

/// U_ij / sqrt(U_ii U_jj), clamped to [-1, 1]; zero-variance rows get zero
/// off-diagonal entries and are flagged.
Similarity similarity_from_cov(const Matrix& U);

/// Regresses X on S and returns the cosine similarity between the rows of
/// the estimated pattern matrix (no demeaning unless `demean`).
Matrix naive_rsa(const Matrix& X, const Matrix& S, bool demean = false);

/// Correlation form of (S^T S)^{-1}: the structure naive RSA reports on pure
/// white noise.
Matrix expected_spurious_similarity(const Matrix& S);

/// Negative marginal log-likelihood of all voxels and its gradients.
struct BrsaObjective {
  double value = 0.0;
  Matrix dL;            // K x K, lower triangle meaningful
  Vector dlog_sigma;    // per voxel
  Vector datanh_phi;    // per voxel
};

/// Sum over voxels of -log N(x_v - S0 w0_v; 0, S L L^T S^T + AR1(sigma_v^2, phi_v)),
/// with w0_v the GLS estimate under the same covariance. S0 may have zero
/// columns. Uses the rank-K Woodbury identity against the tridiagonal AR(1)
/// precision, so cost is linear in T per voxel.
BrsaObjective brsa_neg_marginal_loglik(const Matrix& L, const Vector& sigma, const Vector& phi, const Matrix& S,
                                       const Matrix& S0, const Matrix& X, bool with_gradient = true);

struct BrsaOptions {
  int nuisance_rank = 0;
  int rounds = 3;
  int max_iters = 300;
  double tol = 1e-13;  // relative; looser values leave the similarity parameterization-dependent
  bool demean = false;  // similarity convention for the naive baseline
};

struct BrsaModel {
  Matrix L;                      // K x K lower triangular, U_W = L L^T
  Vector sigma;                  // per-voxel noise sd
  Vector phi;                    // per-voxel AR(1) coefficient
  int nuisance_rank = 0;
  Matrix S0;                     // T x n0
  Matrix W0;                     // n0 x V
  Matrix similarity;             // K x K
  std::vector<double> loglik_trace;
  FitReport report;

  Matrix pattern_cov() const { return L * L.transpose(); }
};

BrsaModel fit_brsa(const Matrix& X, const Matrix& S, const BrsaOptions& opts = {});

/// Off-diagonal root-mean-square difference between two similarity matrices.
double offdiag_rmse(const Matrix& A, const Matrix& B);

}  // namespace neuropgm
