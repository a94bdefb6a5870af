#pragma once

#include <cstdint>
#include <vector>

#include "neuropgm/fit_report.hpp"
#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// Voxel positions, one 3-D coordinate per row (voxel units).
struct VoxelGrid {
  Matrix positions;

  /// Regular nx x ny x nz lattice at integer coordinates, x fastest.
  static VoxelGrid box(int nx, int ny, int nz);

  Eigen::Index size() const { return positions.rows(); }
  Vector lower() const;
  Vector upper() const;
  Vector centroid() const;
  /// Largest per-axis coordinate range.
  double extent() const;
  /// Throws BadSpec on empty, non-finite or duplicate positions.
  void validate() const;
};

/// exp(-|p_v - center|^2 / width) over the grid. Throws NonPositiveWidth.
Vector rbf_factor(const Vector& center, double width, const VoxelGrid& grid);
/// K x V factor matrix for K centers (K x 3) and widths.
Matrix rbf_factors(const Matrix& centers, const Vector& widths, const VoxelGrid& grid);

/// Gaussian prior on every entry of the weight matrix.
struct WeightPrior {
  double mean = 0.0;
  double var = 1.0;
};

/// Ridge solve for the T x K weights with the prior mean as shrinkage target:
/// W = (X F^T + r mu 1^T)(F F^T + r I)^{-1}, r = noise_var / prior.var.
Matrix tfa_weight_step(const Matrix& X, const Matrix& F, const WeightPrior& prior, double noise_var);

struct HtfaGlobalTemplate {
  Matrix centers;                     // K x 3
  Vector widths;                      // K
  Matrix center_prior_mean;           // K x 3
  std::vector<Matrix> center_prior_cov;  // K of 3 x 3
  Vector width_prior_mean;            // K
  Vector width_prior_var;             // K

  Eigen::Index factors() const { return centers.rows(); }
};

struct HtfaSubjectModel {
  Matrix centers;   // K x 3
  Vector widths;    // K
  Matrix weights;   // T x K
  double noise_var = 1.0;
  Matrix center_cov = Matrix::Identity(3, 3);  // Sigma_{mu_m}
  double width_var = 1.0;                      // sigma^2_{lambda_m}
  double subsample = 1.0;                      // phi_m in (0, 1]
  WeightPrior weight_prior;

  Eigen::Index factors() const { return centers.rows(); }
};

/// Negative log posterior of one subject: data misfit / (2 gamma^2) +
/// (T V / 2) log gamma^2 + center and width penalties scaled by 1/phi +
/// the Gaussian weight prior.
double tfa_local_objective(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& subject,
                           const HtfaGlobalTemplate& global);

/// The center/width part alone: reconstruction error plus the Mahalanobis
/// and width penalties, with the weights and noise held fixed.
double tfa_factor_objective(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& subject,
                            const HtfaGlobalTemplate& global);

struct LocalStepOptions {
  double initial_radius = 1.0;
  int max_inner_iters = 50;
  std::uint64_t seed = 0;
  int iteration = 0;  // selects the subsample draw
  int subject = 0;
};

struct LocalStepResult {
  HtfaSubjectModel subject;
  bool factor_step_accepted = true;  // false: solver did not reduce the cost
  int inner_iterations = 0;
};

/// Bounded trust-region update of centers and log-widths with weights fixed,
/// then the ridge weight refresh and the closed-form noise update.
LocalStepResult tfa_local_step(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& subject,
                               const HtfaGlobalTemplate& global, const LocalStepOptions& opts = {});

/// Conjugate update of the global template given every subject's local
/// centers and widths.
HtfaGlobalTemplate htfa_global_step(const std::vector<HtfaSubjectModel>& subjects,
                                    const HtfaGlobalTemplate& hyper);

/// Global prior penalty of the template under its own hyperpriors.
double htfa_global_objective(const HtfaGlobalTemplate& global);

struct HtfaOptions {
  int max_iters = 20;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  double subsample = 1.0;
  double subject_center_var = 1.0;
  double subject_width_var = 1.0;
  WeightPrior weight_prior;
  double initial_radius = 1.0;
  int max_inner_iters = 50;
  double candidate_fraction = 0.1;  // top-variance voxels used for center init
};

struct HtfaFit {
  HtfaGlobalTemplate global;
  std::vector<HtfaSubjectModel> subjects;
  FitReport report;
};

HtfaFit fit_htfa(const std::vector<Matrix>& datasets, const VoxelGrid& grid, int factors,
                 const HtfaOptions& opts = {});

/// Pearson correlation between the columns of W (T x K); unit diagonal.
Matrix node_connectivity(const Matrix& weights);

/// Inter-subject connectivity: each subject's columns correlated with the mean
/// of the other subjects' columns, averaged over subjects and symmetrized;
/// the diagonal is set to 1.
Matrix isfc(const std::vector<Matrix>& weights);

}  // namespace neuropgm
