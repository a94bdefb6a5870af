#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuropgm/brsa.hpp"
#include "neuropgm/htfa.hpp"
#include "neuropgm/linalg.hpp"
#include "neuropgm/model_tag.hpp"
#include "neuropgm/random.hpp"

namespace neuropgm {

/// Ground truth emitted by a simulator: every latent exactly as sampled, keyed
/// by name ("S", "W_0", "mu_0", "centers_2", ...), plus scalar parameters.
struct SimTruth {
  ModelTag model = ModelTag::Srm;
  std::uint64_t seed = 0;
  std::map<std::string, Matrix> latents;
  std::map<std::string, double> scalars;

  const Matrix& latent(const std::string& name) const;
  double scalar(const std::string& name) const;
};

/// Simulation settings. Dimensions and SNR are shared by every model; the
/// remaining fields are model-specific hyperparameters with usable defaults.
/// SNR is Var(signal entries) / Var(noise entries) measured on the realized
/// signal; `noise_var` bypasses it (0 gives noiseless data).
struct SimSpec {
  ModelTag model = ModelTag::Srm;
  int subjects = 1;
  int timepoints = 100;
  int voxels = 100;
  int factors = 2;
  double snr = 1.0;
  std::optional<double> noise_var;
  std::uint64_t seed = 0;

  // srm / mnsrm / dpsrm
  std::optional<Matrix> shared_cov;  // Sigma_s (srm, mnsrm) or Sigma_w (dpsrm); identity if unset
  double mean_scale = 1.0;           // voxel means mu_m ~ N(0, mean_scale^2)
  double temporal_phi = 0.5;         // AR(1) Sigma_t for mnsrm / dpsrm

  // htfa
  std::optional<double> center_spread;  // sd of global centers around the grid centroid (extent/4)
  double subject_center_var = 0.25;     // Sigma_{mu_m} = var * I
  double width_mean = 5.0;
  double width_sd = 0.5;
  double subject_width_var = 0.09;
  double weight_mean = 0.0;
  double weight_sd = 1.0;

  // drd
  double drd_mean = -2.0;         // b
  double drd_magnitude = 1.0;     // rho
  double drd_length = 5.0;        // l
  int drd_blocks = 0;             // > 0: u is high on this many contiguous blocks
  int drd_block_width = 20;
  double drd_block_level = 0.0;   // u inside blocks; drd_mean elsewhere
  int drd_test_rows = 0;          // extra held-out rows appended to X and y

  // brsa
  int nuisance_rank = 0;
  double nuisance_scale = 1.0;
  double ar_phi_min = 0.0;
  double ar_phi_max = 0.5;

  /// Throws BadSpec when a dimension is < 1 or SNR is not positive.
  void validate() const;
};

struct SimOutput {
  std::vector<Matrix> datasets;  // per subject, time x voxel
  Vector targets;                // drd only: y
  SimTruth truth;
};

SimOutput simulate_srm(const SimSpec& spec);
SimOutput simulate_htfa(const SimSpec& spec, const VoxelGrid& grid);
/// points: one row per voxel location. Truth holds u, w and the noise level;
/// with drd_test_rows > 0 the final rows of X and y are a held-out split.
SimOutput simulate_drd(const SimSpec& spec, const Matrix& points);
/// design: T x K; pattern_cov: K x K positive semidefinite.
SimOutput simulate_brsa(const SimSpec& spec, const Matrix& design, const Matrix& pattern_cov);
/// spec.model selects MnSrm or DpSrm.
SimOutput simulate_matnormal(const SimSpec& spec);

/// Entry point used by the CLI; builds default grids, points and designs
/// from the spec when a model needs them.
SimOutput simulate(const SimSpec& spec);

/// Population variance of all entries.
double entry_variance(const Matrix& A);

/// Square root with A = B B^T for positive semidefinite A (eigen-based, so a
/// singular or zero A is allowed).
Matrix psd_sqrt_factor(const Matrix& A);

/// Unit-variance pattern covariance with two equal condition clusters:
/// correlation `within` inside a cluster, `across` between clusters.
Matrix two_cluster_pattern_cov(int K, double within = 0.8, double across = 0.0);

/// Event-related design: one unit event every `spacing` samples, conditions
/// cycling through seeded random permutations, convolved with default_hrf().
DesignMatrix default_design(int T, int K, std::uint64_t seed, int spacing = 4);

/// Cube grid with side round(cbrt(voxels)).
VoxelGrid default_grid(int voxels);

/// V evenly spaced 1-D locations 0, 1, ..., V-1 (V x 1).
Matrix line_points(int V);

/// Stationary AR(1) series of length n with marginal variance `variance`.
Vector sample_ar1(Rng& rng, Eigen::Index n, double variance, double phi);

}  // namespace neuropgm
