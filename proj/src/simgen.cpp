#include "neuropgm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "neuropgm/covariance.hpp"
#include "neuropgm/error.hpp"

namespace neuropgm {

const Matrix& SimTruth::latent(const std::string& name) const {
  auto it = latents.find(name);
  if (it == latents.end()) fail(ErrorCode::BadSpec, "truth has no latent '" + name + "'");
  return it->second;
}

double SimTruth::scalar(const std::string& name) const {
  auto it = scalars.find(name);
  if (it == scalars.end()) fail(ErrorCode::BadSpec, "truth has no scalar '" + name + "'");
  return it->second;
}

void SimSpec::validate() const {
  if (subjects < 1 || timepoints < 1 || voxels < 1 || factors < 1)
    fail(ErrorCode::BadSpec, "subjects, timepoints, voxels and factors must all be >= 1");
  if (!(snr > 0) || !std::isfinite(snr)) fail(ErrorCode::BadSpec, "snr must be positive");
  if (noise_var && !(*noise_var >= 0)) fail(ErrorCode::BadSpec, "noise_var must be >= 0");
  if (!(std::abs(temporal_phi) < 1)) fail(ErrorCode::BadSpec, "temporal_phi must lie in (-1, 1)");
  if (!(ar_phi_min > -1 && ar_phi_max < 1 && ar_phi_min <= ar_phi_max))
    fail(ErrorCode::BadSpec, "AR coefficient range must satisfy -1 < min <= max < 1");
  if (subject_center_var < 0 || subject_width_var < 0 || width_sd < 0 || weight_sd < 0)
    fail(ErrorCode::BadSpec, "HTFA variances must be >= 0");
  if (!(drd_magnitude > 0) || !(drd_length > 0)) fail(ErrorCode::BadSpec, "DRD kernel parameters must be positive");
  if (drd_blocks < 0 || drd_block_width < 1 || drd_test_rows < 0) fail(ErrorCode::BadSpec, "bad DRD block settings");
  if (nuisance_rank < 0) fail(ErrorCode::BadSpec, "nuisance_rank must be >= 0");
  if (shared_cov) {
    if (shared_cov->rows() != factors || shared_cov->cols() != factors)
      fail(ErrorCode::BadSpec, "shared_cov must be K x K");
  }
}

double entry_variance(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  const double mean = A.mean();
  return (A.array() - mean).square().sum() / static_cast<double>(A.size());
}

Matrix psd_sqrt_factor(const Matrix& A) {
  if (A.rows() != A.cols()) fail(ErrorCode::DimensionMismatch, "covariance must be square");
  const SymEigen e = sym_eigen(symmetrize(A));
  const double tol = 1e-10 * std::max(1.0, e.values.cwiseAbs().maxCoeff());
  if (e.values.minCoeff() < -tol) fail(ErrorCode::NotSPD, "covariance has a negative eigenvalue");
  return e.vectors * e.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vector sample_ar1(Rng& rng, Eigen::Index n, double variance, double phi) {
  Vector x(n);
  if (n == 0) return x;
  const double sd = std::sqrt(variance);
  const double innov = std::sqrt(variance * (1.0 - phi * phi));
  x(0) = sd * rng.normal();
  for (Eigen::Index t = 1; t < n; ++t) x(t) = phi * x(t - 1) + innov * rng.normal();
  return x;
}

Matrix two_cluster_pattern_cov(int K, double within, double across) {
  Matrix U(K, K);
  const int half = K / 2;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) U(i, j) = i == j ? 1.0 : ((i < half) == (j < half) ? within : across);
  return U;
}

DesignMatrix default_design(int T, int K, std::uint64_t seed, int spacing) {
  if (T < 1 || K < 1 || spacing < 1) fail(ErrorCode::BadSpec, "design needs T, K, spacing >= 1");
  Rng rng(seed, "brsa/design");
  std::vector<Event> events;
  std::vector<int> perm(K);
  std::size_t next = perm.size();
  for (int onset = 2; onset + 1 <= T; onset += spacing) {
    if (next == perm.size()) {
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i + 1 < perm.size(); ++i) std::swap(perm[i], perm[i + rng.below(perm.size() - i)]);
      next = 0;
    }
    events.push_back({static_cast<double>(onset), 1.0, 1.0, "c" + std::to_string(perm[next++])});
  }
  DesignMatrix d = convolve_design(events, T, default_hrf());
  if (static_cast<int>(d.conditions.size()) != K)
    fail(ErrorCode::BadSpec, "timepoints too few to place every condition at least once");
  // Column order c0, c1, ... regardless of which appeared first.
  DesignMatrix sorted;
  sorted.S.resize(T, K);
  for (int k = 0; k < K; ++k) {
    const std::string name = "c" + std::to_string(k);
    const auto it = std::find(d.conditions.begin(), d.conditions.end(), name);
    sorted.S.col(k) = d.S.col(it - d.conditions.begin());
    sorted.conditions.push_back(name);
  }
  return sorted;
}

VoxelGrid default_grid(int voxels) {
  const int side = std::max(1, static_cast<int>(std::lround(std::cbrt(static_cast<double>(voxels)))));
  return VoxelGrid::box(side, side, side);
}

Matrix line_points(int V) {
  Matrix p(V, 1);
  for (int i = 0; i < V; ++i) p(i, 0) = i;
  return p;
}

namespace {

double noise_variance(const SimSpec& spec, const Matrix& signal) {
  return spec.noise_var ? *spec.noise_var : entry_variance(signal) / spec.snr;
}

std::string sub(const char* name, int m) { return std::string(name) + "_" + std::to_string(m); }

Matrix clip_rows(Matrix P, const Vector& lo, const Vector& hi) {
  for (Eigen::Index r = 0; r < P.rows(); ++r) P.row(r) = P.row(r).cwiseMax(lo.transpose()).cwiseMin(hi.transpose());
  return P;
}

}  // namespace

SimOutput simulate_srm(const SimSpec& spec) {
  spec.validate();
  const int K = spec.factors, T = spec.timepoints, V = spec.voxels;
  if (K > std::min(T, V)) fail(ErrorCode::BadSpec, "srm needs K <= min(T, V)");
  SimOutput out;
  out.truth.model = ModelTag::Srm;
  out.truth.seed = spec.seed;
  const Matrix sigma_s = spec.shared_cov.value_or(Matrix::Identity(K, K));
  Rng rs(spec.seed, "srm/S");
  const Matrix S = psd_sqrt_factor(sigma_s) * rs.normal_matrix(K, T);
  out.truth.latents["S"] = S;
  out.truth.latents["Sigma_s"] = sigma_s;
  for (int m = 0; m < spec.subjects; ++m) {
    Rng rw(spec.seed, "srm/W/" + std::to_string(m));
    const Matrix W = thin_orthonormal_basis(rw.normal_matrix(V, K));
    Rng rm(spec.seed, "srm/mu/" + std::to_string(m));
    const Vector mu = spec.mean_scale * rm.normal_vector(V);
    const Matrix signal = W * S;
    const double rho2 = noise_variance(spec, signal);
    Rng rn(spec.seed, "srm/noise/" + std::to_string(m));
    const Matrix noise = std::sqrt(rho2) * rn.normal_matrix(V, T);
    const Matrix Xt = (signal.colwise() + mu) + noise;
    out.datasets.push_back(Xt.transpose());
    out.truth.latents[sub("W", m)] = W;
    out.truth.latents[sub("mu", m)] = mu;
    out.truth.scalars[sub("rho2", m)] = rho2;
  }
  return out;
}

SimOutput simulate_htfa(const SimSpec& spec, const VoxelGrid& grid) {
  spec.validate();
  grid.validate();
  const int K = spec.factors, T = spec.timepoints;
  SimOutput out;
  out.truth.model = ModelTag::Htfa;
  out.truth.seed = spec.seed;
  const Vector lo = grid.lower(), hi = grid.upper();
  const double spread = spec.center_spread.value_or(grid.extent() / 4.0);
  Rng rg(spec.seed, "htfa/global");
  Matrix centers = rg.normal_matrix(K, 3) * spread;
  centers.rowwise() += grid.centroid().transpose();
  centers = clip_rows(centers, lo, hi);
  Vector widths(K);
  for (int k = 0; k < K; ++k) widths(k) = std::max(spec.width_mean + spec.width_sd * rg.normal(), 1e-3);
  out.truth.latents["centers"] = centers;
  out.truth.latents["widths"] = widths;
  for (int m = 0; m < spec.subjects; ++m) {
    Rng rl(spec.seed, "htfa/local/" + std::to_string(m));
    const Matrix cm = clip_rows(centers + std::sqrt(spec.subject_center_var) * rl.normal_matrix(K, 3), lo, hi);
    Vector wm(K);
    for (int k = 0; k < K; ++k) wm(k) = std::max(widths(k) + std::sqrt(spec.subject_width_var) * rl.normal(), 1e-3);
    const Matrix F = rbf_factors(cm, wm, grid);
    Rng rw(spec.seed, "htfa/W/" + std::to_string(m));
    Matrix W = spec.weight_sd * rw.normal_matrix(T, K);
    W.array() += spec.weight_mean;
    const Matrix signal = W * F;
    const double gamma2 = noise_variance(spec, signal);
    Rng rn(spec.seed, "htfa/noise/" + std::to_string(m));
    out.datasets.push_back(signal + std::sqrt(gamma2) * rn.normal_matrix(T, grid.size()));
    out.truth.latents[sub("centers", m)] = cm;
    out.truth.latents[sub("widths", m)] = wm;
    out.truth.latents[sub("W", m)] = W;
    out.truth.scalars[sub("gamma2", m)] = gamma2;
  }
  return out;
}

SimOutput simulate_drd(const SimSpec& spec, const Matrix& points) {
  spec.validate();
  const Eigen::Index V = points.rows();
  if (V < 1) fail(ErrorCode::BadSpec, "drd needs at least one point");
  const Eigen::Index rows = spec.timepoints + spec.drd_test_rows;
  SimOutput out;
  out.truth.model = ModelTag::Drd;
  out.truth.seed = spec.seed;
  Vector u = Vector::Constant(V, spec.drd_mean);
  Rng ru(spec.seed, "drd/u");
  if (spec.drd_blocks > 0) {
    // One block per equal segment of the index range, at a random offset.
    const Eigen::Index seg = V / spec.drd_blocks;
    if (seg < spec.drd_block_width) fail(ErrorCode::BadSpec, "blocks do not fit in the voxel range");
    for (int b = 0; b < spec.drd_blocks; ++b) {
      const Eigen::Index start = b * seg + static_cast<Eigen::Index>(ru.below(seg - spec.drd_block_width + 1));
      u.segment(start, spec.drd_block_width).setConstant(spec.drd_block_level);
    }
  } else {
    const SEKernel k = SEKernel::with_default_jitter(points, spec.drd_magnitude, spec.drd_length);
    const CholeskyFactor chol = cov_cholesky(k, V);
    u += chol.L * ru.normal_vector(V);
  }
  Rng rw(spec.seed, "drd/w");
  Vector w(V);
  for (Eigen::Index i = 0; i < V; ++i) w(i) = std::exp(0.5 * u(i)) * rw.normal();
  Rng rx(spec.seed, "drd/X");
  const Matrix X = rx.normal_matrix(rows, V);
  const Vector signal = X * w;
  const double sigma2 = noise_variance(spec, signal);
  Rng rn(spec.seed, "drd/noise");
  out.targets = signal + std::sqrt(sigma2) * rn.normal_vector(rows);
  out.datasets.push_back(X);
  out.truth.latents["w"] = w;
  out.truth.latents["u"] = u;
  out.truth.latents["points"] = points;
  out.truth.scalars["sigma2"] = sigma2;
  out.truth.scalars["b"] = spec.drd_mean;
  out.truth.scalars["rho"] = spec.drd_magnitude;
  out.truth.scalars["l"] = spec.drd_length;
  out.truth.scalars["test_rows"] = spec.drd_test_rows;
  return out;
}

SimOutput simulate_brsa(const SimSpec& spec, const Matrix& design, const Matrix& pattern_cov) {
  spec.validate();
  const Eigen::Index T = design.rows(), K = design.cols(), V = spec.voxels;
  if (pattern_cov.rows() != K || pattern_cov.cols() != K)
    fail(ErrorCode::DimensionMismatch, "pattern covariance must be K x K for a T x K design");
  SimOutput out;
  out.truth.model = ModelTag::Brsa;
  out.truth.seed = spec.seed;
  Rng rw(spec.seed, "brsa/W");
  const Matrix W = psd_sqrt_factor(pattern_cov) * rw.normal_matrix(K, V);
  const Matrix signal = design * W;
  Matrix X = signal;
  const int n0 = spec.nuisance_rank;
  Matrix S0(T, n0), W0(n0, V);
  if (n0 > 0) {
    Rng r0(spec.seed, "brsa/nuisance");
    for (int j = 0; j < n0; ++j) S0.col(j) = sample_ar1(r0, T, 1.0, 0.9);
    W0 = spec.nuisance_scale * r0.normal_matrix(n0, V);
    X += S0 * W0;
  }
  const double base = noise_variance(spec, signal);
  Rng rp(spec.seed, "brsa/phi");
  Vector phi(V), sigma = Vector::Constant(V, std::sqrt(base));
  for (Eigen::Index v = 0; v < V; ++v) phi(v) = spec.ar_phi_min + (spec.ar_phi_max - spec.ar_phi_min) * rp.uniform();
  Rng rn(spec.seed, "brsa/noise");
  for (Eigen::Index v = 0; v < V; ++v) X.col(v) += sample_ar1(rn, T, base, phi(v));
  out.datasets.push_back(X);
  out.truth.latents["W"] = W;
  out.truth.latents["U_W"] = pattern_cov;
  out.truth.latents["design"] = design;
  out.truth.latents["S0"] = S0;
  out.truth.latents["W0"] = W0;
  out.truth.latents["sigma"] = sigma;
  out.truth.latents["phi"] = phi;
  out.truth.latents["similarity"] = similarity_from_cov(pattern_cov).matrix;
  out.truth.latents["similarity_realized"] = similarity_from_cov(W * W.transpose()).matrix;
  out.truth.scalars["noise_var"] = base;
  return out;
}

SimOutput simulate_matnormal(const SimSpec& spec) {
  spec.validate();
  if (spec.model != ModelTag::MnSrm && spec.model != ModelTag::DpSrm)
    fail(ErrorCode::BadSpec, "simulate_matnormal needs model mnsrm or dpsrm");
  const bool dual = spec.model == ModelTag::DpSrm;
  const int K = spec.factors, T = spec.timepoints, V = spec.voxels;
  if (!dual && K > std::min(T, V)) fail(ErrorCode::BadSpec, "mnsrm needs K <= min(T, V)");
  SimOutput out;
  out.truth.model = spec.model;
  out.truth.seed = spec.seed;
  const Matrix shared = spec.shared_cov.value_or(Matrix::Identity(K, K));
  const Matrix shared_sqrt = psd_sqrt_factor(shared);
  Rng rs(spec.seed, "mn/S");
  const Matrix S = dual ? rs.normal_matrix(K, T) : Matrix(shared_sqrt * rs.normal_matrix(K, T));
  out.truth.latents["S"] = S;
  out.truth.latents[dual ? "Sigma_w" : "Sigma_s"] = shared;
  out.truth.scalars["phi_t"] = spec.temporal_phi;
  for (int m = 0; m < spec.subjects; ++m) {
    Rng rw(spec.seed, "mn/W/" + std::to_string(m));
    const Matrix W = dual ? Matrix(rw.normal_matrix(V, K) * shared_sqrt.transpose())
                          : thin_orthonormal_basis(rw.normal_matrix(V, K));
    Rng rm(spec.seed, "mn/mu/" + std::to_string(m));
    const Vector mu = spec.mean_scale * rm.normal_vector(V);
    const Matrix signal = W * S;
    const double rho2 = noise_variance(spec, signal);
    // Residual ~ MN(0, rho2 I_V, AR1(1, phi)): each voxel row is an AR(1) series.
    Rng rn(spec.seed, "mn/noise/" + std::to_string(m));
    Matrix R(V, T);
    for (int v = 0; v < V; ++v) R.row(v) = sample_ar1(rn, T, rho2, spec.temporal_phi).transpose();
    const Matrix Xt = (signal.colwise() + mu) + R;
    out.datasets.push_back(Xt.transpose());
    out.truth.latents[sub("W", m)] = W;
    out.truth.latents[sub("mu", m)] = mu;
    out.truth.latents[sub("R", m)] = R;
    out.truth.scalars[sub("rho2", m)] = rho2;
  }
  return out;
}

SimOutput simulate(const SimSpec& spec) {
  switch (spec.model) {
    case ModelTag::Srm: return simulate_srm(spec);
    case ModelTag::Htfa: return simulate_htfa(spec, default_grid(spec.voxels));
    case ModelTag::Drd: return simulate_drd(spec, line_points(spec.voxels));
    case ModelTag::Brsa: {
      const DesignMatrix d = default_design(spec.timepoints, spec.factors, spec.seed);
      return simulate_brsa(spec, d.S, spec.shared_cov.value_or(two_cluster_pattern_cov(spec.factors)));
    }
    case ModelTag::MnSrm:
    case ModelTag::DpSrm: return simulate_matnormal(spec);
  }
  fail(ErrorCode::BadSpec, "unknown model");
}

}  // namespace neuropgm
