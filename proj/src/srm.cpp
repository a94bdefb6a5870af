#include "neuropgm/srm.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "neuropgm/density.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/parallel.hpp"
#include "neuropgm/random.hpp"

namespace neuropgm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::Index check_datasets(const std::vector<Matrix>& datasets, int K) {
  if (datasets.empty()) fail(ErrorCode::BadShape, "no datasets");
  const Eigen::Index T = datasets[0].rows();
  for (const auto& X : datasets) {
    if (X.rows() != T) fail(ErrorCode::BadShape, "all subjects must share the number of time points");
    if (X.cols() < 1 || !X.allFinite()) fail(ErrorCode::BadShape, "datasets must be non-empty and finite");
    if (K > X.cols()) fail(ErrorCode::BadShape, "K exceeds a subject's voxel count");
  }
  if (K < 1 || K > T) fail(ErrorCode::BadShape, "K must lie in [1, T]");
  return T;
}

bool small_change(double prev, double cur, double tol) {
  return std::abs(cur - prev) <= tol * std::max(std::abs(prev), 1e-300);
}

// Shared-space average (1/M) sum_m W_m^T A_m^T.
Matrix average_projection(const std::vector<Matrix>& centered_t, const std::vector<Matrix>& W) {
  Matrix S = Matrix::Zero(W[0].cols(), centered_t[0].cols());
  for (std::size_t m = 0; m < W.size(); ++m) S += W[m].transpose() * centered_t[m];
  return S / static_cast<double>(W.size());
}

}  // namespace

std::vector<Matrix> srm_initial_bases(const std::vector<Matrix>& datasets, int K, std::uint64_t seed) {
  const Eigen::Index T = check_datasets(datasets, K);
  Rng rng(seed, "srm/init");
  const Matrix G = rng.normal_matrix(T, K);
  std::vector<Matrix> W;
  for (const auto& X : datasets) W.push_back(thin_orthonormal_basis(X.transpose() * G));
  return W;
}

double srm_deterministic_objective(const std::vector<Matrix>& datasets, const std::vector<Matrix>& W, const Matrix& S) {
  double f = 0.0;
  for (std::size_t m = 0; m < datasets.size(); ++m) f += (datasets[m].transpose() - W[m] * S).squaredNorm();
  return f;
}

SrmFit fit_srm_deterministic(const std::vector<Matrix>& datasets, int K, const SrmOptions& opts) {
  const auto t0 = Clock::now();
  check_datasets(datasets, K);
  const std::size_t M = datasets.size();
  std::vector<Matrix> Xt(M);
  for (std::size_t m = 0; m < M; ++m) Xt[m] = datasets[m].transpose();

  SrmFit fit;
  SrmModel& model = fit.model;
  model.K = K;
  model.W = srm_initial_bases(datasets, K, opts.seed);
  model.S = average_projection(Xt, model.W);
  FitReport& rep = fit.report;
  rep.model = ModelTag::Srm;
  rep.seed = opts.seed;
  double prev = srm_deterministic_objective(datasets, model.W, model.S);
  rep.record(prev);
  for (int it = 0; it < opts.max_iters; ++it) {
    parallel_for(M, [&](std::size_t m) { model.W[m] = orthogonal_procrustes(Xt[m] * model.S.transpose()); });
    model.S = average_projection(Xt, model.W);
    const double cur = srm_deterministic_objective(datasets, model.W, model.S);
    rep.record(cur);
    if (small_change(prev, cur, opts.tol) || cur == 0.0) {
      rep.converged = true;
      break;
    }
    prev = cur;
  }
  for (std::size_t m = 0; m < M; ++m) model.mu.push_back(Vector::Zero(datasets[m].cols()));
  rep.message = rep.converged ? "converged" : "iteration limit";
  rep.wall_seconds = seconds_since(t0);
  return fit;
}

namespace {

struct Posterior {
  Matrix cov;   // K x K, shared by every time point
  Matrix mean;  // K x T
};

Posterior srm_posterior(const std::vector<Matrix>& centered_t, const SrmModel& model) {
  const Eigen::Index K = model.K;
  double c = 0.0;
  Matrix b = Matrix::Zero(K, centered_t[0].cols());
  for (std::size_t m = 0; m < centered_t.size(); ++m) {
    c += 1.0 / model.rho2[m];
    b += model.W[m].transpose() * centered_t[m] / model.rho2[m];
  }
  Matrix prec = cholesky_logdet(model.sigma_s).inverse();
  prec.diagonal().array() += c;
  const CholeskyFactor chol = cholesky_logdet(prec);
  return {chol.inverse(), chol.solve(b)};
}

double marginal_loglik_centered(const std::vector<Matrix>& centered_t, const SrmModel& model) {
  const Eigen::Index K = model.K;
  const double T = static_cast<double>(centered_t[0].cols());
  double c = 0.0, total_v = 0.0, logdet_d = 0.0, quad = 0.0;
  Matrix b = Matrix::Zero(K, centered_t[0].cols());
  for (std::size_t m = 0; m < centered_t.size(); ++m) {
    const double v = static_cast<double>(centered_t[m].rows());
    c += 1.0 / model.rho2[m];
    total_v += v;
    logdet_d += v * std::log(model.rho2[m]);
    quad += centered_t[m].squaredNorm() / model.rho2[m];
    b += model.W[m].transpose() * centered_t[m] / model.rho2[m];
  }
  // determinant lemma: |W Sigma_s W^T + D| = |D| |Sigma_s| |Sigma_s^{-1} + c I|
  const CholeskyFactor sc = cholesky_logdet(model.sigma_s);
  Matrix prec = sc.inverse();
  prec.diagonal().array() += c;
  const CholeskyFactor pc = cholesky_logdet(prec);
  const double logdet = logdet_d + sc.logdet + pc.logdet;
  quad -= (b.array() * pc.solve(b).array()).sum();
  return -0.5 * (T * total_v * kLog2Pi + T * logdet + quad);
}

std::vector<Matrix> centered_transposes(const std::vector<Matrix>& datasets, const std::vector<Vector>& mu) {
  std::vector<Matrix> out(datasets.size());
  for (std::size_t m = 0; m < datasets.size(); ++m) out[m] = datasets[m].transpose().colwise() - mu[m];
  return out;
}

Matrix floor_eigenvalues(const Matrix& A, double floor) {
  const SymEigen e = sym_eigen(symmetrize(A));
  return e.vectors * e.values.cwiseMax(floor).asDiagonal() * e.vectors.transpose();
}

}  // namespace

double srm_marginal_loglik(const std::vector<Matrix>& datasets, const SrmModel& model) {
  check_datasets(datasets, model.K);
  if (model.W.size() != datasets.size() || model.rho2.size() != datasets.size() || model.mu.size() != datasets.size())
    fail(ErrorCode::DimensionMismatch, "model and data disagree on the subject count");
  return marginal_loglik_centered(centered_transposes(datasets, model.mu), model);
}

SrmFit fit_srm_probabilistic(const std::vector<Matrix>& datasets, int K, const SrmOptions& opts) {
  const auto t0 = Clock::now();
  const Eigen::Index T = check_datasets(datasets, K);
  const std::size_t M = datasets.size();
  SrmFit fit;
  SrmModel& model = fit.model;
  model.K = K;
  for (const auto& X : datasets) model.mu.push_back(X.colwise().mean().transpose());
  const std::vector<Matrix> Xc = centered_transposes(datasets, model.mu);

  model.W = srm_initial_bases(datasets, K, opts.seed);
  {
    const Matrix S0 = average_projection(Xc, model.W);
    model.sigma_s = floor_eigenvalues(S0 * S0.transpose() / static_cast<double>(T), 1e-10);
    if (opts.diagonal_shared_cov) model.sigma_s = Matrix(model.sigma_s.diagonal().asDiagonal());
    for (std::size_t m = 0; m < M; ++m) {
      const double r = (Xc[m] - model.W[m] * S0).squaredNorm() / static_cast<double>(Xc[m].size());
      model.rho2.push_back(std::max(r, 1e-12 * Xc[m].squaredNorm() / static_cast<double>(Xc[m].size())));
    }
  }

  FitReport& rep = fit.report;
  rep.model = ModelTag::Srm;
  rep.seed = opts.seed;
  double prev = marginal_loglik_centered(Xc, model);
  rep.record(prev);
  for (int it = 0; it < opts.max_iters; ++it) {
    const Posterior post = srm_posterior(Xc, model);
    const Matrix ESSt = static_cast<double>(T) * post.cov + post.mean * post.mean.transpose();
    parallel_for(M, [&](std::size_t m) {
      const Matrix cross = Xc[m] * post.mean.transpose();
      model.W[m] = orthogonal_procrustes(cross);
      const double resid = Xc[m].squaredNorm() - 2.0 * (model.W[m].array() * cross.array()).sum() + ESSt.trace();
      model.rho2[m] = resid / static_cast<double>(Xc[m].size());
    });
    for (std::size_t m = 0; m < M; ++m) {
      if (!(model.rho2[m] >= 1e-12))
        fail(ErrorCode::DegenerateNoise, "noise variance of subject " + std::to_string(m) +
                                             " collapsed below 1e-12; K is likely too large");
    }
    model.sigma_s = floor_eigenvalues(ESSt / static_cast<double>(T), 1e-10);
    if (opts.diagonal_shared_cov) model.sigma_s = Matrix(model.sigma_s.diagonal().asDiagonal());
    const double cur = marginal_loglik_centered(Xc, model);
    rep.record(cur);
    if (small_change(prev, cur, opts.tol)) {
      rep.converged = true;
      break;
    }
    prev = cur;
  }
  model.S = srm_posterior(Xc, model).mean;
  rep.message = rep.converged ? "converged" : "iteration limit";
  rep.wall_seconds = seconds_since(t0);
  return fit;
}

namespace {

// Square orthogonal Procrustes; tolerant of rank deficiency.
Matrix square_procrustes(const Matrix& A) {
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

double hyperalignment_objective(const std::vector<Matrix>& datasets, const std::vector<Matrix>& W, const Matrix& S) {
  double f = 0.0;
  for (std::size_t m = 0; m < datasets.size(); ++m) f += (W[m].transpose() * datasets[m].transpose() - S).squaredNorm();
  return f;
}

HyperalignmentFit fit_hyperalignment(const std::vector<Matrix>& datasets, int max_iters, double tol) {
  const auto t0 = Clock::now();
  if (datasets.empty()) fail(ErrorCode::BadShape, "no datasets");
  const Eigen::Index T = datasets[0].rows(), V = datasets[0].cols();
  for (const auto& X : datasets) {
    if (X.rows() != T || X.cols() != V) fail(ErrorCode::BadShape, "hyperalignment needs equal T and V across subjects");
  }
  const std::size_t M = datasets.size();
  std::vector<Matrix> Xt(M);
  for (std::size_t m = 0; m < M; ++m) Xt[m] = datasets[m].transpose();
  HyperalignmentFit fit;
  fit.W.assign(M, Matrix::Identity(V, V));
  fit.S = Xt[0];
  FitReport& rep = fit.report;
  rep.model = ModelTag::Srm;
  double prev = hyperalignment_objective(datasets, fit.W, fit.S);
  rep.record(prev);
  for (int it = 0; it < max_iters; ++it) {
    parallel_for(M, [&](std::size_t m) { fit.W[m] = square_procrustes(Xt[m] * fit.S.transpose()); });
    fit.S = average_projection(Xt, fit.W);
    const double cur = hyperalignment_objective(datasets, fit.W, fit.S);
    rep.record(cur);
    if (small_change(prev, cur, tol) || cur == 0.0) {
      rep.converged = true;
      break;
    }
    prev = cur;
  }
  rep.message = rep.converged ? "converged" : "iteration limit";
  rep.wall_seconds = seconds_since(t0);
  return fit;
}

Matrix srm_transform(const SrmModel& model, const Matrix& X, int subject) {
  if (subject < 0 || subject >= static_cast<int>(model.W.size())) fail(ErrorCode::BadShape, "subject index out of range");
  const Matrix& W = model.W[subject];
  if (X.cols() != W.rows()) fail(ErrorCode::BadShape, "voxel count differs from the fitted subject");
  Matrix Xt = X.transpose();
  if (subject < static_cast<int>(model.mu.size())) Xt.colwise() -= model.mu[subject];
  return W.transpose() * Xt;
}

}  // namespace neuropgm
