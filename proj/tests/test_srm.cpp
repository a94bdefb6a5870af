#include <gtest/gtest.h>

#include <cmath>

#include "neuropgm/density.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/metrics.hpp"
#include "neuropgm/random.hpp"
#include "neuropgm/simgen.hpp"
#include "neuropgm/srm.hpp"

using namespace neuropgm;

namespace {

SimOutput srm_data(int M, int V, int T, int K, double snr, std::uint64_t seed, double mean_scale = 1.0) {
  SimSpec s;
  s.model = ModelTag::Srm;
  s.subjects = M;
  s.voxels = V;
  s.timepoints = T;
  s.factors = K;
  s.snr = snr;
  s.seed = seed;
  s.mean_scale = mean_scale;
  return simulate_srm(s);
}

std::vector<Matrix> random_datasets(std::uint64_t seed, int M, int T, int V) {
  Rng g(seed, "srm-test");
  std::vector<Matrix> out;
  for (int m = 0; m < M; ++m) out.push_back(g.normal_matrix(T, V));
  return out;
}

bool non_increasing(const std::vector<double>& t, double slack) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[i - 1] + slack) return false;
  return true;
}

bool non_decreasing(const std::vector<double>& t, double slack) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] < t[i - 1] - slack) return false;
  return true;
}

}  // namespace

TEST(SrmDeterministic, NoiselessRecovery) {
  SimSpec s;
  s.subjects = 5;
  s.voxels = 40;
  s.timepoints = 30;
  s.factors = 3;
  s.noise_var = 0.0;
  s.mean_scale = 0.0;
  const SimOutput sim = simulate_srm(s);
  const SrmFit fit = fit_srm_deterministic(sim.datasets, 3, {.max_iters = 500, .tol = 1e-14});
  double total = 0.0;
  for (const auto& X : sim.datasets) total += X.squaredNorm();
  EXPECT_LT(fit.report.objective_trace.back(), 1e-8 * total);
}

TEST(SrmDeterministic, CompleteBasisIsExact) {
  const auto data = random_datasets(1, 1, 6, 6);
  const SrmFit fit = fit_srm_deterministic(data, 6);
  EXPECT_LT(fit.report.objective_trace.back(), 1e-10 * data[0].squaredNorm());
}

TEST(SrmDeterministic, TraceMonotoneAndOrthonormal) {
  const auto data = random_datasets(2, 3, 20, 15);
  const SrmFit fit = fit_srm_deterministic(data, 4, {.max_iters = 50, .tol = 0.0});
  EXPECT_TRUE(non_increasing(fit.report.objective_trace, 1e-8));
  EXPECT_EQ(fit.report.objective_trace.size(), static_cast<std::size_t>(fit.report.iterations) + 1);
  for (const auto& W : fit.model.W)
    EXPECT_LT((W.transpose() * W - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SrmDeterministic, ObjectiveIsRotationInvariant) {
  const auto data = random_datasets(3, 2, 12, 9);
  const SrmFit fit = fit_srm_deterministic(data, 3, {.max_iters = 5});
  Rng g(3, "rot");
  const Matrix Q = thin_orthonormal_basis(g.normal_matrix(3, 3));
  std::vector<Matrix> W2;
  for (const auto& W : fit.model.W) W2.push_back(W * Q);
  const double a = srm_deterministic_objective(data, fit.model.W, fit.model.S);
  const double b = srm_deterministic_objective(data, W2, Q.transpose() * fit.model.S);
  EXPECT_NEAR(a, b, 1e-10 * std::max(1.0, a));
}

TEST(SrmDeterministic, RejectsTooManyFactors) {
  const auto data = random_datasets(4, 2, 5, 8);
  try {
    fit_srm_deterministic(data, 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadShape);
  }
}

TEST(SrmProbabilistic, RecoversSharedResponse) {
  const SimOutput sim = srm_data(5, 200, 150, 5, 1.0, 7);
  const SrmFit fit = fit_srm_probabilistic(sim.datasets, 5);
  const Vector cc = canonical_correlations(sim.truth.latent("S"), fit.model.S);
  EXPECT_GE(cc.minCoeff(), 0.9);
}

TEST(SrmProbabilistic, RecoversNoiseVariance) {
  const SimOutput sim = srm_data(3, 100, 300, 3, 1.0, 8);
  const SrmFit fit = fit_srm_probabilistic(sim.datasets, 3);
  for (int m = 0; m < 3; ++m) {
    const double truth = sim.truth.scalar("rho2_" + std::to_string(m));
    EXPECT_LT(std::abs(fit.model.rho2[m] - truth) / truth, 0.2);
  }
}

TEST(SrmProbabilistic, LoglikNonDecreasingOnRandomData) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto data = random_datasets(10 + seed, 3, 25, 12);
    const SrmFit fit = fit_srm_probabilistic(data, 3, {.max_iters = 40, .tol = 0.0});
    EXPECT_TRUE(non_decreasing(fit.report.objective_trace, 1e-8));
  }
}

TEST(SrmProbabilistic, MarginalMatchesDenseOracle) {
  const SimOutput sim = srm_data(2, 5, 6, 2, 1.0, 9);
  const SrmFit fit = fit_srm_probabilistic(sim.datasets, 2, {.max_iters = 3});
  const SrmModel& m = fit.model;
  // Each time point of the stacked voxels: N(mu, W Sigma_s W^T + blockdiag(rho2_m I)).
  const int V = 5, Vt = 10;
  Matrix W(Vt, 2), D = Matrix::Zero(Vt, Vt);
  Vector mu(Vt);
  for (int s = 0; s < 2; ++s) {
    W.middleRows(s * V, V) = m.W[s];
    mu.segment(s * V, V) = m.mu[s];
    D.diagonal().segment(s * V, V).setConstant(m.rho2[s]);
  }
  const Matrix cov = W * m.sigma_s * W.transpose() + D;
  double oracle = 0.0;
  for (int t = 0; t < 6; ++t) {
    Vector x(Vt);
    x << sim.datasets[0].row(t).transpose(), sim.datasets[1].row(t).transpose();
    oracle += mvn_logpdf(x, mu, cov);
  }
  EXPECT_NEAR(srm_marginal_loglik(sim.datasets, m), oracle, 1e-8 * std::abs(oracle));
}

TEST(Hyperalignment, RotatedCopyIsAligned) {
  Rng g(12, "hyp");
  const Matrix X1 = g.normal_matrix(30, 6);
  const Matrix Q = thin_orthonormal_basis(g.normal_matrix(6, 6));
  const HyperalignmentFit fit = fit_hyperalignment({X1, X1 * Q}, 200, 1e-12);
  EXPECT_LT(fit.report.objective_trace.back(), 1e-8 * X1.squaredNorm());
  EXPECT_TRUE(non_increasing(fit.report.objective_trace, 1e-8));
}

TEST(Hyperalignment, SingleSubjectIsExactAfterOneStep) {
  Rng g(13, "hyp1");
  const HyperalignmentFit fit = fit_hyperalignment({g.normal_matrix(10, 4)}, 1);
  EXPECT_LT(fit.report.objective_trace.back(), 1e-20);
}

TEST(SrmTransform, RecoversSharedResponseExactly) {
  SimSpec s;
  s.subjects = 2;
  s.voxels = 30;
  s.timepoints = 20;
  s.factors = 3;
  s.noise_var = 0.0;
  const SimOutput sim = simulate_srm(s);
  SrmModel model;
  model.K = 3;
  for (int m = 0; m < 2; ++m) {
    model.W.push_back(sim.truth.latent("W_" + std::to_string(m)));
    model.mu.push_back(sim.truth.latent("mu_" + std::to_string(m)).col(0));
  }
  EXPECT_LT((srm_transform(model, sim.datasets[1], 1) - sim.truth.latent("S")).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SrmTransform, NoiseOnlyKeepsNoiseVariance) {
  Rng g(14, "tr-noise");
  SrmModel model;
  model.K = 3;
  model.W.push_back(thin_orthonormal_basis(g.normal_matrix(50, 3)));
  model.mu.push_back(Vector::Zero(50));
  const double rho2 = 2.0;
  const Matrix Y = srm_transform(model, std::sqrt(rho2) * g.normal_matrix(20000, 50), 0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(Y.row(k).squaredNorm() / 20000.0, rho2, 0.1 * rho2);
}

TEST(SrmTransform, TrainingDataTracksFittedResponse) {
  SimSpec s;
  s.subjects = 3;
  s.voxels = 40;
  s.timepoints = 50;
  s.factors = 3;
  s.snr = 1e6;  // the probabilistic fit rejects exactly zero noise
  const SimOutput sim = simulate_srm(s);
  const SrmFit fit = fit_srm_probabilistic(sim.datasets, 3, {.max_iters = 200, .tol = 1e-10});
  const Matrix Y = srm_transform(fit.model, sim.datasets[0], 0);
  for (int k = 0; k < 3; ++k) EXPECT_GE(pearson(Vector(Y.row(k)), Vector(fit.model.S.row(k))), 0.99);
}
