#include <gtest/gtest.h>

#include <cmath>

#include "neuropgm/error.hpp"
#include "neuropgm/htfa.hpp"
#include "neuropgm/metrics.hpp"
#include "neuropgm/random.hpp"
#include "neuropgm/simgen.hpp"

using namespace neuropgm;

namespace {

HtfaGlobalTemplate flat_template(const Matrix& centers, const Vector& widths, double var) {
  HtfaGlobalTemplate g;
  g.centers = centers;
  g.widths = widths;
  g.center_prior_mean = centers;
  g.center_prior_cov.assign(centers.rows(), var * Matrix::Identity(3, 3));
  g.width_prior_mean = widths;
  g.width_prior_var = Vector::Constant(widths.size(), var);
  return g;
}

HtfaSubjectModel subject_at(const Matrix& centers, const Vector& widths, int T) {
  HtfaSubjectModel s;
  s.centers = centers;
  s.widths = widths;
  s.weights = Matrix::Zero(T, centers.rows());
  return s;
}

}  // namespace

TEST(Rbf, PeakAndUnitExponent) {
  const VoxelGrid grid = VoxelGrid::box(5, 5, 5);
  const Vector c = grid.positions.row(37).transpose();
  const double width = 4.0;
  const Vector f = rbf_factor(c, width, grid);
  EXPECT_EQ(f(37), 1.0);
  // Neighbour two voxels away along x: squared distance 4 = width.
  EXPECT_NEAR(f(39), std::exp(-1.0), 1e-15);
  EXPECT_GT(f.minCoeff(), 0.0);
  EXPECT_LE(f.maxCoeff(), 1.0);
}

TEST(Rbf, MaximumAtNearestGridPoint) {
  const VoxelGrid grid = VoxelGrid::box(6, 6, 6);
  Vector c(3);
  c << 2.3, 3.8, 1.1;
  const Vector f = rbf_factor(c, 3.0, grid);
  Eigen::Index best;
  f.maxCoeff(&best);
  Eigen::Index nearest;
  (grid.positions.rowwise() - c.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
  EXPECT_EQ(best, nearest);
}

TEST(Rbf, RejectsNonPositiveWidth) {
  try {
    rbf_factor(Vector::Zero(3), 0.0, VoxelGrid::box(2, 2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveWidth);
  }
}

TEST(TfaWeightStep, LeastSquaresLimit) {
  Rng g(1, "ws");
  const Matrix F = thin_orthonormal_basis(g.normal_matrix(30, 3)).transpose();
  const Matrix X = g.normal_matrix(12, 30);
  const Matrix W = tfa_weight_step(X, F, {0.0, 1.0}, 1e-14);
  EXPECT_LT((W - X * F.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TfaWeightStep, PriorDominatedLimit) {
  Rng g(2, "ws2");
  const Matrix F = g.normal_matrix(3, 30).cwiseAbs();
  const Matrix X = g.normal_matrix(12, 30);
  const Matrix W = tfa_weight_step(X, F, {0.7, 1e-12}, 1.0);
  EXPECT_LT((W.array() - 0.7).abs().maxCoeff(), 1e-6);
}

TEST(TfaLocalStep, RecoversSingleBlob) {
  const VoxelGrid grid = VoxelGrid::box(8, 8, 8);
  Matrix truth(1, 3);
  truth << 3.3, 4.1, 3.7;
  const Vector width = Vector::Constant(1, 4.0);
  Rng g(3, "blob");
  const Matrix X = g.normal_matrix(20, 1) * rbf_factors(truth, width, grid);
  Matrix start = truth;
  start.array() += 1.0;
  HtfaSubjectModel s = subject_at(start, Vector::Constant(1, 3.0), 20);
  s.center_cov = 1e6 * Matrix::Identity(3, 3);
  s.width_var = 1e6;
  s.weight_prior = {0.0, 1e6};
  s.weights = tfa_weight_step(X, rbf_factors(start, s.widths, grid), s.weight_prior, 1.0);
  const HtfaGlobalTemplate glob = flat_template(start, s.widths, 1e6);
  for (int it = 0; it < 5; ++it) s = tfa_local_step(X, grid, s, glob, {.iteration = it}).subject;
  EXPECT_LT((s.centers - truth).norm(), 0.5);
}

TEST(TfaLocalStep, TightPriorPinsCenters) {
  const VoxelGrid grid = VoxelGrid::box(6, 6, 6);
  Matrix glob_c(2, 3);
  glob_c << 1.5, 2.0, 2.5, 3.5, 3.0, 1.0;
  const Vector widths = Vector::Constant(2, 3.0);
  Rng g(4, "pin");
  Matrix other = glob_c;
  other.array() += 0.8;
  const Matrix X = g.normal_matrix(15, 2) * rbf_factors(other, widths, grid);
  HtfaSubjectModel s = subject_at(glob_c, widths, 15);
  s.center_cov = 1e-12 * Matrix::Identity(3, 3);
  const auto out = tfa_local_step(X, grid, s, flat_template(glob_c, widths, 1.0));
  EXPECT_LT((out.subject.centers - glob_c).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(TfaLocalObjective, InvariantToFactorPermutation) {
  const VoxelGrid grid = VoxelGrid::box(5, 5, 5);
  Rng g(5, "perm");
  Matrix c = g.normal_matrix(3, 3).cwiseAbs() * 2.0;
  Vector w(3);
  w << 2.0, 3.0, 4.0;
  HtfaSubjectModel s = subject_at(c, w, 10);
  s.weights = g.normal_matrix(10, 3);
  const HtfaGlobalTemplate glob = flat_template(c.array() + 0.3, w.array() + 0.5, 2.0);
  const Matrix X = g.normal_matrix(10, 125);
  Eigen::PermutationMatrix<3> P;
  P.indices() << 2, 0, 1;
  HtfaSubjectModel sp = s;
  sp.centers = P * s.centers;
  sp.widths = P * s.widths;
  sp.weights = s.weights * P.transpose();
  HtfaGlobalTemplate gp = glob;
  gp.centers = P * glob.centers;
  gp.widths = P * glob.widths;
  gp.center_prior_mean = P * glob.center_prior_mean;
  gp.width_prior_mean = P * glob.width_prior_mean;
  const double a = tfa_local_objective(X, grid, s, glob), b = tfa_local_objective(X, grid, sp, gp);
  EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
}

TEST(HtfaGlobalStep, FlatPriorAveragesIdenticalLocals) {
  Matrix c(2, 3);
  c << 1, 2, 3, 4, 5, 6;
  const Vector w = Vector::Constant(2, 2.5);
  HtfaGlobalTemplate hyper = flat_template(Matrix::Zero(2, 3), Vector::Constant(2, 1.0), 1e6);
  std::vector<HtfaSubjectModel> subs(3, subject_at(c, w, 4));
  const auto out = htfa_global_step(subs, hyper);
  EXPECT_LT((out.centers - c).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT((out.widths - w).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(HtfaGlobalStep, SingleSubjectLiesBetweenPriorAndLocal) {
  Matrix prior(1, 3), local(1, 3);
  prior << 0, 0, 0;
  local << 3, -1, 2;
  HtfaGlobalTemplate hyper = flat_template(prior, Vector::Constant(1, 2.0), 2.0);
  HtfaSubjectModel s = subject_at(local, Vector::Constant(1, 5.0), 4);
  const auto out = htfa_global_step({s}, hyper);
  const Vector d = (local - prior).row(0).transpose(), p = (out.centers - prior).row(0).transpose();
  const double a = p.dot(d) / d.squaredNorm();
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
  EXPECT_LT((p - a * d).norm(), 1e-12);
  EXPECT_GT(out.widths(0), 2.0);
  EXPECT_LT(out.widths(0), 5.0);
}

TEST(FitHtfa, DeterministicAndMonotone) {
  SimSpec s;
  s.model = ModelTag::Htfa;
  s.subjects = 2;
  s.factors = 2;
  s.timepoints = 20;
  s.snr = 2.0;
  s.seed = 9;
  const VoxelGrid grid = VoxelGrid::box(5, 5, 5);
  const SimOutput sim = simulate_htfa(s, grid);
  HtfaOptions o;
  o.max_iters = 5;
  o.seed = 3;
  const HtfaFit a = fit_htfa(sim.datasets, grid, 2, o), b = fit_htfa(sim.datasets, grid, 2, o);
  EXPECT_EQ(a.report.objective_trace, b.report.objective_trace);
  EXPECT_TRUE(a.global.centers == b.global.centers);
  for (std::size_t i = 1; i < a.report.objective_trace.size(); ++i)
    EXPECT_LE(a.report.objective_trace[i], a.report.objective_trace[i - 1] + 1e-8);
}

TEST(FitHtfa, SubsampledFitRuns) {
  SimSpec s;
  s.model = ModelTag::Htfa;
  s.subjects = 2;
  s.factors = 2;
  s.timepoints = 20;
  s.snr = 2.0;
  const VoxelGrid grid = VoxelGrid::box(5, 5, 5);
  const SimOutput sim = simulate_htfa(s, grid);
  HtfaOptions o;
  o.max_iters = 3;
  o.subsample = 0.5;
  const HtfaFit fit = fit_htfa(sim.datasets, grid, 2, o);
  EXPECT_TRUE(all_finite(fit.global.centers));
  EXPECT_EQ(fit.subjects[0].weights.rows(), 20);
}

TEST(NodeConnectivity, DuplicateAndNegatedColumns) {
  Rng g(6, "nc");
  Matrix W(50, 3);
  W.col(0) = g.normal_vector(50);
  W.col(1) = W.col(0);
  W.col(2) = -W.col(0);
  const Matrix C = node_connectivity(W);
  EXPECT_NEAR(C(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(C(0, 2), -1.0, 1e-12);
  EXPECT_TRUE(C.isApprox(C.transpose()));
  EXPECT_NEAR(C.diagonal().minCoeff(), 1.0, 1e-12);
}

TEST(Isfc, IdenticalSubjectsReduceToNodeConnectivity) {
  Rng g(7, "isfc");
  const Matrix W = g.normal_matrix(40, 4);
  EXPECT_LT((isfc({W, W, W}) - node_connectivity(W)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Isfc, IndependentSubjectsGiveNearZero) {
  Rng g(8, "isfc2");
  std::vector<Matrix> Ws;
  for (int m = 0; m < 3; ++m) Ws.push_back(g.normal_matrix(10000, 3));
  Matrix C = isfc(Ws);
  C.diagonal().setZero();
  EXPECT_LT(C.cwiseAbs().maxCoeff(), 0.05);
}
