// Acceptance suite: `acceptance N` runs criterion N, no argument runs all.
// Prints one PASS/FAIL line per criterion; exit status is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "neuropgm/brsa.hpp"
#include "neuropgm/cli.hpp"
#include "neuropgm/density.hpp"
#include "neuropgm/drd.hpp"
#include "neuropgm/htfa.hpp"
#include "neuropgm/io.hpp"
#include "neuropgm/matnormal.hpp"
#include "neuropgm/metrics.hpp"
#include "neuropgm/report.hpp"
#include "neuropgm/simgen.hpp"
#include "neuropgm/srm.hpp"

using namespace neuropgm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[128];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

// ---------- independent helpers ----------

Matrix randn(std::mt19937_64& g, int r, int c) {
  std::normal_distribution<double> n;
  Matrix A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = n(g);
  return A;
}

Matrix random_spd(std::mt19937_64& g, int n) {
  const Matrix A = randn(g, n, n);
  return A * A.transpose() / n + 0.5 * Matrix::Identity(n, n);
}

double uniform(std::mt19937_64& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

// Dense Gaussian log-density via a plain LLT of the full covariance.
double dense_logpdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  const Vector z = llt.matrixL().solve(x - mu);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

Matrix dense_kron(const Matrix& A, const Matrix& B) {
  Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

Vector colvec(const Matrix& A) { return Eigen::Map<const Vector>(A.data(), A.size()); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Central differences of f over a flat parameter vector.
Vector central_fd(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

double grad_rel_err(const Vector& analytic, const Vector& fd) {
  return (analytic - fd).lpNorm<Eigen::Infinity>() / std::max(fd.lpNorm<Eigen::Infinity>(), 1e-8);
}

// Symmetric-matrix FD: perturbing (i,j) and (j,i) together sees G_ij + G_ji.
Vector sym_pairs(const Matrix& G) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) v.push_back(i == j ? G(i, i) : G(i, j) + G(j, i));
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vector sym_fd(const std::function<double(const Matrix&)>& f, const Matrix& A) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(A(i, j)));
      Matrix P = A, Mn = A;
      P(i, j) += h;
      Mn(i, j) -= h;
      if (i != j) {
        P(j, i) += h;
        Mn(j, i) -= h;
      }
      v.push_back((f(P) - f(Mn)) / (2.0 * h));
    }
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vector mat_fd(const std::function<double(const Matrix&)>& f, const Matrix& A) {
  return central_fd([&](const Vector& x) { return f(Eigen::Map<const Matrix>(x.data(), A.rows(), A.cols())); }, colvec(A));
}

bool nonincreasing(const std::vector<double>& t, double slack = 1e-8) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[i - 1] + slack) return false;
  return true;
}

bool nondecreasing(const std::vector<double>& t, double slack = 1e-8) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] < t[i - 1] - slack) return false;
  return true;
}

// ---------- criteria ----------

Outcome density_oracles() {
  std::mt19937_64 g(101);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int m = dim(g), n = dim(g);
    const Matrix X = randn(g, m, n), M = randn(g, m, n);
    const Matrix R = random_spd(g, m), C = random_spd(g, n);
    const double mn = matnormal_logpdf(X, M, R, C);
    worst = std::max(worst, rel_err(mn, dense_logpdf(colvec(X), colvec(M), dense_kron(C, R))));
    // PSD first pair (rank deficient half the time), SPD second pair.
    const int r = 1 + inst % m;
    const Matrix F = randn(g, m, r);
    const Matrix R1 = (inst % 2) ? Matrix(F * F.transpose()) : random_spd(g, m);
    const Matrix C1 = random_spd(g, n), R2 = random_spd(g, m), C2 = random_spd(g, n);
    const Matrix dense = dense_kron(C1, R1) + dense_kron(C2, R2);
    const double oracle = dense_logpdf(colvec(X), colvec(M), dense);
    worst = std::max(worst, rel_err(kron_sum_mvn_logpdf(X, M, R1, C1, R2, C2), oracle));
    // Structured specs and the low-rank path on the same instance.
    const Vector d = (randn(g, m, 1).array().square() + 0.2).matrix();
    const double phi = uniform(g, -0.8, 0.8);
    const Matrix R2s = Matrix(d.asDiagonal()), C2s = cov_materialize(AR1{1.3, phi}, n);
    const double oracle_s = dense_logpdf(colvec(X), colvec(M), dense_kron(C1, F * F.transpose()) + dense_kron(C2s, R2s));
    worst = std::max(worst, rel_err(kron_sum_mvn_logpdf_lowrank(X, M, F, C1, Diagonal{d}, C2s), oracle_s));
    worst = std::max(worst, rel_err(kron_sum_mvn_logpdf(X, M, F * F.transpose(), C1, Diagonal{d}, AR1{1.3, phi}), oracle_s));
  }
  return {worst <= 1e-8, fmt("max relative error %.3g over 50 instances (tol 1e-8)", worst)};
}

Outcome gradient_suite() {
  std::mt19937_64 g(202);
  double worst_drd = 0, worst_brsa = 0, worst_mn = 0, worst_ks = 0, worst_dp = 0;
  for (int inst = 0; inst < 20; ++inst) {
    {  // DRD
      const int T = 6, V = 5;
      const Matrix X = randn(g, T, V);
      const Vector y = randn(g, T, 1);
      const Matrix pts = line_points(V);
      DrdHyper h{uniform(g, -2, 0), uniform(g, 0.5, 2), uniform(g, 0.8, 3), uniform(g, 0.2, 1.5)};
      const Vector u = randn(g, V, 1);
      const DrdObjective o = drd_neg_log_posterior(u, h, X, y, pts);
      const Vector fd = central_fd([&](const Vector& x) { return drd_neg_log_posterior(x, h, X, y, pts).value; }, u);
      worst_drd = std::max(worst_drd, grad_rel_err(o.grad, fd));
    }
    {  // BRSA
      const int T = 12, K = 3, V = 4, n0 = inst % 2;
      const Matrix S = randn(g, T, K), S0 = randn(g, T, n0), X = randn(g, T, V);
      Matrix L = randn(g, K, K).triangularView<Eigen::Lower>();
      L.diagonal() = L.diagonal().cwiseAbs().array() + 0.3;
      const Vector sigma = (randn(g, V, 1).array().abs() + 0.5).matrix();
      Vector phi(V);
      for (int v = 0; v < V; ++v) phi(v) = uniform(g, -0.7, 0.7);
      const BrsaObjective o = brsa_neg_marginal_loglik(L, sigma, phi, S, S0, X, true);
      std::vector<double> a, n;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j <= i; ++j) {
          const double hh = 1e-6;
          Matrix P = L, Mm = L;
          P(i, j) += hh;
          Mm(i, j) -= hh;
          a.push_back(o.dL(i, j));
          n.push_back((brsa_neg_marginal_loglik(P, sigma, phi, S, S0, X, false).value -
                       brsa_neg_marginal_loglik(Mm, sigma, phi, S, S0, X, false).value) / (2 * hh));
        }
      const Vector fs = central_fd(
          [&](const Vector& ls) { return brsa_neg_marginal_loglik(L, Vector(ls.array().exp()), phi, S, S0, X, false).value; },
          Vector(sigma.array().log()));
      const Vector fp = central_fd(
          [&](const Vector& ap) { return brsa_neg_marginal_loglik(L, sigma, Vector(ap.array().tanh()), S, S0, X, false).value; },
          Vector(phi.array().atanh()));
      for (int v = 0; v < V; ++v) {
        a.push_back(o.dlog_sigma(v));
        n.push_back(fs(v));
        a.push_back(o.datanh_phi(v));
        n.push_back(fp(v));
      }
      worst_brsa = std::max(worst_brsa, grad_rel_err(Eigen::Map<Vector>(a.data(), a.size()), Eigen::Map<Vector>(n.data(), n.size())));
    }
    {  // matrix-normal density
      const int m = 2 + inst % 4, n = 2 + (inst / 4) % 4;
      const Matrix X = randn(g, m, n), M = randn(g, m, n), R = random_spd(g, m), C = random_spd(g, n);
      const MatNormalGradient o = matnormal_logpdf_grad(X, M, R, C);
      double e = grad_rel_err(sym_pairs(o.dR), sym_fd([&](const Matrix& A) { return matnormal_logpdf(X, M, A, C); }, R));
      e = std::max(e, grad_rel_err(sym_pairs(o.dC), sym_fd([&](const Matrix& A) { return matnormal_logpdf(X, M, R, A); }, C)));
      e = std::max(e, grad_rel_err(colvec(o.dM), mat_fd([&](const Matrix& A) { return matnormal_logpdf(X, A, R, C); }, M)));
      worst_mn = std::max(worst_mn, e);
      // Kronecker-sum density.
      const Matrix R1 = random_spd(g, m), C1 = random_spd(g, n), R2 = random_spd(g, m), C2 = random_spd(g, n);
      const KronSumGradient k = kron_sum_mvn_logpdf_grad(X, M, R1, C1, R2, C2);
      const auto ks = [&](const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& d) {
        return kron_sum_mvn_logpdf(X, M, a, b, c, d);
      };
      double ek = grad_rel_err(sym_pairs(k.dR1), sym_fd([&](const Matrix& A) { return ks(A, C1, R2, C2); }, R1));
      ek = std::max(ek, grad_rel_err(sym_pairs(k.dC1), sym_fd([&](const Matrix& A) { return ks(R1, A, R2, C2); }, C1)));
      ek = std::max(ek, grad_rel_err(sym_pairs(k.dR2), sym_fd([&](const Matrix& A) { return ks(R1, C1, A, C2); }, R2)));
      ek = std::max(ek, grad_rel_err(sym_pairs(k.dC2), sym_fd([&](const Matrix& A) { return ks(R1, C1, R2, A); }, C2)));
      ek = std::max(ek, grad_rel_err(colvec(k.dM),
                                     mat_fd([&](const Matrix& A) { return kron_sum_mvn_logpdf(X, A, R1, C1, R2, C2); }, M)));
      worst_ks = std::max(worst_ks, ek);
    }
    {  // DP-SRM marginal
      const int M = 2, V = 4, T = 6, K = 2;
      std::vector<Matrix> data;
      MnModel mdl;
      mdl.variant = ModelTag::DpSrm;
      mdl.K = K;
      mdl.S = randn(g, K, T);
      mdl.sigma_w = random_spd(g, K);
      mdl.sigma_t = AR1{1.0, uniform(g, -0.7, 0.7)};
      for (int s = 0; s < M; ++s) {
        data.push_back(randn(g, T, V));
        mdl.mu.push_back(randn(g, V, 1));
        mdl.sigma_v.push_back(Diagonal{(randn(g, V, 1).array().square() + 0.3).matrix()});
      }
      const DpsrmGradient o = dpsrm_marginal_grad(data, mdl);
      const auto val = [&](const MnModel& mm) { return dpsrm_marginal_loglik(data, mm); };
      double e = grad_rel_err(colvec(o.dS), mat_fd([&](const Matrix& A) { MnModel c = mdl; c.S = A; return val(c); }, mdl.S));
      e = std::max(e, grad_rel_err(sym_pairs(o.dsigma_w),
                                   sym_fd([&](const Matrix& A) { MnModel c = mdl; c.sigma_w = A; return val(c); }, mdl.sigma_w)));
      const Vector pt = cov_pack(mdl.sigma_t);
      e = std::max(e, grad_rel_err(o.dsigma_t, central_fd([&](const Vector& p) {
                                     MnModel c = mdl;
                                     c.sigma_t = cov_unpack(mdl.sigma_t, p);
                                     return val(c);
                                   }, pt)));
      for (int s = 0; s < M; ++s) {
        e = std::max(e, grad_rel_err(o.dmu[s], central_fd([&](const Vector& p) { MnModel c = mdl; c.mu[s] = p; return val(c); }, mdl.mu[s])));
        e = std::max(e, grad_rel_err(o.dsigma_v[s], central_fd([&](const Vector& p) {
                                       MnModel c = mdl;
                                       c.sigma_v[s] = cov_unpack(mdl.sigma_v[s], p);
                                       return val(c);
                                     }, cov_pack(mdl.sigma_v[s]))));
      }
      worst_dp = std::max(worst_dp, e);
    }
  }
  const double worst = std::max({worst_drd, worst_brsa, worst_mn, worst_ks, worst_dp});
  char b[256];
  std::snprintf(b, sizeof b, "max relative error drd %.2g, brsa %.2g, matnormal %.2g, kron-sum %.2g, dp-srm %.2g (tol 1e-4, 20 instances each)",
                worst_drd, worst_brsa, worst_mn, worst_ks, worst_dp);
  return {worst <= 1e-4, b};
}

Outcome monotonicity_suite() {
  int bad = 0;
  std::string which;
  const auto check = [&](bool ok, const char* name, int seed) {
    if (!ok) {
      ++bad;
      which += std::string(" ") + name + "#" + std::to_string(seed);
    }
  };
  for (int seed = 0; seed < 10; ++seed) {
    SimSpec s;
    s.seed = 1000 + seed;
    s.subjects = 3;
    s.voxels = 20;
    s.timepoints = 30;
    s.factors = 3;
    s.model = ModelTag::Srm;
    const SimOutput srm = simulate(s);
    SrmOptions so;
    so.seed = seed;
    so.max_iters = 50;
    check(nonincreasing(fit_srm_deterministic(srm.datasets, 3, so).report.objective_trace), "det-srm", seed);
    check(nondecreasing(fit_srm_probabilistic(srm.datasets, 3, so).report.objective_trace), "prob-srm", seed);

    SimSpec h = s;
    h.model = ModelTag::Htfa;
    h.subjects = 2;
    h.voxels = 125;
    h.timepoints = 20;
    h.factors = 2;
    h.width_mean = 2.0;
    h.snr = 2.0;
    const SimOutput ht = simulate(h);
    HtfaOptions ho;
    ho.seed = seed;
    ho.max_iters = 5;
    check(nonincreasing(fit_htfa(ht.datasets, default_grid(125), 2, ho).report.objective_trace), "htfa", seed);

    SimSpec m = s;
    m.model = ModelTag::MnSrm;
    m.voxels = 15;
    m.factors = 2;
    const SimOutput mn = simulate(m);
    MnOptions mo;
    mo.seed = seed;
    mo.max_iters = 30;
    check(nondecreasing(fit_mnsrm(mn.datasets, 2, mo).report.objective_trace), "mn-srm", seed);
    m.model = ModelTag::DpSrm;
    m.subjects = 2;
    m.voxels = 10;
    m.timepoints = 20;
    const SimOutput dp = simulate(m);
    mo.max_iters = 60;
    check(nondecreasing(fit_dpsrm(dp.datasets, 2, mo).report.objective_trace), "dp-srm", seed);

    SimSpec b = s;
    b.model = ModelTag::Brsa;
    b.timepoints = 60;
    b.voxels = 20;
    b.factors = 4;
    const SimOutput br = simulate(b);
    BrsaOptions bo;
    bo.max_iters = 100;
    check(nondecreasing(fit_brsa(br.datasets[0], br.truth.latent("design"), bo).loglik_trace), "brsa", seed);

    SimSpec d = s;
    d.model = ModelTag::Drd;
    d.timepoints = 30;
    d.voxels = 40;
    d.snr = 5.0;
    const SimOutput dr = simulate(d);
    DrdOptions dopt;
    dopt.seed = seed;
    dopt.outer_evals = 15;
    check(nonincreasing(fit_drd(dr.datasets[0], dr.targets, dr.truth.latent("points"), dopt).report.objective_trace), "drd", seed);
  }
  return {bad == 0, bad == 0 ? "7 objectives x 10 datasets monotone (slack 1e-8)" : "violations:" + which};
}

Outcome srm_recovery() {
  std::string det;
  bool ok = true;
  for (int seed = 0; seed < 5; ++seed) {
    SimSpec s;
    s.model = ModelTag::Srm;
    s.subjects = 5;
    s.voxels = 200;
    s.timepoints = 150;
    s.factors = 5;
    s.snr = 1.0;
    s.seed = 40 + seed;
    const SimOutput sim = simulate(s);
    SrmOptions o;
    o.seed = seed;
    const SrmFit fit = fit_srm_probabilistic(sim.datasets, 5, o);
    const double score = aligned_recovery_score(sim.truth.latent("S"), fit.model.S);
    ok = ok && score >= 0.9;
    det += fmt(" %.3f", score);
  }
  return {ok, "aligned recovery per seed:" + det + " (need >= 0.9)"};
}

Outcome htfa_recovery() {
  std::string det;
  bool ok = true;
  const VoxelGrid grid = VoxelGrid::box(10, 10, 10);
  for (int seed = 0; seed < 5; ++seed) {
    SimSpec s;
    s.model = ModelTag::Htfa;
    s.subjects = 4;
    s.voxels = 1000;
    s.timepoints = 50;
    s.factors = 4;
    s.snr = 2.0;
    s.seed = 50 + seed;
    const SimOutput sim = simulate_htfa(s, grid);
    HtfaOptions o;
    o.seed = seed;
    const HtfaFit fit = fit_htfa(sim.datasets, grid, 4, o);
    const double err = matched_center_error(sim.truth.latent("centers"), fit.global.centers);
    double se = 0, n = 0, g2 = 0;
    for (int m = 0; m < 4; ++m) {
      const Matrix F = rbf_factors(fit.subjects[m].centers, fit.subjects[m].widths, grid);
      se += (sim.datasets[m] - fit.subjects[m].weights * F).squaredNorm();
      n += static_cast<double>(sim.datasets[m].size());
      g2 += sim.truth.scalar("gamma2_" + std::to_string(m)) / 4.0;
    }
    const double ratio = std::sqrt(se / n) / std::sqrt(g2);
    ok = ok && err <= 2.0 && ratio <= 1.2;
    char b[64];
    std::snprintf(b, sizeof b, " (%.2f, %.3f)", err, ratio);
    det += b;
  }
  return {ok, "(center error, rmse/noise sd) per seed:" + det + " (need <= 2.0, <= 1.2)"};
}

Outcome drd_vs_ridge() {
  int wins = 0;
  std::string det;
  for (int seed = 0; seed < 10; ++seed) {
    SimSpec s;
    s.model = ModelTag::Drd;
    s.voxels = 500;
    s.timepoints = 200;
    s.snr = 5.0;
    s.seed = 60 + seed;
    s.drd_blocks = 2;
    s.drd_block_width = 20;
    s.drd_block_level = 0.0;
    s.drd_mean = -8.0;
    const SimOutput sim = simulate(s);
    const Vector w = sim.truth.latent("w").col(0);
    DrdOptions o;
    o.seed = seed;
    const DrdModel drd = fit_drd(sim.datasets[0], sim.targets, sim.truth.latent("points"), o);
    const RidgeFit ridge = fit_ridge(sim.datasets[0], sim.targets);
    const double gain = pearson(drd.w, w) - pearson(ridge.w, w);
    if (gain >= 0.05) ++wins;
    det += fmt(" %+.3f", gain);
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds with gain >= 0.05 (need >= 8); gains:" + det};
}

Outcome brsa_bias() {
  int wins = 0;
  double worst_hi = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    for (double snr : {0.3, 10.0}) {
      SimSpec s;
      s.model = ModelTag::Brsa;
      s.factors = 16;
      s.voxels = 500;
      s.timepoints = 300;
      s.snr = snr;
      s.seed = 70 + seed;
      const SimOutput sim = simulate(s);
      const Matrix truth = sim.truth.latent("similarity_realized");
      const Matrix& S = sim.truth.latent("design");
      const BrsaModel fit = fit_brsa(sim.datasets[0], S);
      const double eb = offdiag_rmse(fit.similarity, truth);
      const double en = offdiag_rmse(naive_rsa(sim.datasets[0], S), truth);
      if (snr < 1.0) {
        if (eb < en) ++wins;
      } else {
        worst_hi = std::max({worst_hi, eb, en});
      }
    }
  }
  return {wins >= 18 && worst_hi <= 0.05,
          std::to_string(wins) + "/20 seeds BRSA < naive at SNR 0.3 (need >= 18); worst off-diagonal RMSE at SNR 10 " +
              fmt("%.4f (need <= 0.05)", worst_hi)};
}

Outcome spurious_structure() {
  // Four conditions with closely spaced, overlapping events.
  std::vector<Event> events;
  const char* names[] = {"a", "b", "c", "d"};
  for (int i = 0; i < 60; ++i) events.push_back({static_cast<double>(2 + 3 * i), 1.0, 1.0, names[(i * 7 / 3) % 4]});
  const DesignMatrix D = convolve_design(events, 200, default_hrf());
  const Matrix expected = expected_spurious_similarity(D.S);
  Matrix mean = Matrix::Zero(4, 4);
  std::mt19937_64 g(808);
  for (int seed = 0; seed < 200; ++seed) mean += naive_rsa(randn(g, 200, 100), D.S) / 200.0;
  double off = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < i; ++j) off = std::max(off, std::abs(expected(i, j)));
  const double err = (mean - expected).cwiseAbs().maxCoeff();
  return {err <= 0.05 && off > 0.1, fmt("max elementwise deviation %.4f (tol 0.05)", err) +
                                        fmt("; largest expected off-diagonal |r| %.3f", off)};
}

Outcome matnormal_advantage() {
  bool ok = true;
  std::string det;
  for (int seed = 0; seed < 5; ++seed) {
    SimSpec s;
    s.model = ModelTag::MnSrm;
    s.subjects = 5;
    s.voxels = 100;
    s.timepoints = 120;
    s.factors = 4;
    s.snr = 1.0;
    s.temporal_phi = 0.5;
    s.seed = 90 + seed;
    const SimOutput sim = simulate(s);
    const std::vector<Matrix> train(sim.datasets.begin(), sim.datasets.begin() + 4);
    MnOptions mo;
    mo.seed = seed;
    const MnModel mn = fit_mnsrm(train, 4, mo);
    SrmOptions so;
    so.seed = seed;
    const SrmFit srm = fit_srm_probabilistic(train, 4, so);
    const double a = mn_heldout_score(mn, sim.datasets[4]).rmse;
    const double b = srm_heldout_score(srm.model, sim.datasets[4]).rmse;
    ok = ok && a <= b;
    char buf[64];
    std::snprintf(buf, sizeof buf, " (%.4f vs %.4f)", a, b);
    det += buf;
  }
  return {ok, "held-out RMSE MN-SRM vs SRM per seed:" + det};
}

// ---------- end-to-end ----------

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("neuropgm_accept_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name, const std::string& text = "") const {
    const auto p = (path / name).string();
    if (!text.empty()) write_text_file(p, text);
    return p;
  }
};

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int rc = cli_main(args, out, err);
  if (out_text) *out_text = out.str();
  if (rc != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return rc;
}

// Library-side metrics for each model, computed without the CLI workflow.
std::map<std::string, double> library_metrics(ModelTag tag, const SimSpec& spec) {
  const SimOutput sim = simulate(spec);
  std::map<std::string, double> m;
  switch (tag) {
    case ModelTag::Srm: {
      SrmOptions o;
      o.seed = 3;
      m["aligned_recovery_score"] = aligned_recovery_score(sim.truth.latent("S"), fit_srm_probabilistic(sim.datasets, spec.factors, o).model.S);
      break;
    }
    case ModelTag::Htfa: {
      const VoxelGrid grid = default_grid(spec.voxels);
      HtfaOptions o;
      o.seed = 3;
      o.max_iters = 5;
      const HtfaFit fit = fit_htfa(sim.datasets, grid, spec.factors, o);
      m["matched_center_error"] = matched_center_error(sim.truth.latent("centers"), fit.global.centers);
      double se = 0, n = 0, g2 = 0;
      const auto M = sim.datasets.size();
      for (std::size_t s = 0; s < M; ++s) {
        const Matrix F = rbf_factors(fit.subjects[s].centers, fit.subjects[s].widths, grid);
        se += (sim.datasets[s] - fit.subjects[s].weights * F).squaredNorm();
        n += static_cast<double>(sim.datasets[s].size());
        g2 += sim.truth.scalar("gamma2_" + std::to_string(s)) / static_cast<double>(M);
      }
      m["reconstruction_rmse"] = std::sqrt(se / n);
      m["noise_sd"] = std::sqrt(g2);
      m["reconstruction_rmse_ratio"] = std::sqrt(se / n) / std::sqrt(g2);
      break;
    }
    case ModelTag::Drd: {
      const Eigen::Index T = spec.timepoints, nt = spec.drd_test_rows;
      DrdOptions o;
      o.seed = 3;
      o.outer_evals = 10;
      const DrdModel fit = fit_drd(sim.datasets[0].topRows(T), sim.targets.head(T), sim.truth.latent("points"), o);
      m["weight_correlation"] = pearson(fit.w, Vector(sim.truth.latent("w").col(0)));
      const Vector pred = sim.datasets[0].bottomRows(nt) * fit.w;
      m["test_rmse"] = std::sqrt((pred - sim.targets.tail(nt)).squaredNorm() / static_cast<double>(nt));
      break;
    }
    case ModelTag::Brsa: {
      const Matrix& S = sim.truth.latent("design");
      const Matrix truth = sim.truth.latent("similarity_realized");
      m["similarity_rmse"] = offdiag_rmse(fit_brsa(sim.datasets[0], S).similarity, truth);
      m["naive_similarity_rmse"] = offdiag_rmse(naive_rsa(sim.datasets[0], S), truth);
      break;
    }
    case ModelTag::MnSrm:
    case ModelTag::DpSrm: {
      MnOptions o;
      o.seed = 3;
      o.max_iters = 40;
      const MnModel fit = tag == ModelTag::MnSrm ? fit_mnsrm(sim.datasets, spec.factors, o) : fit_dpsrm(sim.datasets, spec.factors, o);
      m["aligned_recovery_score"] = aligned_recovery_score(sim.truth.latent("S"), fit.S);
      m["temporal_phi_error"] = std::abs(fit.temporal_phi() - sim.truth.scalar("phi_t"));
      break;
    }
  }
  return m;
}

Outcome end_to_end() {
  struct Case {
    ModelTag tag;
    std::string spec;
    std::string fit;
  };
  const std::vector<Case> cases = {
      {ModelTag::Srm, "subjects = 3\nvoxels = 30\ntimepoints = 40\nfactors = 3\nsnr = 1.0\nseed = 11\n", "[srm]\nseed = 3\n"},
      {ModelTag::Htfa, "subjects = 2\nvoxels = 125\ntimepoints = 20\nfactors = 2\nsnr = 2.0\nwidth_mean = 2.0\nseed = 12\n",
       "[htfa]\nseed = 3\nmax_iters = 5\n"},
      {ModelTag::Drd, "voxels = 60\ntimepoints = 40\nsnr = 5.0\ndrd_test_rows = 10\nseed = 13\n", "[drd]\nseed = 3\nouter_evals = 10\n"},
      {ModelTag::Brsa, "voxels = 30\ntimepoints = 80\nfactors = 4\nsnr = 1.0\nseed = 14\n", "[brsa]\n"},
      {ModelTag::MnSrm, "subjects = 3\nvoxels = 20\ntimepoints = 40\nfactors = 2\nseed = 15\n", "[mnsrm]\nseed = 3\nmax_iters = 40\n"},
      {ModelTag::DpSrm, "subjects = 3\nvoxels = 20\ntimepoints = 40\nfactors = 2\nseed = 16\n", "[dpsrm]\nseed = 3\nmax_iters = 40\n"},
  };
  TempDir tmp;
  int good = 0;
  std::string det;
  for (const auto& c : cases) {
    const std::string name(to_string(c.tag));
    const std::string spec_path = tmp.file(name + "_sim.cfg", "[simulate]\n" + c.spec);
    const std::string fit_cfg = tmp.file(name + "_fit.cfg", c.fit);
    const std::string data = tmp.file(name + "_data"), fitdir = tmp.file(name + "_fit"), rep = tmp.file(name + ".json");
    std::string rendered;
    bool ok = run_cli({"simulate", "--model", name, "--spec", spec_path, "--out", data}) == 0 &&
              run_cli({"fit", "--model", name, "--data", data, "--config", fit_cfg, "--out", fitdir}) == 0 &&
              run_cli({"evaluate", "--truth", data, "--fit", fitdir, "--out", rep}) == 0 &&
              run_cli({"report", "--in", rep, "--format", "json"}, &rendered) == 0;
    if (ok) {
      try {
        const EvalReport r = eval_report_from_json(rendered);
        const auto lib = library_metrics(c.tag, sim_spec_from_config(parse_config(spec_path), c.tag));
        ok = r.model == c.tag && r.metrics.size() == lib.size();
        for (const auto& [k, v] : lib) {
          const auto it = r.metrics.find(k);
          if (it == r.metrics.end() || it->second != v) {
            ok = false;
            det += " " + name + "." + k + " mismatch";
          }
        }
      } catch (const std::exception& e) {
        ok = false;
        det += " " + name + ": " + e.what();
      }
    } else {
      det += " " + name + ": pipeline failed";
    }
    good += ok;
  }
  return {good == 6, std::to_string(good) + "/6 model tags: pipeline ran, report valid, metrics bit-identical" + det};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"density oracles", density_oracles},
    {"gradient suite", gradient_suite},
    {"monotonicity suite", monotonicity_suite},
    {"SRM recovery", srm_recovery},
    {"HTFA recovery", htfa_recovery},
    {"DRD vs ridge", drd_vs_ridge},
    {"BRSA bias", brsa_bias},
    {"spurious-structure theory", spurious_structure},
    {"matrix-normal advantage", matnormal_advantage},
    {"end-to-end CLI", end_to_end},
};

}  // namespace

int main(int argc, char** argv) {
  int first = 1, last = 10;
  if (argc > 1) first = last = std::atoi(argv[1]);
  if (first < 1 || last > 10) {
    std::fprintf(stderr, "usage: acceptance [1-10]\n");
    return 2;
  }
  int failures = 0;
  for (int i = first; i <= last; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = kCriteria[i - 1].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s [%.1fs] %s\n", i, kCriteria[i - 1].name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures;
}
