#include "neuropgm/matnormal.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "neuropgm/density.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/optimize.hpp"

namespace neuropgm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_temporal(const CovarianceSpec& spec) {
  if (!std::holds_alternative<AR1>(spec) && !std::holds_alternative<ScaledIdentity>(spec))
    fail(ErrorCode::BadSpec, "temporal covariance must be ar1 or scaled identity");
}

Vector voxel_diag(const CovarianceSpec& spec, Eigen::Index V) {
  if (const auto* s = std::get_if<ScaledIdentity>(&spec)) return Vector::Constant(V, s->variance);
  if (const auto* d = std::get_if<Diagonal>(&spec)) {
    if (d->d.size() != V) fail(ErrorCode::DimensionMismatch, "voxel covariance size does not match data");
    return d->d;
  }
  fail(ErrorCode::BadSpec, "voxel covariance must be diagonal or scaled identity");
}

CovarianceSpec voxel_spec(const Vector& d, bool diagonal) {
  if (diagonal) return Diagonal{d};
  return ScaledIdentity{d.mean()};
}

Eigen::Index check_data(const std::vector<Matrix>& datasets, int K) {
  if (datasets.empty()) fail(ErrorCode::BadShape, "no datasets");
  const Eigen::Index T = datasets[0].rows();
  for (const auto& X : datasets) {
    if (X.rows() != T) fail(ErrorCode::BadShape, "all subjects must share the number of time points");
    if (!X.allFinite()) fail(ErrorCode::BadShape, "non-finite data");
    if (K > X.cols()) fail(ErrorCode::BadShape, "K exceeds a subject's voxel count");
  }
  if (K < 1 || K >= T) fail(ErrorCode::BadShape, "K must lie in [1, T)");
  return T;
}

void check_model(const std::vector<Matrix>& datasets, const MnModel& model) {
  if (datasets.size() != model.mu.size() || datasets.size() != model.sigma_v.size())
    fail(ErrorCode::DimensionMismatch, "subject count does not match model");
  check_temporal(model.sigma_t);
}

// Lower-triangular-free square root of a PSD matrix (eigenvalues clipped at 0).
Matrix psd_factor(const Matrix& A) {
  const SymEigen e = sym_eigen(symmetrize(A));
  return e.vectors * e.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Matrix floor_eigen(const Matrix& A, double rel) {
  const SymEigen e = sym_eigen(symmetrize(A));
  const double f = rel * std::max(e.values.maxCoeff(), 1e-300);
  return e.vectors * e.values.cwiseMax(f).asDiagonal() * e.vectors.transpose();
}

double ar1_phi(const CovarianceSpec& spec) {
  if (const auto* a = std::get_if<AR1>(&spec)) return a->phi;
  return 0.0;
}

std::vector<Eigen::Index> index_range(Eigen::Index T, Eigen::Index start) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index t = start; t < T; t += 2) idx.push_back(t);
  return idx;
}

Matrix take_cols(const Matrix& A, const std::vector<Eigen::Index>& idx) {
  Matrix B(A.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) B.col(j) = A.col(idx[j]);
  return B;
}

Matrix take_block(const Matrix& A, const std::vector<Eigen::Index>& r, const std::vector<Eigen::Index>& c) {
  Matrix B(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) B(i, j) = A(r[i], c[j]);
  return B;
}

// Per-voxel variance floor relative to the data scale.
double variance_floor(const std::vector<Matrix>& datasets) {
  double s = 0.0, n = 0.0;
  for (const auto& X : datasets) {
    s += (X.rowwise() - X.colwise().mean()).squaredNorm();
    n += static_cast<double>(X.size());
  }
  return 1e-8 * std::max(s / n, 1e-300);
}

// MN-SRM E-step in the eigenbasis of Sigma_t.
struct MnEStep {
  Matrix ES;    // K x T
  Matrix ESp;   // K x T, rotated
  Matrix ESSt;  // E[S S^T]
  Matrix ESLS;  // E[S Sigma_t^{-1} S^T]
  std::vector<Matrix> P;  // posterior covariance per rotated column
};

MnEStep mn_estep(const std::vector<Matrix>& A, const MnModel& model, const SymEigen& et) {
  const int K = model.K;
  const Eigen::Index T = et.values.size();
  Matrix G = Matrix::Zero(K, K);
  Matrix B = Matrix::Zero(K, T);
  for (std::size_t m = 0; m < A.size(); ++m) {
    const Vector dinv = voxel_diag(model.sigma_v[m], A[m].rows()).cwiseInverse();
    const Matrix WtD = model.W[m].transpose() * dinv.asDiagonal();
    G += WtD * model.W[m];
    B += WtD * A[m];
  }
  const Matrix Bp = B * et.vectors;
  const Matrix sinv = cholesky_logdet(model.sigma_s).inverse();
  MnEStep e;
  e.ESp.resize(K, T);
  e.ESSt = Matrix::Zero(K, K);
  e.ESLS = Matrix::Zero(K, K);
  for (Eigen::Index j = 0; j < T; ++j) {
    const double lam = et.values(j);
    const Matrix P = cholesky_logdet(symmetrize(sinv + G / lam)).inverse();
    const Vector mj = P * Bp.col(j) / lam;
    e.ESp.col(j) = mj;
    const Matrix second = mj * mj.transpose() + P;
    e.ESSt += second;
    e.ESLS += second / lam;
    e.P.push_back(P);
  }
  e.ES = e.ESp * et.vectors.transpose();
  return e;
}

Matrix temporal_matrix(const CovarianceSpec& spec, Eigen::Index T) { return cov_materialize(spec, T); }

}  // namespace

double MnModel::temporal_phi() const { return ar1_phi(sigma_t); }

double mnsrm_marginal_loglik(const std::vector<Matrix>& datasets, const MnModel& model) {
  check_model(datasets, model);
  const Eigen::Index T = datasets[0].rows();
  Eigen::Index Vt = 0;
  for (const auto& X : datasets) Vt += X.cols();
  Matrix Xs(Vt, T), Ms(Vt, T), Wst(Vt, model.K);
  Vector d(Vt);
  Eigen::Index off = 0;
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const Eigen::Index V = datasets[m].cols();
    Xs.middleRows(off, V) = datasets[m].transpose();
    Ms.middleRows(off, V) = model.mu[m].replicate(1, T);
    Wst.middleRows(off, V) = model.W[m];
    d.segment(off, V) = voxel_diag(model.sigma_v[m], V);
    off += V;
  }
  const Matrix F = Wst * psd_factor(model.sigma_s);
  return kron_sum_mvn_logpdf_lowrank(Xs, Ms, F, Matrix::Identity(T, T), Diagonal{d},
                                     temporal_matrix(model.sigma_t, T));
}

DpsrmGradient dpsrm_marginal_grad(const std::vector<Matrix>& datasets, const MnModel& model) {
  check_model(datasets, model);
  const Eigen::Index T = datasets[0].rows();
  const int K = model.K;
  if (model.S.rows() != K || model.S.cols() != T) fail(ErrorCode::DimensionMismatch, "S shape");
  const Matrix R1 = symmetrize(model.S.transpose() * model.sigma_w * model.S);
  const Matrix St = temporal_matrix(model.sigma_t, T);
  DpsrmGradient g;
  g.dS = Matrix::Zero(K, T);
  g.dsigma_w = Matrix::Zero(K, K);
  Matrix dR2 = Matrix::Zero(T, T);
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const Eigen::Index V = datasets[m].cols();
    const Vector d = voxel_diag(model.sigma_v[m], V);
    const Matrix M = model.mu[m].transpose().replicate(T, 1);
    const KronSumGradient k = kron_sum_mvn_logpdf_grad(datasets[m], M, R1, Matrix::Identity(V, V), St,
                                                       Matrix(d.asDiagonal()));
    g.value += k.value;
    const Matrix dR1 = symmetrize(k.dR1);
    g.dS += 2.0 * model.sigma_w * model.S * dR1;
    g.dsigma_w += model.S * dR1 * model.S.transpose();
    dR2 += k.dR2;
    g.dmu.push_back(k.dM.colwise().sum().transpose());
    g.dsigma_v.push_back(cov_param_gradient(model.sigma_v[m], V, symmetrize(k.dC2)));
  }
  g.dsigma_t = cov_param_gradient(model.sigma_t, T, symmetrize(dR2));
  return g;
}

double dpsrm_marginal_loglik(const std::vector<Matrix>& datasets, const MnModel& model) {
  check_model(datasets, model);
  const Eigen::Index T = datasets[0].rows();
  const Matrix R1 = symmetrize(model.S.transpose() * model.sigma_w * model.S);
  double f = 0.0;
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const Eigen::Index V = datasets[m].cols();
    const Matrix M = model.mu[m].transpose().replicate(T, 1);
    f += kron_sum_mvn_logpdf(datasets[m], M, R1, Matrix::Identity(V, V), model.sigma_t,
                             Diagonal{voxel_diag(model.sigma_v[m], V)});
  }
  return f;
}

MnModel fit_mnsrm(const std::vector<Matrix>& datasets, int K, const MnOptions& opts) {
  const auto t0 = Clock::now();
  const Eigen::Index T = check_data(datasets, K);
  check_temporal(opts.temporal);
  const std::size_t M = datasets.size();
  const bool ar = std::holds_alternative<AR1>(opts.temporal);
  const double vfloor = variance_floor(datasets);

  MnModel model;
  model.variant = ModelTag::MnSrm;
  model.K = K;
  model.sigma_t = ar ? CovarianceSpec(AR1{1.0, std::get<AR1>(opts.temporal).phi}) : CovarianceSpec(ScaledIdentity{1.0});

  std::vector<Matrix> Y(M), centered(M);
  for (std::size_t m = 0; m < M; ++m) {
    Y[m] = datasets[m].transpose();
    model.mu.push_back(Y[m].rowwise().mean());
    centered[m] = datasets[m].rowwise() - model.mu[m].transpose();
  }
  SrmOptions so;
  so.max_iters = 20;
  so.seed = opts.seed;
  const SrmFit init = fit_srm_deterministic(centered, K, so);
  model.sigma_s = floor_eigen(init.model.S * init.model.S.transpose() / static_cast<double>(T), 1e-6);
  const double c0 = model.sigma_s.trace();
  model.sigma_s /= c0;
  for (std::size_t m = 0; m < M; ++m) {
    model.W.push_back(init.model.W[m] * std::sqrt(c0));
    const Matrix R = centered[m].transpose() - init.model.W[m] * init.model.S;
    const Vector d = (R.rowwise().squaredNorm() / static_cast<double>(T)).cwiseMax(vfloor);
    model.sigma_v.push_back(voxel_spec(d, opts.diagonal_voxel));
  }

  model.report.model = ModelTag::MnSrm;
  model.report.seed = opts.seed;
  double prev = mnsrm_marginal_loglik(datasets, model);
  model.report.record(prev);
  double Vtot = 0.0;
  for (const auto& X : datasets) Vtot += static_cast<double>(X.cols());

  for (int it = 0; it < opts.max_iters; ++it) {
    const Matrix St = temporal_matrix(model.sigma_t, T);
    const SymEigen et = sym_eigen(St);
    std::vector<Matrix> A(M);
    for (std::size_t m = 0; m < M; ++m) A[m] = Y[m].colwise() - model.mu[m];
    const MnEStep e = mn_estep(A, model, et);

    model.sigma_s = floor_eigen(e.ESSt / static_cast<double>(T), 1e-10);

    const Vector laminv = et.values.cwiseInverse();
    const Matrix ESLSinv = cholesky_logdet(symmetrize(e.ESLS)).inverse();
    const Vector ones = Vector::Ones(T);
    const Vector tinv1 = et.vectors * laminv.asDiagonal() * (et.vectors.transpose() * ones);
    const double denom = ones.dot(tinv1);
    Matrix Psi = Matrix::Zero(T, T);
    for (std::size_t m = 0; m < M; ++m) {
      const Matrix AQ = A[m] * et.vectors;
      model.W[m] = AQ * laminv.asDiagonal() * e.ESp.transpose() * ESLSinv;
      model.mu[m] = (Y[m] - model.W[m] * e.ES) * tinv1 / denom;
      A[m] = Y[m].colwise() - model.mu[m];
      const Matrix Aq = A[m] * et.vectors;
      const Matrix cross = Aq * laminv.asDiagonal() * e.ESp.transpose();  // V x K
      Vector d(A[m].rows());
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        const auto w = model.W[m].row(i);
        const double quad = (Aq.row(i).array().square() * laminv.transpose().array()).sum();
        d(i) = (quad - 2.0 * w.dot(cross.row(i)) + w * e.ESLS * w.transpose()) / static_cast<double>(T);
      }
      d = d.cwiseMax(vfloor);
      model.sigma_v[m] = voxel_spec(d, opts.diagonal_voxel);
      if (ar) {
        const Vector dinv = voxel_diag(model.sigma_v[m], d.size()).cwiseInverse();
        const Matrix E = A[m] - model.W[m] * e.ES;
        Psi += E.transpose() * dinv.asDiagonal() * E;
      }
    }
    if (ar) {
      // Posterior spread of S enters through Q diag(tr(G P_j)) Q^T with G
      // rebuilt from the updated loadings and noise.
      Matrix Gn = Matrix::Zero(K, K);
      for (std::size_t m = 0; m < M; ++m) {
        const Vector dinv = voxel_diag(model.sigma_v[m], model.W[m].rows()).cwiseInverse();
        Gn += model.W[m].transpose() * dinv.asDiagonal() * model.W[m];
      }
      Vector trGP(T);
      for (Eigen::Index j = 0; j < T; ++j) trGP(j) = Gn.cwiseProduct(e.P[j]).sum();
      Psi += et.vectors * trGP.asDiagonal() * et.vectors.transpose();
      const double p0 = Psi.trace();
      double p1 = 0.0, p2 = 0.0;
      for (Eigen::Index t = 1; t + 1 < T; ++t) p1 += Psi(t, t);
      for (Eigen::Index t = 0; t + 1 < T; ++t) p2 += 2.0 * Psi(t, t + 1);
      const auto Q = [&](double phi) {
        const double r = 1.0 - phi * phi;
        return -0.5 * Vtot * static_cast<double>(T - 1) * std::log(r) -
               0.5 * (p0 + phi * phi * p1 - phi * p2) / r;
      };
      const double old_phi = std::get<AR1>(model.sigma_t).phi;
      const double phi = golden_section_max(Q, -0.99, 0.99, 1e-10);
      if (Q(phi) >= Q(old_phi)) model.sigma_t = AR1{1.0, phi};
    }
    const double c = model.sigma_s.trace();
    model.sigma_s /= c;
    for (auto& W : model.W) W *= std::sqrt(c);

    const double cur = mnsrm_marginal_loglik(datasets, model);
    model.report.record(cur);
    if (std::abs(cur - prev) <= opts.tol * std::max(std::abs(prev), 1.0)) {
      model.report.converged = true;
      break;
    }
    prev = cur;
  }
  {
    const SymEigen et = sym_eigen(temporal_matrix(model.sigma_t, T));
    std::vector<Matrix> A(M);
    for (std::size_t m = 0; m < M; ++m) A[m] = Y[m].colwise() - model.mu[m];
    model.S = mn_estep(A, model, et).ES;
  }
  model.report.wall_seconds = seconds_since(t0);
  model.report.message = model.report.converged ? "converged" : "max_iters reached";
  return model;
}

namespace {

// Posterior mean of the DP-SRM loadings for each subject.
void dpsrm_posterior_loadings(const std::vector<Matrix>& datasets, MnModel& model) {
  const Eigen::Index T = model.S.cols();
  const CholeskyFactor ct = cholesky_logdet(temporal_matrix(model.sigma_t, T));
  const Matrix TiSt = ct.solve(Matrix(model.S.transpose()));  // T x K
  const Matrix StS = model.S * TiSt;
  const Matrix winv = cholesky_logdet(model.sigma_w).inverse();
  model.W.clear();
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const Eigen::Index V = datasets[m].cols();
    const Vector d = voxel_diag(model.sigma_v[m], V);
    const Matrix A = datasets[m].rowwise() - model.mu[m].transpose();  // T x V
    const Matrix rhs = TiSt.transpose() * A;                            // K x V
    Matrix W(V, model.K);
    for (Eigen::Index i = 0; i < V; ++i) {
      const Matrix P = symmetrize(winv + StS / d(i));
      W.row(i) = cholesky_logdet(P).solve(Vector(rhs.col(i) / d(i))).transpose();
    }
    model.W.push_back(W);
  }
}

}  // namespace

MnModel fit_dpsrm(const std::vector<Matrix>& datasets, int K, const MnOptions& opts) {
  const auto t0 = Clock::now();
  const Eigen::Index T = check_data(datasets, K);
  check_temporal(opts.temporal);
  const std::size_t M = datasets.size();
  const bool ar = std::holds_alternative<AR1>(opts.temporal);
  const double vfloor = variance_floor(datasets);

  MnModel model;
  model.variant = ModelTag::DpSrm;
  model.K = K;
  model.sigma_t = ar ? CovarianceSpec(AR1{1.0, std::get<AR1>(opts.temporal).phi}) : CovarianceSpec(ScaledIdentity{1.0});

  std::vector<Matrix> centered(M);
  double vbar = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    model.mu.push_back(datasets[m].colwise().mean().transpose());
    centered[m] = datasets[m].rowwise() - model.mu[m].transpose();
    vbar += static_cast<double>(datasets[m].cols()) / static_cast<double>(M);
  }
  SrmOptions so;
  so.max_iters = 20;
  so.seed = opts.seed;
  const SrmFit init = fit_srm_deterministic(centered, K, so);
  model.sigma_w = Matrix::Identity(K, K) / static_cast<double>(K);
  model.S = init.model.S * std::sqrt(static_cast<double>(K) / vbar);
  for (std::size_t m = 0; m < M; ++m) {
    const Matrix R = centered[m].transpose() - init.model.W[m] * init.model.S;
    const Vector d = (R.rowwise().squaredNorm() / static_cast<double>(T)).cwiseMax(vfloor);
    model.sigma_v.push_back(voxel_spec(d, opts.diagonal_voxel));
  }

  // Parameter layout: S, mu_m, packed Sigma_w, atanh(phi), packed Sigma_v,m.
  const Eigen::Index nS = K * T;
  Eigen::Index nmu = 0;
  for (const auto& X : datasets) nmu += X.cols();
  const Eigen::Index nW = K * (K + 1) / 2;
  const Eigen::Index nT = ar ? 1 : 0;
  Eigen::Index nV = 0;
  for (const auto& s : model.sigma_v) nV += cov_param_count(s);
  const Eigen::Index n = nS + nmu + nW + nT + nV;

  const auto pack = [&](const MnModel& mm) {
    Vector x(n);
    x.head(nS) = Eigen::Map<const Vector>(mm.S.data(), nS);
    Eigen::Index o = nS;
    for (const auto& mu : mm.mu) {
      x.segment(o, mu.size()) = mu;
      o += mu.size();
    }
    x.segment(o, nW) = cov_pack(DenseSPD{mm.sigma_w});
    o += nW;
    if (ar) x(o++) = std::atanh(std::get<AR1>(mm.sigma_t).phi);
    for (const auto& s : mm.sigma_v) {
      const Vector p = cov_pack(s);
      x.segment(o, p.size()) = p;
      o += p.size();
    }
    return x;
  };
  const auto unpack = [&](const Vector& x, MnModel& mm) {
    mm.S = Eigen::Map<const Matrix>(x.data(), K, T);
    Eigen::Index o = nS;
    for (auto& mu : mm.mu) {
      mu = x.segment(o, mu.size());
      o += mu.size();
    }
    mm.sigma_w = std::get<DenseSPD>(cov_unpack(DenseSPD{Matrix::Identity(K, K)}, x.segment(o, nW))).A;
    o += nW;
    if (ar) mm.sigma_t = AR1{1.0, std::tanh(x(o++))};
    for (auto& s : mm.sigma_v) {
      const Eigen::Index c = cov_param_count(s);
      s = cov_unpack(s, x.segment(o, c));
      o += c;
    }
  };

  MnModel work = model;
  const GradObjective f = [&](const Vector& x, Vector* grad) {
    unpack(x, work);
    if (!grad) return -dpsrm_marginal_loglik(datasets, work);
    const DpsrmGradient g = dpsrm_marginal_grad(datasets, work);
    Vector& gr = *grad;
    gr.resize(n);
    gr.head(nS) = -Eigen::Map<const Vector>(g.dS.data(), nS);
    Eigen::Index o = nS;
    for (const auto& dm : g.dmu) {
      gr.segment(o, dm.size()) = -dm;
      o += dm.size();
    }
    gr.segment(o, nW) = -cov_param_gradient(DenseSPD{work.sigma_w}, K, symmetrize(g.dsigma_w));
    o += nW;
    if (ar) gr(o++) = -g.dsigma_t(1);
    for (const auto& dv : g.dsigma_v) {
      gr.segment(o, dv.size()) = -dv;
      o += dv.size();
    }
    return -g.value;
  };

  LbfgsOptions lo;
  lo.max_iters = opts.max_iters;
  lo.rel_tol = opts.tol * 1e-3;
  lo.grad_tol = 1e-6;
  const OptimResult r = lbfgs_minimize(f, pack(model), lo);
  unpack(r.x, model);

  const double c = model.sigma_w.trace();
  model.sigma_w /= c;
  model.S *= std::sqrt(c);
  dpsrm_posterior_loadings(datasets, model);

  model.report.model = ModelTag::DpSrm;
  model.report.seed = opts.seed;
  for (double v : r.trace) model.report.record(-v);
  model.report.converged = r.converged;
  model.report.message = r.message;
  model.report.wall_seconds = seconds_since(t0);
  return model;
}

HeldoutScore mn_heldout_score(const MnModel& model, const Matrix& X_new) {
  const Eigen::Index T = model.S.cols();
  if (X_new.rows() != T) fail(ErrorCode::DimensionMismatch, "new subject must have T time points");
  if (!X_new.allFinite()) fail(ErrorCode::BadShape, "non-finite data");
  const Eigen::Index V = X_new.cols();
  const int K = model.K;
  const auto tr = index_range(T, 0);
  const auto te = index_range(T, 1);
  const Eigen::Index ntr = tr.size();
  if (ntr <= K + 1) fail(ErrorCode::BadShape, "too few time points for held-out scoring");

  const Matrix St = temporal_matrix(model.sigma_t, T);
  const Matrix Ctrtr = take_block(St, tr, tr), Ctetr = take_block(St, te, tr), Ctete = take_block(St, te, te);
  const CholeskyFactor ctr = cholesky_logdet(Ctrtr);

  const Matrix Y = X_new.transpose();
  const Matrix Ytr = take_cols(Y, tr), Yte = take_cols(Y, te);
  const Matrix Str = take_cols(model.S, tr), Ste = take_cols(model.S, te);

  Matrix D(ntr, K + 1);
  D.leftCols(K) = Str.transpose();
  D.col(K).setOnes();
  const Matrix SiD = ctr.solve(D);
  const Matrix H = symmetrize(D.transpose() * SiD);
  const Matrix rhs = SiD.transpose() * Ytr.transpose();  // (K+1) x V
  Matrix B = cholesky_logdet(H).solve(rhs);              // (K+1) x V

  const double scale = std::max((Ytr.colwise() - Ytr.rowwise().mean()).squaredNorm() / static_cast<double>(Ytr.size()), 1e-300);
  const double vfloor = 1e-12 * scale;
  const auto resid_var = [&](const Matrix& coef) {
    const Matrix R = Ytr - coef.transpose() * D.transpose();  // V x ntr
    const Matrix RS = ctr.solve(Matrix(R.transpose()));      // ntr x V
    Vector v(V);
    for (Eigen::Index i = 0; i < V; ++i) v(i) = R.row(i).dot(RS.col(i)) / static_cast<double>(ntr);
    v = v.cwiseMax(vfloor);
    if (!model.sigma_v.empty() && std::holds_alternative<ScaledIdentity>(model.sigma_v[0]))
      v.setConstant(v.mean());
    return v;
  };
  Vector v = resid_var(B);
  if (model.variant == ModelTag::DpSrm) {
    Matrix prior = Matrix::Zero(K + 1, K + 1);
    prior.topLeftCorner(K, K) = cholesky_logdet(model.sigma_w).inverse();
    for (Eigen::Index i = 0; i < V; ++i)
      B.col(i) = cholesky_logdet(symmetrize(prior + H / v(i))).solve(Vector(rhs.col(i) / v(i)));
    v = resid_var(B);
  }
  const Matrix W = B.topRows(K).transpose();
  const Vector mu = B.row(K).transpose();
  const Matrix Rtr = (Ytr - W * Str).colwise() - mu;
  const Matrix pred = (W * Ste).colwise() + mu;
  const Matrix cond = (ctr.solve(Matrix(Ctetr.transpose())).transpose() * Rtr.transpose()).transpose();
  const Matrix mean = pred + cond;
  HeldoutScore s;
  s.rmse = std::sqrt((Yte - mean).squaredNorm() / static_cast<double>(Yte.size()));
  const Matrix Ccond = symmetrize(Ctete - Ctetr * ctr.solve(Matrix(Ctetr.transpose())));
  s.loglik = matnormal_logpdf(Yte, mean, Matrix(v.asDiagonal()), Ccond);
  return s;
}

HeldoutScore srm_heldout_score(const SrmModel& model, const Matrix& X_new) {
  const Eigen::Index T = model.S.cols();
  if (X_new.rows() != T) fail(ErrorCode::DimensionMismatch, "new subject must have T time points");
  const auto tr = index_range(T, 0);
  const auto te = index_range(T, 1);
  const Matrix Y = X_new.transpose();
  const Matrix Ytr = take_cols(Y, tr), Yte = take_cols(Y, te);
  const Matrix Str = take_cols(model.S, tr), Ste = take_cols(model.S, te);
  Vector mu = Ytr.rowwise().mean();
  Matrix W;
  for (int pass = 0; pass < 2; ++pass) {
    W = orthogonal_procrustes((Ytr.colwise() - mu) * Str.transpose());
    mu = (Ytr - W * Str).rowwise().mean();
  }
  const Matrix Rtr = (Ytr - W * Str).colwise() - mu;
  const double rho2 = std::max(Rtr.squaredNorm() / static_cast<double>(Rtr.size()), 1e-300);
  const Matrix E = Yte - ((W * Ste).colwise() + mu);
  HeldoutScore s;
  s.rmse = std::sqrt(E.squaredNorm() / static_cast<double>(E.size()));
  s.loglik = -0.5 * static_cast<double>(E.size()) * (kLog2Pi + std::log(rho2)) - 0.5 * E.squaredNorm() / rho2;
  return s;
}

double mn_training_rmse(const MnModel& model, const Matrix& X, int subject) {
  if (subject < 0 || static_cast<std::size_t>(subject) >= model.W.size())
    fail(ErrorCode::DimensionMismatch, "subject index out of range");
  const Matrix E = (X.transpose() - model.W[subject] * model.S).colwise() - model.mu[subject];
  return std::sqrt(E.squaredNorm() / static_cast<double>(E.size()));
}

}  // namespace neuropgm
