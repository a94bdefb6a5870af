#include "neuropgm/brsa.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>

#include "neuropgm/density.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/optimize.hpp"
#include "neuropgm/parallel.hpp"

namespace neuropgm {

void DesignMatrix::validate() const {
  if (S.rows() < 1 || S.cols() < 1) fail(ErrorCode::BadSpec, "design matrix is empty");
  if (!S.allFinite()) fail(ErrorCode::BadSpec, "design matrix has non-finite entries");
  for (Eigen::Index k = 0; k < S.cols(); ++k) {
    if (S.col(k).cwiseAbs().maxCoeff() == 0.0)
      fail(ErrorCode::BadSpec, "design column " + std::to_string(k) + " is all zero");
  }
  if (!conditions.empty() && static_cast<Eigen::Index>(conditions.size()) != S.cols())
    fail(ErrorCode::BadSpec, "one condition label per design column required");
}

Vector default_hrf() {
  Vector h(16);
  h << 0.000000, 0.224892, 0.973929, 1.000000, 0.561455, 0.199701, 0.004209, -0.079517, -0.096918, -0.080113,
      -0.053299, -0.030251, -0.015122, -0.006803, -0.002799, -0.001066;
  return h;
}

DesignMatrix convolve_design(const std::vector<Event>& events, int T, const Vector& kernel) {
  if (T < 1) fail(ErrorCode::BadSpec, "T must be >= 1");
  if (kernel.size() < 1) fail(ErrorCode::BadSpec, "kernel is empty");
  DesignMatrix d;
  std::vector<Vector> trains;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    const double start_f = std::floor(e.onset);
    const long len = std::max(1L, std::lround(e.duration));
    if (!std::isfinite(e.onset) || !std::isfinite(e.amplitude) || start_f < 0 || start_f + len > T)
      fail(ErrorCode::BadSpec, "event " + std::to_string(i) + " (onset " + std::to_string(e.onset) +
                                   ") falls outside [0, " + std::to_string(T) + ")");
    auto it = std::find(d.conditions.begin(), d.conditions.end(), e.condition);
    std::size_t k = it - d.conditions.begin();
    if (it == d.conditions.end()) {
      d.conditions.push_back(e.condition);
      trains.push_back(Vector::Zero(T));
    }
    const auto start = static_cast<Eigen::Index>(start_f);
    trains[k].segment(start, len).array() += e.amplitude;
  }
  d.S = Matrix::Zero(T, static_cast<Eigen::Index>(trains.size()));
  const Eigen::Index klen = kernel.size();
  for (std::size_t k = 0; k < trains.size(); ++k) {
    for (Eigen::Index t = 0; t < T; ++t) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < klen && j <= t; ++j) acc += kernel(j) * trains[k](t - j);
      d.S(t, static_cast<Eigen::Index>(k)) = acc;
    }
  }
  return d;
}

Similarity similarity_from_cov(const Matrix& U) {
  if (U.rows() != U.cols()) fail(ErrorCode::DimensionMismatch, "covariance must be square");
  const Eigen::Index K = U.rows();
  Similarity out;
  out.matrix = Matrix::Identity(K, K);
  out.degenerate.assign(K, false);
  for (Eigen::Index i = 0; i < K; ++i) out.degenerate[i] = !(U(i, i) > 0);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = i + 1; j < K; ++j) {
      double r = 0.0;
      if (!out.degenerate[i] && !out.degenerate[j]) r = std::clamp(U(i, j) / std::sqrt(U(i, i) * U(j, j)), -1.0, 1.0);
      out.matrix(i, j) = out.matrix(j, i) = r;
    }
  }
  return out;
}

namespace {

CholeskyFactor design_gram(const Matrix& S) {
  try {
    return cholesky_logdet(S.transpose() * S);
  } catch (const Error&) {
    fail(ErrorCode::RankDeficient, "design matrix S^T S is singular");
  }
}

}  // namespace

Matrix naive_rsa(const Matrix& X, const Matrix& S, bool demean) {
  if (X.rows() != S.rows()) fail(ErrorCode::DimensionMismatch, "X and S disagree on T");
  Matrix W = design_gram(S).solve(Matrix(S.transpose() * X));
  if (demean) W.colwise() -= W.rowwise().mean();
  return similarity_from_cov(W * W.transpose()).matrix;
}

Matrix expected_spurious_similarity(const Matrix& S) { return similarity_from_cov(design_gram(S).inverse()).matrix; }

double offdiag_rmse(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols() || A.rows() != A.cols())
    fail(ErrorCode::DimensionMismatch, "similarity matrices must be square and equal-sized");
  const Eigen::Index K = A.rows();
  if (K < 2) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j)
      if (i != j) acc += (A(i, j) - B(i, j)) * (A(i, j) - B(i, j));
  return std::sqrt(acc / static_cast<double>(K * (K - 1)));
}

namespace {

// The AR(1) precision is c (I + phi^2 D1 - phi O) with c = 1 / (sigma^2 (1 - phi^2)),
// D1 = diag(0, 1, ..., 1, 0) and O the first off-diagonals. Every bilinear form
// a^T A^{-1} b therefore combines three phi-free forms, which are precomputed
// once for Y = [x_v, S0, S].
enum Form { kIdentity = 0, kInterior = 1, kOffDiag = 2 };

Matrix apply_form(Form f, const Matrix& A) {
  const Eigen::Index T = A.rows();
  switch (f) {
    case kIdentity: return A;
    case kInterior: {
      Matrix B = A;
      B.row(0).setZero();
      if (T > 1) B.row(T - 1).setZero();
      return B;
    }
    case kOffDiag: {
      Matrix B = Matrix::Zero(T, A.cols());
      if (T > 1) {
        B.topRows(T - 1) += A.bottomRows(T - 1);
        B.bottomRows(T - 1) += A.topRows(T - 1);
      }
      return B;
    }
  }
  return A;
}

struct FormCache {
  Eigen::Index T = 0, K = 0, n0 = 0;
  std::array<Matrix, 3> shared;  // [S0 S]^T Q [S0 S]
  std::array<Matrix, 3> cross;   // [S0 S]^T Q X
  std::array<Vector, 3> self;    // x_v^T Q x_v

  FormCache(const Matrix& S, const Matrix& S0, const Matrix& X) : T(S.rows()), K(S.cols()), n0(S0.cols()) {
    Matrix Ys(T, n0 + K);
    Ys << S0, S;
    for (int f = 0; f < 3; ++f) {
      const Matrix QYs = apply_form(static_cast<Form>(f), Ys);
      shared[f] = Ys.transpose() * QYs;
      cross[f] = QYs.transpose() * X;
      self[f] = X.cwiseProduct(apply_form(static_cast<Form>(f), X)).colwise().sum().transpose();
    }
  }

  // Basis forms for Y = [x_v, S0, S].
  Matrix block(int f, Eigen::Index v) const {
    const Eigen::Index d = 1 + n0 + K;
    Matrix B(d, d);
    B(0, 0) = self[f](v);
    B.block(1, 0, d - 1, 1) = cross[f].col(v);
    B.block(0, 1, 1, d - 1) = cross[f].col(v).transpose();
    B.bottomRightCorner(d - 1, d - 1) = shared[f];
    return B;
  }
};

struct VoxelTerm {
  double value = 0.0;
  Matrix dL;
  double dlog_sigma = 0.0;
  double datanh_phi = 0.0;
  Vector w0;
};

VoxelTerm voxel_term(const FormCache& fc, Eigen::Index v, const Matrix& L, double sigma, double phi, bool grad) {
  const Eigen::Index K = fc.K, n0 = fc.n0, nz = 1 + n0, d = nz + K;
  const double T = static_cast<double>(fc.T);
  const double one_m = 1.0 - phi * phi;
  const double c = 1.0 / (sigma * sigma * one_m);
  const Matrix B0 = fc.block(kIdentity, v), B1 = fc.block(kInterior, v), BO = fc.block(kOffDiag, v);
  const Matrix G = c * (B0 + phi * phi * B1 - phi * BO);

  const Matrix P = G.bottomRightCorner(K, K);
  Matrix M = L.transpose() * P * L;
  M.diagonal().array() += 1.0;
  const CholeskyFactor mc = cholesky_logdet(M);
  VoxelTerm out;
  const Matrix WZ = G.topRightCorner(nz, K) * L;
  const Matrix H = G.topLeftCorner(nz, nz) - WZ * mc.solve(Matrix(WZ.transpose()));

  Vector cvec = Vector::Zero(nz);
  cvec(0) = 1.0;
  double quad = H(0, 0);
  if (n0 > 0) {
    const CholeskyFactor hc = cholesky_logdet(H.bottomRightCorner(n0, n0));
    const Vector w0 = hc.solve(Vector(H.block(1, 0, n0, 1)));
    quad -= H.block(1, 0, n0, 1).col(0).dot(w0);
    cvec.tail(n0) = -w0;
    out.w0 = w0;
  }
  const double logdet_a = T * std::log(sigma * sigma) + (T - 1.0) * std::log(one_m);
  out.value = 0.5 * (T * kLog2Pi + logdet_a + mc.logdet + quad);
  if (!grad) return out;

  const Vector b = WZ.transpose() * cvec;
  const Vector beta = mc.solve(b);
  Vector kappa(d);
  kappa.head(nz) = cvec;
  kappa.tail(K) = -L * beta;
  const Matrix Minv = mc.inverse();

  // sigma: dA^{-1}/dlog sigma = -2 A^{-1}
  out.dlog_sigma = T - static_cast<double>(K) + Minv.trace() - kappa.dot(G * kappa);

  // phi
  const Matrix Gp = (2.0 * phi / one_m) * G + c * (2.0 * phi * B1 - BO);
  const double dlogdet_a = -2.0 * (T - 1.0) * phi / one_m;
  const Matrix LtGpL = L.transpose() * Gp.bottomRightCorner(K, K) * L;
  const double dphi = 0.5 * (dlogdet_a + (Minv.array() * LtGpL.array()).sum() + kappa.dot(Gp * kappa));
  out.datanh_phi = dphi * one_m;

  // L: (S^T Sigma^{-1} S - S^T alpha alpha^T S) L
  const Matrix PL = P * L;
  const Vector g = G.bottomRows(K) * kappa;
  const Matrix Gamma = P - PL * Minv * PL.transpose() - g * g.transpose();
  out.dL = Gamma * L;
  return out;
}

void check_brsa_inputs(const Matrix& L, const Vector& sigma, const Vector& phi, const Matrix& S, const Matrix& S0,
                       const Matrix& X) {
  const Eigen::Index K = S.cols();
  if (L.rows() != K || L.cols() != K) fail(ErrorCode::DimensionMismatch, "L must be K x K");
  if (X.rows() != S.rows() || S0.rows() != S.rows()) fail(ErrorCode::DimensionMismatch, "X, S and S0 must share T");
  if (sigma.size() != X.cols() || phi.size() != X.cols())
    fail(ErrorCode::DimensionMismatch, "one noise parameter pair per voxel required");
  if (!(sigma.array() > 0).all()) fail(ErrorCode::NotSPD, "noise sd must be positive");
  if (!(phi.array().abs() < 1).all()) fail(ErrorCode::NotSPD, "AR coefficients must lie in (-1, 1)");
}

BrsaObjective evaluate(const FormCache& fc, const Matrix& L, const Vector& sigma, const Vector& phi, bool grad) {
  const Eigen::Index V = sigma.size();
  std::vector<VoxelTerm> terms(V);
  parallel_for(static_cast<std::size_t>(V), [&](std::size_t v) {
    terms[v] = voxel_term(fc, static_cast<Eigen::Index>(v), L, sigma(v), phi(v), grad);
  });
  BrsaObjective out;
  if (grad) {
    out.dL = Matrix::Zero(fc.K, fc.K);
    out.dlog_sigma.resize(V);
    out.datanh_phi.resize(V);
  }
  for (Eigen::Index v = 0; v < V; ++v) {
    out.value += terms[v].value;
    if (grad) {
      out.dL += terms[v].dL;
      out.dlog_sigma(v) = terms[v].dlog_sigma;
      out.datanh_phi(v) = terms[v].datanh_phi;
    }
  }
  if (grad) out.dL = out.dL.triangularView<Eigen::Lower>();
  return out;
}

}  // namespace

BrsaObjective brsa_neg_marginal_loglik(const Matrix& L, const Vector& sigma, const Vector& phi, const Matrix& S,
                                       const Matrix& S0, const Matrix& X, bool with_gradient) {
  check_brsa_inputs(L, sigma, phi, S, S0, X);
  const Matrix Lt = L.triangularView<Eigen::Lower>();
  return evaluate(FormCache(S, S0, X), Lt, sigma, phi, with_gradient);
}

namespace {

struct Packing {
  Eigen::Index K, V;
  Eigen::Index size() const { return K * (K + 1) / 2 + 2 * V; }

  Vector pack(const Matrix& L, const Vector& sigma, const Vector& phi) const {
    Vector x(size());
    Eigen::Index i = 0;
    for (Eigen::Index c = 0; c < K; ++c)
      for (Eigen::Index r = c; r < K; ++r) x(i++) = L(r, c);
    x.segment(i, V) = sigma.array().log();
    x.segment(i + V, V) = phi.array().atanh();
    return x;
  }

  void unpack(const Vector& x, Matrix& L, Vector& sigma, Vector& phi) const {
    L = Matrix::Zero(K, K);
    Eigen::Index i = 0;
    for (Eigen::Index c = 0; c < K; ++c)
      for (Eigen::Index r = c; r < K; ++r) L(r, c) = x(i++);
    sigma = x.segment(i, V).array().exp();
    phi = x.segment(i + V, V).array().tanh();
  }

  Vector pack_grad(const BrsaObjective& o) const {
    Vector g(size());
    Eigen::Index i = 0;
    for (Eigen::Index c = 0; c < K; ++c)
      for (Eigen::Index r = c; r < K; ++r) g(i++) = o.dL(r, c);
    g.segment(i, V) = o.dlog_sigma;
    g.segment(i + V, V) = o.datanh_phi;
    return g;
  }
};

// Top-n0 left singular vectors of the residuals scaled by the voxel noise sd.
Matrix nuisance_components(const Matrix& X, const Matrix& S, const Vector& sigma, int n0) {
  const Matrix W = design_gram(S).solve(Matrix(S.transpose() * X));
  const Matrix R = (X - S * W) * sigma.cwiseInverse().asDiagonal();
  Eigen::BDCSVD<Matrix> svd(R, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(n0);
}

}  // namespace

BrsaModel fit_brsa(const Matrix& X, const Matrix& S, const BrsaOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  DesignMatrix{S, {}}.validate();
  if (X.rows() != S.rows()) fail(ErrorCode::DimensionMismatch, "X and S disagree on T");
  if (!X.allFinite()) fail(ErrorCode::BadShape, "X must be finite");
  const Eigen::Index T = X.rows(), K = S.cols(), V = X.cols();
  const int n0 = opts.nuisance_rank;
  if (n0 < 0 || n0 + K >= T) fail(ErrorCode::BadSpec, "nuisance rank must satisfy 0 <= n0 < T - K");

  // Initialization from ordinary least squares.
  const Matrix W_ols = design_gram(S).solve(Matrix(S.transpose() * X));
  const Matrix R = X - S * W_ols;
  Matrix U0 = W_ols * W_ols.transpose() / static_cast<double>(V);
  U0.diagonal().array() += 1e-3 * U0.trace() / static_cast<double>(K);
  Vector sigma(V), phi(V);
  for (Eigen::Index v = 0; v < V; ++v) {
    const double ss = R.col(v).squaredNorm();
    sigma(v) = std::sqrt(std::max(ss / static_cast<double>(T - K), 1e-12));
    const double lag = T > 1 && ss > 0 ? R.col(v).head(T - 1).dot(R.col(v).tail(T - 1)) / ss : 0.0;
    phi(v) = std::clamp(lag, -0.9, 0.9);
  }
  BrsaModel model;
  model.L = cholesky_logdet(U0).L;
  model.nuisance_rank = n0;
  model.S0 = n0 > 0 ? nuisance_components(X, S, sigma, n0) : Matrix(T, 0);

  FitReport& rep = model.report;
  rep.model = ModelTag::Brsa;
  const Packing pk{K, V};
  LbfgsOptions lb;
  lb.max_iters = opts.max_iters;
  lb.grad_tol = 1e-10;
  lb.rel_tol = opts.tol;
  const int rounds = n0 > 0 ? std::max(opts.rounds, 1) : 1;
  bool all_converged = true;
  for (int round = 0; round < rounds; ++round) {
    const FormCache fc(S, model.S0, X);
    auto f = [&](const Vector& x, Vector* g) {
      Matrix L;
      Vector s, p;
      pk.unpack(x, L, s, p);
      const BrsaObjective o = evaluate(fc, L, s, p, g != nullptr);
      if (g) *g = pk.pack_grad(o);
      return o.value;
    };
    const OptimResult res = lbfgs_minimize(f, pk.pack(model.L, sigma, phi), lb);
    pk.unpack(res.x, model.L, sigma, phi);
    for (double v : res.trace) model.loglik_trace.push_back(-v);
    all_converged = all_converged && res.converged;
    if (round + 1 == rounds) break;
    // Candidate nuisance basis; kept only when it does not lower the likelihood.
    const Matrix cand = nuisance_components(X, S, sigma, n0);
    const double cur = -model.loglik_trace.back();
    const double next = evaluate(FormCache(S, cand, X), model.L, sigma, phi, false).value;
    if (next <= cur) {
      model.S0 = cand;
      model.loglik_trace.push_back(-next);
    } else {
      break;
    }
  }
  for (double v : model.loglik_trace) rep.record(-v);
  rep.converged = all_converged;
  rep.message = all_converged ? "converged" : "iteration limit";

  model.sigma = sigma;
  model.phi = phi;
  if (n0 > 0) {
    // GLS nuisance weights at the fitted covariance.
    model.W0.resize(n0, V);
    const FormCache fc(S, model.S0, X);
    for (Eigen::Index v = 0; v < V; ++v) model.W0.col(v) = voxel_term(fc, v, model.L, sigma(v), phi(v), false).w0;
  }
  model.similarity = similarity_from_cov(model.pattern_cov()).matrix;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return model;
}

}  // namespace neuropgm
