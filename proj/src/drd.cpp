#include "neuropgm/drd.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "neuropgm/density.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/optimize.hpp"

namespace neuropgm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_xy(const Matrix& X, const Vector& y) {
  if (X.rows() < 1 || X.cols() < 1) fail(ErrorCode::BadShape, "X must be non-empty");
  if (X.rows() != y.size()) fail(ErrorCode::DimensionMismatch, "X and y disagree on the number of rows");
  if (!X.allFinite() || !y.allFinite()) fail(ErrorCode::BadShape, "X and y must be finite");
}

// Everything fit_ridge needs from one thin SVD of X.
struct RidgeBasis {
  Vector s;     // singular values
  Matrix V;     // right singular vectors
  Vector uty;   // U^T y
  double rest;  // |y|^2 - |U^T y|^2
  Eigen::Index T;

  RidgeBasis(const Matrix& X, const Vector& y) : T(X.rows()) {
    Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    s = svd.singularValues();
    V = svd.matrixV();
    uty = svd.matrixU().transpose() * y;
    rest = std::max(y.squaredNorm() - uty.squaredNorm(), 0.0);
  }

  double evidence(double precision, double noise_var) const {
    const Vector lam = s.array().square() / precision + noise_var;
    const double r = static_cast<double>(s.size());
    const double logdet = lam.array().log().sum() + (static_cast<double>(T) - r) * std::log(noise_var);
    const double quad = (uty.array().square() / lam.array()).sum() + rest / noise_var;
    return -0.5 * (static_cast<double>(T) * kLog2Pi + logdet + quad);
  }

  Vector weights(double precision, double noise_var) const {
    const Vector shrink = s.array() / (s.array().square() + noise_var * precision);
    return V * (shrink.array() * uty.array()).matrix();
  }
};

}  // namespace

RidgeFit fit_ridge(const Matrix& X, const Vector& y, const RidgeOptions& opts) {
  check_xy(X, y);
  if (opts.precision && !(*opts.precision > 0)) fail(ErrorCode::BadSpec, "ridge precision must be positive");
  if (opts.noise_var && !(*opts.noise_var > 0)) fail(ErrorCode::BadSpec, "ridge noise variance must be positive");
  const RidgeBasis basis(X, y);
  const double T = static_cast<double>(X.rows());
  const double vy = y.squaredNorm() > 0 ? y.squaredNorm() / T : 1.0;

  auto best_noise = [&](double precision) {
    if (opts.noise_var) return *opts.noise_var;
    const double lv = golden_section_max([&](double l) { return basis.evidence(precision, std::exp(l)); },
                                         std::log(1e-6 * vy), std::log(2.0 * vy), 1e-6);
    return std::exp(lv);
  };

  RidgeFit fit;
  if (opts.precision) {
    fit.precision = *opts.precision;
    fit.noise_var = best_noise(fit.precision);
  } else {
    const double theta0 = X.squaredNorm() / std::max(y.squaredNorm(), 1e-300);
    fit.log_evidence = -kInf;
    for (int i = 0; i < 20; ++i) {
      const double theta = theta0 * std::pow(10.0, -3.0 + 6.0 * i / 19.0);
      const double nv = best_noise(theta);
      const double ev = basis.evidence(theta, nv);
      if (ev > fit.log_evidence) {
        fit.log_evidence = ev;
        fit.precision = theta;
        fit.noise_var = nv;
      }
    }
  }
  fit.log_evidence = basis.evidence(fit.precision, fit.noise_var);
  fit.w = basis.weights(fit.precision, fit.noise_var);
  return fit;
}

namespace {

// C = X diag(v) X^T + noise_var I together with the quantities every
// evidence-type computation needs.
struct MarginalCov {
  Eigen::LLT<Matrix> llt;
  double logdet = 0.0;
  Vector alpha;  // C^{-1} y

  MarginalCov(const Matrix& X, const Vector& y, const Vector& v, double noise_var) {
    const Matrix Xs = X * v.cwiseSqrt().asDiagonal();
    Matrix C = Matrix::Identity(X.rows(), X.rows()) * noise_var;
    C.selfadjointView<Eigen::Lower>().rankUpdate(Xs);
    llt.compute(C);
    if (llt.info() != Eigen::Success) fail(ErrorCode::NotSPD, "marginal covariance is not positive definite");
    const Matrix& L = llt.matrixLLT();
    logdet = 2.0 * L.diagonal().array().log().sum();
    if (!std::isfinite(logdet)) fail(ErrorCode::NotSPD, "marginal covariance is singular");
    alpha = llt.solve(y);
  }

  double logpdf(const Vector& y) const {
    return -0.5 * (static_cast<double>(y.size()) * kLog2Pi + logdet + y.dot(alpha));
  }

  // L^{-1} X
  Matrix whiten(const Matrix& X) const { return llt.matrixL().solve(X); }
};

}  // namespace

double linear_gaussian_evidence(const Matrix& X, const Vector& y, const Vector& v, double noise_var) {
  check_xy(X, y);
  if (v.size() != X.cols()) fail(ErrorCode::DimensionMismatch, "one prior variance per column required");
  return MarginalCov(X, y, v, noise_var).logpdf(y);
}

ArdFit fit_ard(const Matrix& X, const Vector& y, const ArdOptions& opts) {
  check_xy(X, y);
  const Eigen::Index V = X.cols();
  const double T = static_cast<double>(X.rows());
  const double vy = y.squaredNorm() > 0 ? y.squaredNorm() / T : 1.0;
  const double noise_floor = 1e-12 * vy;
  ArdFit fit;
  fit.variances = Vector::Constant(V, vy / std::max(X.squaredNorm() / T, 1e-300));
  fit.noise_var = opts.noise_var.value_or(0.1 * vy);

  MarginalCov cov(X, y, fit.variances, fit.noise_var);
  double ev = cov.logpdf(y);
  fit.evidence_trace.push_back(ev);
  for (int it = 0; it < opts.max_iters; ++it) {
    const Vector s = cov.whiten(X).colwise().squaredNorm().transpose();
    const Vector q = X.transpose() * cov.alpha;
    const Vector& v = fit.variances;
    const Vector m = v.cwiseProduct(q);
    const Vector gamma = v.cwiseProduct(s);
    const double resid = (y - X * m).squaredNorm();

    Vector v_fp(V), v_em(V);
    for (Eigen::Index i = 0; i < V; ++i) {
      v_fp(i) = s(i) > 0 ? std::max(v(i) * q(i) * q(i) / s(i), opts.floor) : opts.floor;
      v_em(i) = std::max(m(i) * m(i) + v(i) - v(i) * v(i) * s(i), opts.floor);
    }
    double n_fp = fit.noise_var, n_em = fit.noise_var;
    if (!opts.noise_var) {
      n_fp = std::max(resid / std::max(T - gamma.sum(), 1e-12 * T), noise_floor);
      n_em = std::max((resid + fit.noise_var * gamma.sum()) / T, noise_floor);
    }
    double ev_new = -kInf;
    std::optional<MarginalCov> next;
    try {
      next.emplace(X, y, v_fp, n_fp);
      ev_new = next->logpdf(y);
    } catch (const Error&) {
    }
    if (ev_new >= ev) {
      fit.variances = v_fp;
      fit.noise_var = n_fp;
    } else {
      ++fit.fallback_steps;
      next.emplace(X, y, v_em, n_em);
      ev_new = next->logpdf(y);
      fit.variances = v_em;
      fit.noise_var = n_em;
    }
    cov = std::move(*next);
    fit.evidence_trace.push_back(ev_new);
    const double change = ev_new - ev;
    ev = ev_new;
    if (std::abs(change) <= opts.tol * std::max(1.0, std::abs(ev))) {
      fit.converged = true;
      break;
    }
  }
  fit.w = fit.variances.cwiseProduct(X.transpose() * cov.alpha);
  return fit;
}

Diagonal drd_covariance(const Vector& u) {
  if (!u.allFinite()) fail(ErrorCode::BadSpec, "log-variances must be finite");
  return Diagonal{u.array().exp().matrix()};
}

namespace {

// Negative log posterior of u for fixed hyperparameters, with the GP prior
// whitened as u = b + L_K z.
class DrdProblem {
 public:
  DrdProblem(const Matrix& X, const Vector& y, const Matrix& points, const DrdHyper& h)
      : X_(X), y_(y), hyper_(h),
        kchol_(cov_cholesky(SEKernel::with_default_jitter(points, h.rho, h.length), points.rows())) {}

  const CholeskyFactor& kernel() const { return kchol_; }
  const DrdHyper& hyper() const { return hyper_; }

  Vector to_u(const Vector& z) const { return (kchol_.L * z).array() + hyper_.b; }
  Vector to_z(const Vector& u) const { return kchol_.solve_lower(Matrix((u.array() - hyper_.b).matrix())); }

  double prior_constant() const {
    return 0.5 * (static_cast<double>(X_.cols()) * kLog2Pi + kchol_.logdet);
  }

  // Value (and data-term gradient w.r.t. u) at u.
  double data_term(const Vector& u, Vector* grad_u) const {
    const Vector v = u.array().exp();
    MarginalCov cov(X_, y_, v, hyper_.noise_var);
    if (grad_u) {
      const Vector s = cov.whiten(X_).colwise().squaredNorm().transpose();
      const Vector q = X_.transpose() * cov.alpha;
      *grad_u = 0.5 * v.array() * (s.array() - q.array().square());
    }
    return -cov.logpdf(y_);
  }

  double value_z(const Vector& z, Vector* grad_z) const {
    Vector gu;
    const double f = data_term(to_u(z), grad_z ? &gu : nullptr);
    if (grad_z) *grad_z = kchol_.L.transpose() * gu + z;
    return f + 0.5 * z.squaredNorm() + prior_constant();
  }

  // Laplace log evidence at a MAP point u with the Fisher (Gauss-Newton)
  // curvature of the data term.
  double laplace_log_evidence(const Vector& u, double neg_log_post) const {
    const Vector v = u.array().exp();
    MarginalCov cov(X_, y_, v, hyper_.noise_var);
    const Matrix B = cov.whiten(X_);
    const Matrix G = B.transpose() * B;
    Matrix Hd = 0.5 * (v * v.transpose()).cwiseProduct(G.cwiseProduct(G));
    const auto L = kchol_.L.triangularView<Eigen::Lower>();
    const Matrix HL = Hd * L;
    Matrix A = L.transpose() * HL;
    A.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(symmetrize(A));
    if (llt.info() != Eigen::Success) fail(ErrorCode::NotSPD, "Laplace curvature is not positive definite");
    const double logdet_a = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    // log|H| = -log|K| + log|I + L^T Hd L|
    const double logdet_h = -kchol_.logdet + logdet_a;
    return -neg_log_post + 0.5 * static_cast<double>(u.size()) * kLog2Pi - 0.5 * logdet_h;
  }

 private:
  const Matrix& X_;
  const Vector& y_;
  DrdHyper hyper_;
  CholeskyFactor kchol_;
};

}  // namespace

DrdObjective drd_neg_log_posterior(const Vector& u, const DrdHyper& hyper, const Matrix& X, const Vector& y,
                                   const Matrix& points) {
  check_xy(X, y);
  if (u.size() != X.cols() || points.rows() != X.cols())
    fail(ErrorCode::DimensionMismatch, "u and points need one entry per column of X");
  if (!(hyper.noise_var > 0)) fail(ErrorCode::BadSpec, "noise variance must be positive");
  const DrdProblem prob(X, y, points, hyper);
  DrdObjective out;
  Vector gu;
  const double data = prob.data_term(u, &gu);
  const Vector d = (u.array() - hyper.b).matrix();
  const Vector kd = prob.kernel().solve(d);
  out.value = data + 0.5 * d.dot(kd) + prob.prior_constant();
  out.grad = gu + kd;
  return out;
}

DrdModel fit_drd(const Matrix& X, const Vector& y, const Matrix& points, const DrdOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  check_xy(X, y);
  if (points.rows() != X.cols()) fail(ErrorCode::DimensionMismatch, "one point per column of X required");
  const Eigen::Index V = X.cols();
  double extent = 0.0;
  for (Eigen::Index a = 0; a < points.cols(); ++a) extent = std::max(extent, points.col(a).maxCoeff() - points.col(a).minCoeff());
  const double lmax = std::max(opts.length_max.value_or(extent), opts.length_min);
  const double vy = y.squaredNorm() > 0 ? y.squaredNorm() / static_cast<double>(y.size()) : 1.0;

  const RidgeFit ridge = fit_ridge(X, y);
  const double b0 = std::log(std::max(ridge.w.squaredNorm() / static_cast<double>(V), 1e-300));
  const double l0 = std::clamp(extent / 50.0, opts.length_min, lmax);
  Vector p0(4);
  p0 << b0, 0.0, std::log(l0), std::log(ridge.noise_var);

  auto hyper_of = [](const Vector& p) { return DrdHyper{p(0), std::exp(p(1)), std::exp(p(2)), std::exp(p(3))}; };
  LbfgsOptions inner;
  inner.max_iters = opts.inner_iters;

  // Warm start: every inner solve begins at the MAP u of the best outer point.
  Vector best_u = Vector::Constant(V, b0);
  double best_value = kInf;
  auto outer = [&](const Vector& p) {
    const DrdProblem prob(X, y, points, hyper_of(p));
    const OptimResult r = lbfgs_minimize([&](const Vector& z, Vector* g) { return prob.value_z(z, g); },
                                         prob.to_z(best_u), inner);
    const Vector u = prob.to_u(r.x);
    const double f = -prob.laplace_log_evidence(u, r.f);
    if (f < best_value) {
      best_value = f;
      best_u = u;
    }
    return f;
  };

  PatternSearchOptions ps;
  ps.max_evals = opts.outer_evals;
  ps.min_step = 1e-2;
  ps.initial_step = Vector(4);
  ps.initial_step << 1.0, 1.0, 0.5, 0.5;
  ps.lower = Vector(4);
  ps.upper = Vector(4);
  ps.lower << b0 - 15.0, std::log(opts.rho_min), std::log(opts.length_min), std::log(1e-6 * vy);
  ps.upper << b0 + 15.0, std::log(opts.rho_max), std::log(lmax), std::log(2.0 * vy);

  DrdModel model;
  model.points = points;
  FitReport& rep = model.report;
  rep.model = ModelTag::Drd;
  rep.seed = opts.seed;
  OptimResult res;
  try {
    res = pattern_search_minimize(outer, p0, ps);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SolverFailure) throw;
    model.flagged = true;
    res.x = p0;
    res.message = e.what();
  }
  for (double f : res.trace) rep.record(f);
  if (rep.objective_trace.empty()) rep.record(kInf);
  rep.converged = res.converged;
  rep.message = res.message;

  model.hyper = hyper_of(res.x);
  const DrdProblem prob(X, y, points, model.hyper);
  LbfgsOptions final_opts = inner;
  final_opts.max_iters = 2 * opts.inner_iters;
  const OptimResult r = lbfgs_minimize([&](const Vector& z, Vector* g) { return prob.value_z(z, g); },
                                       prob.to_z(best_u), final_opts);
  model.inner_trace = r.trace;
  model.u = prob.to_u(r.x);
  model.log_evidence = prob.laplace_log_evidence(model.u, r.f);
  const Vector v = model.u.array().exp();
  MarginalCov cov(X, y, v, model.hyper.noise_var);
  model.w = v.cwiseProduct(X.transpose() * cov.alpha);
  const Vector s = cov.whiten(X).colwise().squaredNorm().transpose();
  model.posterior_var = v.array() - v.array().square() * s.array();
  if (!model.w.allFinite()) model.flagged = true;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return model;
}

Vector drd_predict(const DrdModel& model, const Matrix& X_new) {
  if (X_new.cols() != model.w.size()) fail(ErrorCode::DimensionMismatch, "X_new has the wrong number of columns");
  return X_new * model.w;
}

Vector drd_classify(const DrdModel& model, const Matrix& X_new) {
  const Vector yhat = drd_predict(model, X_new);
  return yhat.unaryExpr([](double v) { return v < 0 ? -1.0 : 1.0; });
}

}  // namespace neuropgm
