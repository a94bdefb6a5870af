#include "neuropgm/htfa.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "neuropgm/error.hpp"
#include "neuropgm/optimize.hpp"
#include "neuropgm/parallel.hpp"
#include "neuropgm/random.hpp"

namespace neuropgm {

VoxelGrid VoxelGrid::box(int nx, int ny, int nz) {
  if (nx < 1 || ny < 1 || nz < 1) fail(ErrorCode::BadSpec, "grid dimensions must be >= 1");
  VoxelGrid g;
  g.positions.resize(static_cast<Eigen::Index>(nx) * ny * nz, 3);
  Eigen::Index r = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) g.positions.row(r++) << x, y, z;
  return g;
}

Vector VoxelGrid::lower() const { return positions.colwise().minCoeff().transpose(); }
Vector VoxelGrid::upper() const { return positions.colwise().maxCoeff().transpose(); }
Vector VoxelGrid::centroid() const { return positions.colwise().mean().transpose(); }

double VoxelGrid::extent() const {
  if (positions.rows() == 0) return 0.0;
  return (upper() - lower()).maxCoeff();
}

void VoxelGrid::validate() const {
  if (positions.rows() == 0 || positions.cols() != 3) fail(ErrorCode::BadSpec, "grid must be a non-empty V x 3 matrix");
  if (!positions.allFinite()) fail(ErrorCode::BadSpec, "grid positions must be finite");
  std::vector<std::array<double, 3>> pts(positions.rows());
  for (Eigen::Index v = 0; v < positions.rows(); ++v) pts[v] = {positions(v, 0), positions(v, 1), positions(v, 2)};
  std::sort(pts.begin(), pts.end());
  if (std::adjacent_find(pts.begin(), pts.end()) != pts.end())
    fail(ErrorCode::BadSpec, "grid contains duplicate positions");
}

namespace {

void check_width(double width) {
  if (!(width > 0) || !std::isfinite(width))
    fail(ErrorCode::NonPositiveWidth, "RBF width must be positive, got " + std::to_string(width));
}

// Squared distances from every voxel (columns) to every center (rows).
Matrix squared_distances(const Matrix& centers, const Matrix& positions) {
  Matrix d2(centers.rows(), positions.rows());
  for (Eigen::Index k = 0; k < centers.rows(); ++k)
    d2.row(k) = (positions.rowwise() - centers.row(k)).rowwise().squaredNorm().transpose();
  return d2;
}

}  // namespace

Vector rbf_factor(const Vector& center, double width, const VoxelGrid& grid) {
  check_width(width);
  if (center.size() != 3) fail(ErrorCode::DimensionMismatch, "center must be a 3-vector");
  return (-(grid.positions.rowwise() - center.transpose()).rowwise().squaredNorm().array() / width).exp();
}

Matrix rbf_factors(const Matrix& centers, const Vector& widths, const VoxelGrid& grid) {
  if (centers.cols() != 3 || centers.rows() != widths.size())
    fail(ErrorCode::DimensionMismatch, "centers must be K x 3 with K widths");
  for (Eigen::Index k = 0; k < widths.size(); ++k) check_width(widths(k));
  Matrix F = squared_distances(centers, grid.positions);
  for (Eigen::Index k = 0; k < F.rows(); ++k) F.row(k) = (-F.row(k).array() / widths(k)).exp();
  return F;
}

Matrix tfa_weight_step(const Matrix& X, const Matrix& F, const WeightPrior& prior, double noise_var) {
  if (X.cols() != F.cols()) fail(ErrorCode::DimensionMismatch, "X and F disagree on the voxel count");
  if (!(prior.var > 0) || !(noise_var > 0)) fail(ErrorCode::BadSpec, "weight prior and noise variances must be positive");
  const double r = noise_var / prior.var;
  Matrix A = F * F.transpose();
  A.diagonal().array() += r;
  Matrix B = X * F.transpose();
  B.array() += r * prior.mean;
  const CholeskyFactor chol = cholesky_logdet(A);
  return chol.solve(Matrix(B.transpose())).transpose();
}

namespace {

double prior_penalty(const HtfaSubjectModel& s, const HtfaGlobalTemplate& g) {
  const CholeskyFactor chol = cholesky_logdet(s.center_cov);
  double pen = 0.0;
  for (Eigen::Index k = 0; k < s.factors(); ++k) {
    const Vector d = (s.centers.row(k) - g.centers.row(k)).transpose();
    pen += d.dot(chol.solve(d));
    const double dl = s.widths(k) - g.widths(k);
    pen += dl * dl / s.width_var;
  }
  return 0.5 * pen / s.subsample;
}

void check_subject(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& s, const HtfaGlobalTemplate& g) {
  if (X.cols() != grid.size()) fail(ErrorCode::DimensionMismatch, "data voxel count differs from the grid");
  if (s.factors() != g.factors() || s.widths.size() != s.factors() || s.weights.cols() != s.factors())
    fail(ErrorCode::DimensionMismatch, "subject and template disagree on K");
  if (s.weights.rows() != X.rows()) fail(ErrorCode::DimensionMismatch, "weights must have one row per time point");
  if (!(s.subsample > 0 && s.subsample <= 1)) fail(ErrorCode::BadSpec, "subsampling coefficient must lie in (0, 1]");
  if (!(s.noise_var > 0)) fail(ErrorCode::BadSpec, "noise variance must be positive");
}

}  // namespace

double tfa_factor_objective(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& s,
                            const HtfaGlobalTemplate& g) {
  check_subject(X, grid, s, g);
  const Matrix F = rbf_factors(s.centers, s.widths, grid);
  return 0.5 * (X - s.weights * F).squaredNorm() / s.noise_var + prior_penalty(s, g);
}

double tfa_local_objective(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& s,
                           const HtfaGlobalTemplate& g) {
  const double n = static_cast<double>(X.size());
  const double wprior = 0.5 * (s.weights.array() - s.weight_prior.mean).square().sum() / s.weight_prior.var;
  return tfa_factor_objective(X, grid, s, g) + 0.5 * n * std::log(s.noise_var) + wprior;
}

LocalStepResult tfa_local_step(const Matrix& X, const VoxelGrid& grid, const HtfaSubjectModel& subject,
                               const HtfaGlobalTemplate& global, const LocalStepOptions& opts) {
  check_subject(X, grid, subject, global);
  const Eigen::Index K = subject.factors();
  const Eigen::Index T = X.rows(), V = X.cols();

  // Subsample voxels and time points, each at rate sqrt(phi), so the data term
  // covers a fraction phi of the entries and balances the 1/phi prior scaling.
  std::vector<Eigen::Index> rows(T), cols(V);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  if (subject.subsample < 1.0) {
    Rng rng(opts.seed, "htfa/subsample/" + std::to_string(opts.subject) + "/" + std::to_string(opts.iteration));
    const double rate = std::sqrt(subject.subsample);
    auto draw = [&](std::vector<Eigen::Index>& idx, Eigen::Index minimum) {
      const auto keep = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(rate * idx.size())), minimum,
                                                 static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i + 1 < idx.size(); ++i)
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
    };
    draw(rows, 1);
    draw(cols, std::min<Eigen::Index>(V, K + 1));
  }
  const Matrix Xs = X(rows, cols);
  const Matrix Ws = subject.weights(rows, Eigen::all);
  const Matrix P = grid.positions(cols, Eigen::all);
  const Matrix WtW = Ws.transpose() * Ws;
  const double inv_g2 = 1.0 / subject.noise_var;
  const double inv_phi = 1.0 / subject.subsample;
  const CholeskyFactor cov_chol = cholesky_logdet(subject.center_cov);
  const Matrix cov_inv = cov_chol.inverse();

  const Eigen::Index n = 4 * K;
  auto unpack = [&](const Vector& x, Matrix& centers, Vector& widths) {
    centers.resize(K, 3);
    widths.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      centers.row(k) = x.segment(3 * k, 3).transpose();
      widths(k) = std::exp(x(3 * K + k));
    }
  };

  LsqProblem problem = [&](const Vector& x, bool with_derivatives) {
    Matrix centers;
    Vector widths;
    unpack(x, centers, widths);
    const Matrix d2 = squared_distances(centers, P);
    Matrix F(K, d2.cols());
    for (Eigen::Index k = 0; k < K; ++k) F.row(k) = (-d2.row(k).array() / widths(k)).exp();
    const Matrix R = Xs - Ws * F;
    LsqModel m;
    m.cost = 0.5 * inv_g2 * R.squaredNorm();
    for (Eigen::Index k = 0; k < K; ++k) {
      const Vector d = (centers.row(k) - global.centers.row(k)).transpose();
      m.cost += 0.5 * inv_phi * d.dot(cov_inv * d);
      const double dl = widths(k) - global.widths(k);
      m.cost += 0.5 * inv_phi * dl * dl / subject.width_var;
    }
    if (!with_derivatives) return m;

    // Rows of G: dF_k/d(center_k,a) for a = 0..2, then dF_k/d(log width_k).
    Matrix G(n, F.cols());
    for (Eigen::Index k = 0; k < K; ++k) {
      for (int a = 0; a < 3; ++a)
        G.row(3 * k + a) =
            (F.row(k).array() * 2.0 * (P.col(a).transpose().array() - centers(k, a)) / widths(k)).matrix();
      G.row(3 * K + k) = (F.row(k).array() * d2.row(k).array() / widths(k)).matrix();
    }
    auto owner = [&](Eigen::Index q) { return q < 3 * K ? q / 3 : q - 3 * K; };
    const Matrix RtW = R.transpose() * Ws;  // V x K
    m.gradient.resize(n);
    for (Eigen::Index q = 0; q < n; ++q) m.gradient(q) = -inv_g2 * G.row(q).dot(RtW.col(owner(q)));
    const Matrix GGt = G * G.transpose();
    m.hessian.resize(n, n);
    for (Eigen::Index q = 0; q < n; ++q)
      for (Eigen::Index r = 0; r < n; ++r) m.hessian(q, r) = inv_g2 * WtW(owner(q), owner(r)) * GGt(q, r);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Vector d = (centers.row(k) - global.centers.row(k)).transpose();
      m.gradient.segment(3 * k, 3) += inv_phi * cov_inv * d;
      m.hessian.block(3 * k, 3 * k, 3, 3) += inv_phi * cov_inv;
      const double scale = inv_phi / subject.width_var;
      const double lam = widths(k);
      m.gradient(3 * K + k) += scale * (lam - global.widths(k)) * lam;
      m.hessian(3 * K + k, 3 * K + k) += scale * lam * lam;
    }
    return m;
  };

  const double extent = std::max(grid.extent(), 1.0);
  TrustRegionOptions tr;
  tr.initial_radius = opts.initial_radius;
  tr.max_iters = opts.max_inner_iters;
  tr.lower.resize(n);
  tr.upper.resize(n);
  const Vector lo = grid.lower(), hi = grid.upper();
  for (Eigen::Index k = 0; k < K; ++k) {
    tr.lower.segment(3 * k, 3) = lo;
    tr.upper.segment(3 * k, 3) = hi;
    tr.lower(3 * K + k) = std::log(1e-3);
    tr.upper(3 * K + k) = std::log(4.0 * extent * extent);
  }
  Vector x0(n);
  for (Eigen::Index k = 0; k < K; ++k) {
    x0.segment(3 * k, 3) = subject.centers.row(k).transpose();
    x0(3 * K + k) = std::log(subject.widths(k));
  }
  // The solver projects onto the box; keep the start itself when that would
  // raise the cost.
  const double start_cost = problem(x0, false).cost;
  const OptimResult res = trust_region_lsq(problem, x0, tr);

  LocalStepResult out;
  out.subject = subject;
  out.inner_iterations = res.iterations;
  if (res.f <= start_cost) {
    unpack(res.x, out.subject.centers, out.subject.widths);
  } else {
    out.factor_step_accepted = false;
  }

  const Matrix F = rbf_factors(out.subject.centers, out.subject.widths, grid);
  out.subject.weights = tfa_weight_step(X, F, subject.weight_prior, subject.noise_var);
  const double mean_sq = X.squaredNorm() / static_cast<double>(X.size());
  const double floor = std::max(1e-12 * mean_sq, 1e-300);
  out.subject.noise_var =
      std::max((X - out.subject.weights * F).squaredNorm() / static_cast<double>(X.size()), floor);
  return out;
}

HtfaGlobalTemplate htfa_global_step(const std::vector<HtfaSubjectModel>& subjects, const HtfaGlobalTemplate& hyper) {
  if (subjects.empty()) fail(ErrorCode::BadShape, "global step needs at least one subject");
  const Eigen::Index K = hyper.factors();
  if (static_cast<Eigen::Index>(hyper.center_prior_cov.size()) != K || hyper.center_prior_mean.rows() != K ||
      hyper.width_prior_mean.size() != K || hyper.width_prior_var.size() != K)
    fail(ErrorCode::DimensionMismatch, "hyperprior arrays must have K entries");
  std::vector<Matrix> obs_prec;
  for (const auto& s : subjects) {
    if (s.factors() != K) fail(ErrorCode::DimensionMismatch, "subject and template disagree on K");
    obs_prec.push_back(cholesky_logdet(s.subsample * s.center_cov).inverse());
  }
  HtfaGlobalTemplate out = hyper;
  for (Eigen::Index k = 0; k < K; ++k) {
    const Matrix prior_prec = cholesky_logdet(hyper.center_prior_cov[k]).inverse();
    Matrix prec = prior_prec;
    Vector rhs = prior_prec * hyper.center_prior_mean.row(k).transpose();
    double wprec = 1.0 / hyper.width_prior_var(k);
    double wrhs = hyper.width_prior_mean(k) * wprec;
    for (std::size_t m = 0; m < subjects.size(); ++m) {
      prec += obs_prec[m];
      rhs += obs_prec[m] * subjects[m].centers.row(k).transpose();
      const double p = 1.0 / (subjects[m].subsample * subjects[m].width_var);
      wprec += p;
      wrhs += p * subjects[m].widths(k);
    }
    out.centers.row(k) = cholesky_logdet(prec).solve(rhs).transpose();
    out.widths(k) = wrhs / wprec;
    if (!(out.widths(k) > 0)) out.widths(k) = 1e-3;
  }
  return out;
}

double htfa_global_objective(const HtfaGlobalTemplate& g) {
  double pen = 0.0;
  for (Eigen::Index k = 0; k < g.factors(); ++k) {
    const Vector d = (g.centers.row(k) - g.center_prior_mean.row(k)).transpose();
    pen += d.dot(cholesky_logdet(g.center_prior_cov[k]).solve(d));
    const double dl = g.widths(k) - g.width_prior_mean(k);
    pen += dl * dl / g.width_prior_var(k);
  }
  return 0.5 * pen;
}

namespace {

// Farthest-point sampling among the highest-variance voxels.
Matrix initial_centers(const std::vector<Matrix>& datasets, const VoxelGrid& grid, int K, double fraction) {
  const Eigen::Index V = grid.size();
  Vector var = Vector::Zero(V);
  for (const auto& X : datasets) {
    const Matrix C = X.rowwise() - X.colwise().mean();
    var += C.colwise().squaredNorm().transpose() / static_cast<double>(std::max<Eigen::Index>(X.rows(), 1));
  }
  std::vector<Eigen::Index> order(V);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return var(a) > var(b); });
  const auto n_cand = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(fraction * V)), K, V);
  order.resize(n_cand);

  Matrix centers(K, 3);
  centers.row(0) = grid.positions.row(order[0]);
  Vector mind = Vector::Constant(n_cand, std::numeric_limits<double>::infinity());
  for (int k = 1; k < K; ++k) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 0; i < n_cand; ++i) {
      mind(i) = std::min(mind(i), (grid.positions.row(order[i]) - centers.row(k - 1)).squaredNorm());
      if (mind(i) > mind(best)) best = i;
    }
    centers.row(k) = grid.positions.row(order[best]);
  }
  return centers;
}

double total_objective(const std::vector<Matrix>& datasets, const VoxelGrid& grid,
                       const std::vector<HtfaSubjectModel>& subjects, const HtfaGlobalTemplate& g) {
  double f = htfa_global_objective(g);
  for (std::size_t m = 0; m < subjects.size(); ++m) f += tfa_local_objective(datasets[m], grid, subjects[m], g);
  return f;
}

}  // namespace

HtfaFit fit_htfa(const std::vector<Matrix>& datasets, const VoxelGrid& grid, int factors, const HtfaOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  grid.validate();
  if (datasets.empty()) fail(ErrorCode::BadShape, "no datasets");
  if (factors < 1 || factors > grid.size()) fail(ErrorCode::BadSpec, "factor count must lie in [1, V]");
  for (const auto& X : datasets) {
    if (X.cols() != grid.size()) fail(ErrorCode::DimensionMismatch, "dataset voxel count differs from the grid");
    if (X.rows() < 1 || !X.allFinite()) fail(ErrorCode::BadShape, "datasets must be non-empty and finite");
  }
  if (!(opts.subsample > 0 && opts.subsample <= 1)) fail(ErrorCode::BadSpec, "subsample must lie in (0, 1]");
  const Eigen::Index K = factors;
  const double extent = std::max(grid.extent(), 1.0);

  HtfaFit fit;
  HtfaGlobalTemplate& g = fit.global;
  g.centers = initial_centers(datasets, grid, factors, opts.candidate_fraction);
  const double w0 = std::pow(extent / static_cast<double>(K), 2);
  g.widths = Vector::Constant(K, w0);
  g.center_prior_mean = grid.centroid().transpose().replicate(K, 1);
  g.center_prior_cov.assign(K, extent * extent * Matrix::Identity(3, 3));
  g.width_prior_mean = Vector::Constant(K, w0);
  g.width_prior_var = Vector::Constant(K, w0 * w0);

  const Matrix F0 = rbf_factors(g.centers, g.widths, grid);
  for (const auto& X : datasets) {
    HtfaSubjectModel s;
    s.centers = g.centers;
    s.widths = g.widths;
    s.center_cov = opts.subject_center_var * Matrix::Identity(3, 3);
    s.width_var = opts.subject_width_var;
    s.subsample = opts.subsample;
    s.weight_prior = opts.weight_prior;
    const double v0 = std::max(X.squaredNorm() / static_cast<double>(X.size()), 1e-300);
    s.weights = tfa_weight_step(X, F0, s.weight_prior, v0);
    s.noise_var = std::max((X - s.weights * F0).squaredNorm() / static_cast<double>(X.size()), 1e-12 * v0);
    fit.subjects.push_back(std::move(s));
  }

  FitReport& rep = fit.report;
  rep.model = ModelTag::Htfa;
  rep.seed = opts.seed;
  double prev = total_objective(datasets, grid, fit.subjects, g);
  rep.record(prev);
  int rejected = 0;
  for (int it = 0; it < opts.max_iters; ++it) {
    std::vector<LocalStepResult> steps(datasets.size());
    parallel_for(datasets.size(), [&](std::size_t m) {
      LocalStepOptions lo;
      lo.initial_radius = opts.initial_radius;
      lo.max_inner_iters = opts.max_inner_iters;
      lo.seed = opts.seed;
      lo.iteration = it;
      lo.subject = static_cast<int>(m);
      steps[m] = tfa_local_step(datasets[m], grid, fit.subjects[m], g, lo);
    });
    for (std::size_t m = 0; m < steps.size(); ++m) {
      if (!steps[m].factor_step_accepted) ++rejected;
      fit.subjects[m] = std::move(steps[m].subject);
    }
    g = htfa_global_step(fit.subjects, g);
    const double cur = total_objective(datasets, grid, fit.subjects, g);
    rep.record(cur);
    if (std::abs(prev - cur) <= opts.tol * std::max(1.0, std::abs(prev))) {
      rep.converged = true;
      break;
    }
    prev = cur;
  }
  rep.message = rep.converged ? "converged" : "iteration limit";
  if (rejected > 0) rep.message += "; " + std::to_string(rejected) + " local factor steps rejected";
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return fit;
}

Matrix node_connectivity(const Matrix& weights) {
  const Eigen::Index K = weights.cols();
  Matrix C = Matrix::Identity(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = i + 1; j < K; ++j) C(i, j) = C(j, i) = pearson(Vector(weights.col(i)), Vector(weights.col(j)));
  return C;
}

Matrix isfc(const std::vector<Matrix>& weights) {
  if (weights.empty()) fail(ErrorCode::BadShape, "isfc needs at least one subject");
  if (weights.size() == 1) return node_connectivity(weights[0]);
  const Eigen::Index T = weights[0].rows(), K = weights[0].cols();
  Matrix total = Matrix::Zero(T, K);
  for (const auto& W : weights) {
    if (W.rows() != T || W.cols() != K) fail(ErrorCode::DimensionMismatch, "all weight matrices must share T and K");
    total += W;
  }
  Matrix acc = Matrix::Zero(K, K);
  const double others = static_cast<double>(weights.size() - 1);
  for (const auto& W : weights) {
    const Matrix mean_other = (total - W) / others;
    for (Eigen::Index i = 0; i < K; ++i)
      for (Eigen::Index j = 0; j < K; ++j) acc(i, j) += pearson(Vector(W.col(i)), Vector(mean_other.col(j)));
  }
  acc /= static_cast<double>(weights.size());
  Matrix C = symmetrize(acc);
  C.diagonal().setOnes();
  return C;
}

}  // namespace neuropgm
