#include "neuropgm/optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_eval(const GradObjective& f, const Vector& x, Vector* g) {
  try {
    const double v = f(x, g);
    return std::isfinite(v) ? v : kInf;
  } catch (const Error&) {
    return kInf;
  }
}

Vector project(const Vector& x, const Vector& lo, const Vector& hi) {
  Vector y = x;
  if (lo.size()) y = y.cwiseMax(lo);
  if (hi.size()) y = y.cwiseMin(hi);
  return y;
}

}  // namespace

OptimResult lbfgs_minimize(const GradObjective& f, Vector x0, const LbfgsOptions& opts) {
  OptimResult res;
  const Eigen::Index n = x0.size();
  Vector g(n);
  double fx = safe_eval(f, x0, &g);
  if (!std::isfinite(fx)) fail(ErrorCode::SolverFailure, "objective not finite at the start point");
  res.trace.push_back(fx);
  Vector x = std::move(x0);
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int it = 0; it < opts.max_iters; ++it) {
    if (g.cwiseAbs().maxCoeff() <= opts.grad_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    // two-loop recursion
    Vector q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    Vector d = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(d);
      d += s_hist[i] * (alpha[i] - beta);
    }
    d = -d;
    double slope = g.dot(d);
    if (!(slope < 0)) {
      d = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double step = 1.0;
    if (s_hist.empty()) step = std::min(1.0, 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-300));

    Vector x_new, g_new(n);
    double f_new = kInf;
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      x_new = x + step * d;
      f_new = safe_eval(f, x_new, &g_new);
      if (f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      res.message = "line search failed";
      res.converged = true;  // no further descent found from here
      break;
    }
    const Vector s = x_new - x, y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double decrease = fx - f_new;
    x = std::move(x_new);
    g = g_new;
    fx = f_new;
    res.trace.push_back(fx);
    res.iterations = it + 1;
    if (decrease <= opts.rel_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      res.message = "relative decrease below tolerance";
      break;
    }
  }
  if (res.message.empty()) res.message = "iteration limit";
  res.x = std::move(x);
  res.f = fx;
  return res;
}

OptimResult trust_region_lsq(const LsqProblem& problem, Vector x0, const TrustRegionOptions& opts) {
  OptimResult res;
  Vector x = project(x0, opts.lower, opts.upper);
  LsqModel model = problem(x, true);
  if (!std::isfinite(model.cost)) fail(ErrorCode::SolverFailure, "least-squares cost not finite at start");
  res.trace.push_back(model.cost);
  double radius = opts.initial_radius;
  const Eigen::Index n = x.size();

  for (int it = 0; it < opts.max_iters; ++it) {
    // projected gradient for the stopping test
    const Vector pg = project(x - model.gradient, opts.lower, opts.upper) - x;
    if (pg.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, model.cost)) {
      res.converged = true;
      res.message = "projected gradient vanished";
      break;
    }
    // Levenberg-Marquardt multiplier search for |step| <= radius
    const Matrix& H = model.hessian;
    const double hscale = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    auto solve_step = [&](double nu) -> Vector {
      Matrix A = H;
      A.diagonal().array() += nu + 1e-12 * hscale;
      Eigen::LDLT<Matrix> ldlt(A);
      return -ldlt.solve(model.gradient);
    };
    Vector step = solve_step(0.0);
    if (!step.allFinite() || step.norm() > radius) {
      double lo = 0.0, hi = hscale;
      while (solve_step(hi).norm() > radius) hi *= 4.0;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (solve_step(mid).norm() > radius) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-10 * hi) break;
      }
      step = solve_step(hi);
    }
    const Vector x_trial = project(x + step, opts.lower, opts.upper);
    const Vector dp = x_trial - x;
    const double predicted = -(model.gradient.dot(dp) + 0.5 * dp.dot(H * dp));
    if (!(predicted > 0) || dp.norm() == 0.0) {
      radius *= 0.25;
      if (radius < 1e-12) {
        res.converged = true;
        res.message = "trust region collapsed";
        break;
      }
      continue;
    }
    LsqModel trial;
    try {
      trial = problem(x_trial, false);
    } catch (const Error&) {
      trial.cost = kInf;
    }
    const double actual = model.cost - trial.cost;
    const double ratio = std::isfinite(trial.cost) ? actual / predicted : -1.0;
    if (ratio < 0.25) radius = 0.25 * dp.norm();
    else if (ratio > 0.75 && dp.norm() >= 0.99 * radius) radius *= 2.0;
    if (ratio > 1e-4 && actual > 0) {
      x = x_trial;
      const double old_cost = model.cost;
      model = problem(x, true);
      res.trace.push_back(model.cost);
      res.iterations = it + 1;
      if (old_cost - model.cost <= opts.rel_tol * std::max(1.0, model.cost)) {
        res.converged = true;
        res.message = "relative decrease below tolerance";
        break;
      }
    } else if (radius < 1e-12) {
      res.converged = true;
      res.message = "trust region collapsed";
      break;
    }
  }
  (void)n;
  if (res.message.empty()) res.message = "iteration limit";
  res.x = std::move(x);
  res.f = model.cost;
  return res;
}

double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol,
                          int max_iters) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iters && (b - a) > tol; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return fc > fd ? c : d;
}

OptimResult pattern_search_minimize(const std::function<double(const Vector&)>& f, Vector x0,
                                    const PatternSearchOptions& opts) {
  OptimResult res;
  const Eigen::Index n = x0.size();
  Vector step = opts.initial_step.size() ? opts.initial_step : Vector::Ones(n);
  Vector x = project(x0, opts.lower, opts.upper);
  auto eval = [&](const Vector& p) {
    try {
      const double v = f(p);
      return std::isfinite(v) ? v : kInf;
    } catch (const Error&) {
      return kInf;
    }
  };
  double fx = eval(x);
  if (!std::isfinite(fx)) fail(ErrorCode::SolverFailure, "objective not finite at the start point");
  int evals = 1;
  res.trace.push_back(fx);
  while (evals < opts.max_evals) {
    if (step.maxCoeff() < opts.min_step) {
      res.converged = true;
      res.message = "step below tolerance";
      break;
    }
    bool improved = false;
    for (Eigen::Index i = 0; i < n && evals < opts.max_evals; ++i) {
      for (double sign : {1.0, -1.0}) {
        Vector p = x;
        p(i) += sign * step(i);
        p = project(p, opts.lower, opts.upper);
        if (p(i) == x(i)) continue;
        const double fp = eval(p);
        ++evals;
        if (fp < fx) {
          x = p;
          fx = fp;
          res.trace.push_back(fx);
          ++res.iterations;
          improved = true;
          break;
        }
        if (evals >= opts.max_evals) break;
      }
    }
    if (!improved) step *= 0.5;
  }
  if (res.message.empty()) res.message = "evaluation limit";
  res.x = std::move(x);
  res.f = fx;
  return res;
}

}  // namespace neuropgm
