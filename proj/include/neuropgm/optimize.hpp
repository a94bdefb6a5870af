#pragma once

#include <functional>
#include <string>
#include <vector>

#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// Outcome of an iterative minimizer. `trace` holds the objective at the
/// start point followed by every accepted iterate, so it is non-increasing.
struct OptimResult {
  Vector x;
  double f = 0.0;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Objective with optional gradient output. Throwing neuropgm::Error (e.g.
/// NotSPD at an infeasible trial point) is treated as +infinity during line
/// searches.
using GradObjective = std::function<double(const Vector& x, Vector* grad)>;

struct LbfgsOptions {
  int max_iters = 200;
  int memory = 10;
  double grad_tol = 1e-6;  // on max |g| relative to max(1, |f|)
  double rel_tol = 1e-10;  // relative decrease per iteration
  int max_backtracks = 40;
};

OptimResult lbfgs_minimize(const GradObjective& f, Vector x0, const LbfgsOptions& opts = {});

/// Gauss-Newton view of 0.5 * |r(x)|^2: cost, J^T r and J^T J.
struct LsqModel {
  double cost = 0.0;
  Vector gradient;
  Matrix hessian;
};
using LsqProblem = std::function<LsqModel(const Vector& x, bool with_derivatives)>;

struct TrustRegionOptions {
  double initial_radius = 1.0;
  int max_iters = 50;
  double rel_tol = 1e-10;
  Vector lower;  // empty = unbounded
  Vector upper;
};

/// Bounded trust-region Gauss-Newton. The subproblem is solved by a
/// Levenberg-Marquardt multiplier search; trial points are projected onto the
/// box and judged by actual vs predicted reduction, so accepted iterates never
/// increase the cost.
OptimResult trust_region_lsq(const LsqProblem& problem, Vector x0, const TrustRegionOptions& opts = {});

/// Maximizes a unimodal function on [lo, hi] by golden-section search.
double golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                          double tol = 1e-8, int max_iters = 200);

struct PatternSearchOptions {
  int max_evals = 60;
  double min_step = 1e-3;
  Vector initial_step;
  Vector lower;
  Vector upper;
};

/// Compass search minimizer (derivative free, only improving moves accepted).
OptimResult pattern_search_minimize(const std::function<double(const Vector&)>& f, Vector x0,
                                    const PatternSearchOptions& opts);

}  // namespace neuropgm
