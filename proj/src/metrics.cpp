#include "neuropgm/metrics.hpp"

#include <cmath>
#include <limits>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

void same_shape(const Matrix& A, const Matrix& B, const char* what) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    fail(ErrorCode::DimensionMismatch, std::string(what) + ": shapes differ");
}

Matrix center_rows(const Matrix& A) { return A.colwise() - A.rowwise().mean(); }

}  // namespace

Vector canonical_correlations(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.cols()) fail(ErrorCode::DimensionMismatch, "canonical_correlations: sample counts differ");
  const Matrix Qa = thin_orthonormal_basis(center_rows(A).transpose());
  const Matrix Qb = thin_orthonormal_basis(center_rows(B).transpose());
  Eigen::JacobiSVD<Matrix> svd(Qa.transpose() * Qb);
  return svd.singularValues().cwiseMin(1.0);
}

double aligned_recovery_score(const Matrix& truth, const Matrix& est) {
  same_shape(truth, est, "aligned_recovery_score");
  const Matrix Tc = center_rows(truth);
  const Matrix Ec = center_rows(est);
  Matrix aligned = Ec;
  // Identical inputs need no rotation; skipping the SVD keeps the score exactly 1.
  if (est != truth) {
    Eigen::JacobiSVD<Matrix> svd(Tc * Ec.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    aligned = svd.matrixU() * svd.matrixV().transpose() * Ec;
  }
  double s = 0.0;
  for (Eigen::Index k = 0; k < truth.rows(); ++k)
    s += pearson(Vector(Tc.row(k).transpose()), Vector(aligned.row(k).transpose()));
  return s / static_cast<double>(truth.rows());
}

std::vector<int> min_cost_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) fail(ErrorCode::BadShape, "assignment needs a square cost matrix");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials method, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double matched_center_error(const Matrix& truth, const Matrix& est) {
  same_shape(truth, est, "matched_center_error");
  const Eigen::Index K = truth.rows();
  if (K == 0) return 0.0;
  Matrix cost(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j) cost(i, j) = (truth.row(i) - est.row(j)).norm();
  const auto a = min_cost_assignment(cost);
  double s = 0.0;
  for (Eigen::Index i = 0; i < K; ++i) s += cost(i, a[i]);
  return s / static_cast<double>(K);
}

double rmse(const Matrix& A, const Matrix& B) {
  same_shape(A, B, "rmse");
  if (A.size() == 0) return 0.0;
  return std::sqrt((A - B).squaredNorm() / static_cast<double>(A.size()));
}

}  // namespace neuropgm
