#include "neuropgm/density.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

void require_square(const Matrix& A, Eigen::Index n, const char* what) {
  if (A.rows() != n || A.cols() != n) {
    std::ostringstream os;
    os << what << " must be " << n << "x" << n << ", got " << A.rows() << "x" << A.cols();
    fail(ErrorCode::DimensionMismatch, os.str());
  }
}

bool is_diagonal(const Matrix& A) {
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      if (i != j && A(i, j) != 0.0) return false;
  return true;
}

// One side (rows or columns) of a Kronecker sum, whitened by its second term
// and diagonalized: first = L U diag(d) U^T L^T, second = L L^T.
struct WhitenedSide {
  Matrix L;       // lower Cholesky of the second term (diagonal in the fast path)
  double logdet2 = 0.0;
  Matrix U;       // eigenvectors of the whitened first term (empty in the fast path)
  Vector d;       // eigenvalues of the whitened first term
  bool diagonal = false;

  Eigen::Index size() const { return L.rows(); }

  // U^T L^{-1} B
  Matrix whiten(const Matrix& B) const {
    if (diagonal) return L.diagonal().cwiseInverse().asDiagonal() * B;
    return U.transpose() * L.triangularView<Eigen::Lower>().solve(B);
  }
  // L^{-T} U B
  Matrix unwhiten_t(const Matrix& B) const {
    if (diagonal) return L.diagonal().cwiseInverse().asDiagonal() * B;
    return L.transpose().triangularView<Eigen::Upper>().solve(U * B);
  }
};

WhitenedSide whiten_side(const Matrix& first, const Matrix& second) {
  WhitenedSide s;
  if (is_diagonal(first) && is_diagonal(second)) {
    const Vector d2 = second.diagonal();
    if (!(d2.minCoeff() > 0)) fail(ErrorCode::NotSPD, "second covariance term has a non-positive diagonal");
    s.diagonal = true;
    s.L = d2.cwiseSqrt().asDiagonal();
    s.logdet2 = d2.array().log().sum();
    s.d = first.diagonal().cwiseQuotient(d2);
    return s;
  }
  const CholeskyFactor c = cholesky_logdet(second);
  s.L = c.L;
  s.logdet2 = c.logdet;
  const Matrix Y = c.solve_lower(first);
  const Matrix W = c.solve_lower(Matrix(Y.transpose()));
  SymEigen es = sym_eigen(W);
  s.U = std::move(es.vectors);
  s.d = std::move(es.values);
  return s;
}

struct KronCore {
  WhitenedSide row, col;
  Matrix Ehat;  // whitened, rotated residual
  Matrix w;     // 1 / (dR_i dC_j + 1)
  double value = 0.0;
};

KronCore kron_core(const Matrix& X, const Matrix& M, const Matrix& R1, const Matrix& C1,
                   const Matrix& R2, const Matrix& C2) {
  const Eigen::Index m = X.rows(), n = X.cols();
  if (M.rows() != m || M.cols() != n) fail(ErrorCode::DimensionMismatch, "mean shape differs from X");
  require_square(R1, m, "R1");
  require_square(R2, m, "R2");
  require_square(C1, n, "C1");
  require_square(C2, n, "C2");
  KronCore k;
  k.row = whiten_side(R1, R2);
  k.col = whiten_side(C1, C2);
  const Matrix E = X - M;
  k.Ehat = k.row.whiten(Matrix(k.col.whiten(Matrix(E.transpose())).transpose()));
  k.w.resize(m, n);
  double logdet = static_cast<double>(n) * k.row.logdet2 + static_cast<double>(m) * k.col.logdet2;
  double quad = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = k.row.d(i) * k.col.d(j) + 1.0;
      if (!(s > 0)) fail(ErrorCode::NotSPD, "Kronecker-sum covariance is not positive definite");
      logdet += std::log(s);
      k.w(i, j) = 1.0 / s;
      quad += k.Ehat(i, j) * k.Ehat(i, j) * k.w(i, j);
    }
  }
  k.value = -0.5 * static_cast<double>(m * n) * kLog2Pi - 0.5 * logdet - 0.5 * quad;
  return k;
}

}  // namespace

Matrix kron(const Matrix& A, const Matrix& B) {
  Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

Vector vec(const Matrix& A) { return Eigen::Map<const Vector>(A.data(), A.size()); }

double mvn_logpdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  if (x.size() != mu.size()) fail(ErrorCode::DimensionMismatch, "x and mean lengths differ");
  require_square(cov, x.size(), "covariance");
  const CholeskyFactor c = cholesky_logdet(cov);
  const Vector z = c.L.triangularView<Eigen::Lower>().solve(x - mu);
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * c.logdet - 0.5 * z.squaredNorm();
}

double mvn_logpdf(const Vector& x, const Vector& mu, const CovarianceSpec& cov) {
  if (x.size() != mu.size()) fail(ErrorCode::DimensionMismatch, "x and mean lengths differ");
  const CholeskyFactor c = cov_cholesky(cov, x.size());
  const Vector z = c.L.triangularView<Eigen::Lower>().solve(x - mu);
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * c.logdet - 0.5 * z.squaredNorm();
}

namespace {

double matnormal_from_factors(const Matrix& E, const CholeskyFactor& r, const CholeskyFactor& c) {
  const double m = static_cast<double>(E.rows()), n = static_cast<double>(E.cols());
  const Matrix Y = r.solve_lower(E);
  const Matrix Z = c.solve_lower(Matrix(Y.transpose()));
  return -0.5 * m * n * kLog2Pi - 0.5 * n * r.logdet - 0.5 * m * c.logdet - 0.5 * Z.squaredNorm();
}

void check_matnormal_shapes(const Matrix& X, const Matrix& M) {
  if (M.rows() != X.rows() || M.cols() != X.cols())
    fail(ErrorCode::DimensionMismatch, "mean shape differs from X");
}

}  // namespace

double matnormal_logpdf(const Matrix& X, const Matrix& M, const Matrix& R, const Matrix& C) {
  check_matnormal_shapes(X, M);
  require_square(R, X.rows(), "row covariance");
  require_square(C, X.cols(), "column covariance");
  return matnormal_from_factors(X - M, cholesky_logdet(R), cholesky_logdet(C));
}

double matnormal_logpdf(const Matrix& X, const Matrix& M, const CovarianceSpec& R,
                        const CovarianceSpec& C) {
  check_matnormal_shapes(X, M);
  return matnormal_from_factors(X - M, cov_cholesky(R, X.rows()), cov_cholesky(C, X.cols()));
}

MatNormalGradient matnormal_logpdf_grad(const Matrix& X, const Matrix& M, const Matrix& R,
                                        const Matrix& C) {
  check_matnormal_shapes(X, M);
  require_square(R, X.rows(), "row covariance");
  require_square(C, X.cols(), "column covariance");
  const double m = static_cast<double>(X.rows()), n = static_cast<double>(X.cols());
  const CholeskyFactor r = cholesky_logdet(R), c = cholesky_logdet(C);
  const Matrix E = X - M;
  MatNormalGradient g;
  g.value = matnormal_from_factors(E, r, c);
  const Matrix Ri = r.inverse(), Ci = c.inverse();
  const Matrix A = Ri * E * Ci;  // unvec of the precision-weighted residual
  g.dM = A;
  g.dR = symmetrize(-0.5 * n * Ri + 0.5 * A * C * A.transpose());
  g.dC = symmetrize(-0.5 * m * Ci + 0.5 * A.transpose() * R * A);
  return g;
}

double kron_sum_mvn_logpdf(const Matrix& X, const Matrix& M, const Matrix& R1, const Matrix& C1,
                           const Matrix& R2, const Matrix& C2) {
  return kron_core(X, M, R1, C1, R2, C2).value;
}

double kron_sum_mvn_logpdf(const Matrix& X, const Matrix& M, const Matrix& R1, const Matrix& C1,
                           const CovarianceSpec& R2, const CovarianceSpec& C2) {
  return kron_core(X, M, R1, C1, cov_materialize(R2, X.rows()), cov_materialize(C2, X.cols())).value;
}

KronSumGradient kron_sum_mvn_logpdf_grad(const Matrix& X, const Matrix& M, const Matrix& R1,
                                         const Matrix& C1, const Matrix& R2, const Matrix& C2) {
  const KronCore k = kron_core(X, M, R1, C1, R2, C2);
  const Eigen::Index m = X.rows(), n = X.cols();
  KronSumGradient g;
  g.value = k.value;
  const Matrix Ew = k.Ehat.cwiseProduct(k.w);
  // A = Q_R (Ehat .* w) Q_C^T with Q = L^{-T} U
  const Matrix A = k.row.unwhiten_t(Matrix(k.col.unwhiten_t(Matrix(Ew.transpose())).transpose()));
  g.dM = A;
  Vector a_r(m), b_r(m), a_c(n), b_c(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    a_r(i) = (k.col.d.transpose().array() * k.w.row(i).array()).sum();
    b_r(i) = k.w.row(i).sum();
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    a_c(j) = (k.row.d.array() * k.w.col(j).array()).sum();
    b_c(j) = k.w.col(j).sum();
  }
  const Matrix QR = k.row.unwhiten_t(Matrix::Identity(m, m));
  const Matrix QC = k.col.unwhiten_t(Matrix::Identity(n, n));
  g.dR1 = symmetrize(-0.5 * QR * a_r.asDiagonal() * QR.transpose() + 0.5 * A * C1 * A.transpose());
  g.dR2 = symmetrize(-0.5 * QR * b_r.asDiagonal() * QR.transpose() + 0.5 * A * C2 * A.transpose());
  g.dC1 = symmetrize(-0.5 * QC * a_c.asDiagonal() * QC.transpose() + 0.5 * A.transpose() * R1 * A);
  g.dC2 = symmetrize(-0.5 * QC * b_c.asDiagonal() * QC.transpose() + 0.5 * A.transpose() * R2 * A);
  return g;
}

double kron_sum_mvn_logpdf_lowrank(const Matrix& X, const Matrix& M, const Matrix& F,
                                   const Matrix& C1, const CovarianceSpec& R2, const Matrix& C2) {
  const Eigen::Index m = X.rows(), n = X.cols();
  if (M.rows() != m || M.cols() != n) fail(ErrorCode::DimensionMismatch, "mean shape differs from X");
  if (F.rows() != m) fail(ErrorCode::DimensionMismatch, "low-rank factor rows differ from X rows");
  require_square(C1, n, "C1");
  require_square(C2, n, "C2");
  const CholeskyFactor r2 = cov_cholesky(R2, m);
  const WhitenedSide col = whiten_side(C1, C2);

  // whitened low-rank row term: Ft Ft^T with Ft = L_R^{-1} F
  const Matrix Ft = r2.solve_lower(F);
  const SymEigen small = sym_eigen(Ft.transpose() * Ft);
  const double top = small.values.size() ? std::max(small.values.maxCoeff(), 0.0) : 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < small.values.size(); ++i)
    if (small.values(i) > 1e-13 * top && small.values(i) > 0) keep.push_back(i);
  const Eigen::Index k = static_cast<Eigen::Index>(keep.size());
  Matrix UK(m, k);
  Vector dK(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    dK(a) = small.values(keep[a]);
    UK.col(a) = Ft * small.vectors.col(keep[a]) / std::sqrt(dK(a));
  }

  const Matrix E = X - M;
  const Matrix Et = r2.solve_lower(Matrix(col.whiten(Matrix(E.transpose())).transpose()));  // m x n
  const Matrix EK = UK.transpose() * Et;  // k x n
  double logdet = static_cast<double>(n) * r2.logdet + static_cast<double>(m) * col.logdet2;
  double quad = Et.squaredNorm() - EK.squaredNorm();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index a = 0; a < k; ++a) {
      const double s = dK(a) * col.d(j) + 1.0;
      if (!(s > 0)) fail(ErrorCode::NotSPD, "Kronecker-sum covariance is not positive definite");
      logdet += std::log(s);
      quad += EK(a, j) * EK(a, j) / s;
    }
  }
  return -0.5 * static_cast<double>(m * n) * kLog2Pi - 0.5 * logdet - 0.5 * quad;
}

}  // namespace neuropgm
