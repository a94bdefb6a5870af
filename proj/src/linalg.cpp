#include "neuropgm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "neuropgm/error.hpp"

namespace neuropgm {

Matrix CholeskyFactor::solve(const Matrix& B) const {
  Matrix Y = L.triangularView<Eigen::Lower>().solve(B);
  return L.transpose().triangularView<Eigen::Upper>().solve(Y);
}

Vector CholeskyFactor::solve(const Vector& b) const {
  Vector y = L.triangularView<Eigen::Lower>().solve(b);
  return L.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix CholeskyFactor::solve_lower(const Matrix& B) const {
  return L.triangularView<Eigen::Lower>().solve(B);
}

Matrix CholeskyFactor::inverse() const {
  return solve(Matrix(Matrix::Identity(L.rows(), L.rows())));
}

Matrix symmetrize(const Matrix& A) { return 0.5 * (A + A.transpose()); }

bool all_finite(const Matrix& A) { return A.allFinite(); }

CholeskyFactor cholesky_logdet(const Matrix& A, double pivot_floor) {
  if (A.rows() != A.cols()) {
    std::ostringstream os;
    os << "cholesky of non-square " << A.rows() << "x" << A.cols() << " matrix";
    fail(ErrorCode::DimensionMismatch, os.str());
  }
  if (!A.allFinite()) fail(ErrorCode::NotSPD, "matrix has non-finite entries");
  const double scale = A.cwiseAbs().maxCoeff();
  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale, 1e-300)) {
    std::ostringstream os;
    os << "matrix not symmetric (max asymmetry " << asym << ", scale " << scale << ")";
    fail(ErrorCode::NotSPD, os.str());
  }
  const Eigen::Index n = A.rows();
  Eigen::LLT<Matrix> llt(symmetrize(A));
  if (llt.info() != Eigen::Success) fail(ErrorCode::NotSPD, "non-positive pivot");
  CholeskyFactor out;
  out.L = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = out.L(i, i);
    if (!(d > pivot_floor) || !std::isfinite(d)) {
      std::ostringstream os;
      os << "pivot " << i << " = " << d << " is not above floor " << pivot_floor;
      fail(ErrorCode::NotSPD, os.str());
    }
    logdet += std::log(d);
  }
  out.logdet = 2.0 * logdet;
  return out;
}

Matrix orthogonal_procrustes(const Matrix& A) {
  if (A.rows() < A.cols()) {
    std::ostringstream os;
    os << "procrustes needs rows >= cols, got " << A.rows() << "x" << A.cols();
    fail(ErrorCode::BadShape, os.str());
  }
  if (A.cols() == 0) return A;
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (!(s(s.size() - 1) >= 1e-12 * s(0)) || s(0) == 0.0) {
    fail(ErrorCode::RankDeficient, "procrustes target is rank deficient");
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

Matrix thin_orthonormal_basis(const Matrix& A) {
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ() * Matrix::Identity(A.rows(), A.cols());
  // fix signs so that R has a positive diagonal; keeps the basis unique
  const Matrix R = qr.matrixQR().topRows(A.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < A.cols(); ++k) {
    if (R(k, k) < 0) Q.col(k) *= -1.0;
  }
  return Q;
}

SymEigen sym_eigen(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(A));
  if (es.info() != Eigen::Success) fail(ErrorCode::NotSPD, "eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    fail(ErrorCode::DimensionMismatch, "pearson needs equal, non-empty samples");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pearson(const Vector& a, const Vector& b) {
  return pearson(std::span<const double>(a.data(), a.size()),
                 std::span<const double>(b.data(), b.size()));
}

}  // namespace neuropgm
