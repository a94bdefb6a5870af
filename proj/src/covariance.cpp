#include "neuropgm/covariance.hpp"

#include <cmath>
#include <sstream>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Matrix se_kernel_matrix(const SEKernel& k, bool with_jitter) {
  const Eigen::Index n = k.points.rows();
  Matrix K(n, n);
  const double inv = 1.0 / (2.0 * k.length_scale * k.length_scale);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = k.magnitude + (with_jitter ? k.jitter : 0.0);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d2 = (k.points.row(i) - k.points.row(j)).squaredNorm();
      K(i, j) = K(j, i) = k.magnitude * std::exp(-d2 * inv);
    }
  }
  return K;
}

void require_dim(const CovarianceSpec& spec, Eigen::Index n) {
  if (auto fixed = fixed_dimension(spec); fixed && *fixed != n) {
    std::ostringstream os;
    os << cov_family_name(spec) << " has dimension " << *fixed << ", requested " << n;
    fail(ErrorCode::DimensionMismatch, os.str());
  }
}

}  // namespace

SEKernel SEKernel::with_default_jitter(Matrix points, double magnitude, double length_scale) {
  return SEKernel{std::move(points), magnitude, length_scale, 1e-8 * magnitude};
}

std::string cov_family_name(const CovarianceSpec& spec) {
  return std::visit(overloaded{
                        [](const ScaledIdentity&) { return std::string("scaled_identity"); },
                        [](const Diagonal&) { return std::string("diagonal"); },
                        [](const AR1&) { return std::string("ar1"); },
                        [](const DenseSPD&) { return std::string("dense"); },
                        [](const SEKernel&) { return std::string("se_kernel"); },
                    },
                    spec);
}

void validate(const CovarianceSpec& spec) {
  std::visit(overloaded{
                 [](const ScaledIdentity& s) {
                   if (!(s.variance > 0) || !std::isfinite(s.variance))
                     fail(ErrorCode::BadSpec, "scaled identity needs variance > 0");
                 },
                 [](const Diagonal& s) {
                   if (s.d.size() == 0 || !s.d.allFinite() || !(s.d.minCoeff() > 0))
                     fail(ErrorCode::BadSpec, "diagonal covariance needs positive entries");
                 },
                 [](const AR1& s) {
                   if (!(s.variance > 0) || !std::isfinite(s.variance))
                     fail(ErrorCode::BadSpec, "AR(1) needs variance > 0");
                   if (!(std::abs(s.phi) < 1.0)) fail(ErrorCode::BadSpec, "AR(1) needs |phi| < 1");
                 },
                 [](const DenseSPD& s) { (void)cholesky_logdet(s.A); },
                 [](const SEKernel& s) {
                   if (!(s.magnitude > 0) || !(s.length_scale > 0) || !(s.jitter >= 0))
                     fail(ErrorCode::BadSpec, "SE kernel needs magnitude > 0, length > 0, jitter >= 0");
                   if (s.points.rows() == 0 || !s.points.allFinite())
                     fail(ErrorCode::BadSpec, "SE kernel needs finite points");
                 },
             },
             spec);
}

std::optional<Eigen::Index> fixed_dimension(const CovarianceSpec& spec) {
  return std::visit(overloaded{
                        [](const ScaledIdentity&) -> std::optional<Eigen::Index> { return std::nullopt; },
                        [](const AR1&) -> std::optional<Eigen::Index> { return std::nullopt; },
                        [](const Diagonal& s) -> std::optional<Eigen::Index> { return s.d.size(); },
                        [](const DenseSPD& s) -> std::optional<Eigen::Index> { return s.A.rows(); },
                        [](const SEKernel& s) -> std::optional<Eigen::Index> { return s.points.rows(); },
                    },
                    spec);
}

Matrix cov_materialize(const CovarianceSpec& spec, Eigen::Index n) {
  require_dim(spec, n);
  return std::visit(overloaded{
                        [n](const ScaledIdentity& s) -> Matrix {
                          return s.variance * Matrix::Identity(n, n);
                        },
                        [](const Diagonal& s) -> Matrix { return s.d.asDiagonal(); },
                        [n](const AR1& s) -> Matrix {
                          Matrix A(n, n);
                          for (Eigen::Index i = 0; i < n; ++i) {
                            A(i, i) = s.variance;
                            double p = s.variance;
                            for (Eigen::Index j = i + 1; j < n; ++j) {
                              p *= s.phi;
                              A(i, j) = A(j, i) = p;
                            }
                          }
                          return A;
                        },
                        [](const DenseSPD& s) -> Matrix { return symmetrize(s.A); },
                        [](const SEKernel& s) -> Matrix { return se_kernel_matrix(s, true); },
                    },
                    spec);
}

CholeskyFactor cov_cholesky(const CovarianceSpec& spec, Eigen::Index n) {
  if (const auto* s = std::get_if<ScaledIdentity>(&spec)) {
    CholeskyFactor f;
    f.L = std::sqrt(s->variance) * Matrix::Identity(n, n);
    f.logdet = static_cast<double>(n) * std::log(s->variance);
    return f;
  }
  if (const auto* s = std::get_if<Diagonal>(&spec)) {
    require_dim(spec, n);
    if (!(s->d.minCoeff() > 0)) fail(ErrorCode::NotSPD, "diagonal covariance has a non-positive entry");
    CholeskyFactor f;
    f.L = s->d.cwiseSqrt().asDiagonal();
    f.logdet = s->d.array().log().sum();
    return f;
  }
  return cholesky_logdet(cov_materialize(spec, n));
}

Eigen::Index cov_param_count(const CovarianceSpec& spec) {
  return std::visit(overloaded{
                        [](const ScaledIdentity&) -> Eigen::Index { return 1; },
                        [](const Diagonal& s) -> Eigen::Index { return s.d.size(); },
                        [](const AR1&) -> Eigen::Index { return 2; },
                        [](const DenseSPD& s) -> Eigen::Index { return s.A.rows() * (s.A.rows() + 1) / 2; },
                        [](const SEKernel&) -> Eigen::Index { return 2; },
                    },
                    spec);
}

Vector cov_pack(const CovarianceSpec& spec) {
  return std::visit(overloaded{
                        [](const ScaledIdentity& s) -> Vector {
                          return Vector::Constant(1, std::log(s.variance));
                        },
                        [](const Diagonal& s) -> Vector { return s.d.array().log(); },
                        [](const AR1& s) -> Vector {
                          Vector t(2);
                          t << std::log(s.variance), std::atanh(s.phi);
                          return t;
                        },
                        [](const DenseSPD& s) -> Vector {
                          const Matrix L = cholesky_logdet(s.A).L;
                          const Eigen::Index n = L.rows();
                          Vector t(n * (n + 1) / 2);
                          Eigen::Index p = 0;
                          for (Eigen::Index i = 0; i < n; ++i)
                            for (Eigen::Index j = 0; j <= i; ++j)
                              t(p++) = (i == j) ? std::log(L(i, i)) : L(i, j);
                          return t;
                        },
                        [](const SEKernel& s) -> Vector {
                          Vector t(2);
                          t << std::log(s.magnitude), std::log(s.length_scale);
                          return t;
                        },
                    },
                    spec);
}

CovarianceSpec cov_unpack(const CovarianceSpec& like, const Vector& theta) {
  if (theta.size() != cov_param_count(like)) {
    fail(ErrorCode::DimensionMismatch, "parameter vector length does not match covariance family");
  }
  return std::visit(overloaded{
                        [&](const ScaledIdentity&) -> CovarianceSpec {
                          return ScaledIdentity{std::exp(theta(0))};
                        },
                        [&](const Diagonal&) -> CovarianceSpec { return Diagonal{theta.array().exp()}; },
                        [&](const AR1&) -> CovarianceSpec {
                          return AR1{std::exp(theta(0)), std::tanh(theta(1))};
                        },
                        [&](const DenseSPD& s) -> CovarianceSpec {
                          const Eigen::Index n = s.A.rows();
                          Matrix L = Matrix::Zero(n, n);
                          Eigen::Index p = 0;
                          for (Eigen::Index i = 0; i < n; ++i)
                            for (Eigen::Index j = 0; j <= i; ++j)
                              L(i, j) = (i == j) ? std::exp(theta(p++)) : theta(p++);
                          return DenseSPD{L * L.transpose()};
                        },
                        [&](const SEKernel& s) -> CovarianceSpec {
                          return SEKernel{s.points, std::exp(theta(0)), std::exp(theta(1)), s.jitter};
                        },
                    },
                    like);
}

Vector cov_param_gradient(const CovarianceSpec& spec, Eigen::Index n, const Matrix& G) {
  require_dim(spec, n);
  if (G.rows() != n || G.cols() != n) fail(ErrorCode::DimensionMismatch, "gradient matrix shape");
  return std::visit(
      overloaded{
          [&](const ScaledIdentity& s) -> Vector {
            return Vector::Constant(1, s.variance * G.trace());
          },
          [&](const Diagonal& s) -> Vector { return s.d.cwiseProduct(G.diagonal()); },
          [&](const AR1& s) -> Vector {
            Vector g = Vector::Zero(2);
            // d/dlog(var) = sum G .* Sigma ; d/datanh(phi) via lag-wise sums
            const double dphi_deta = 1.0 - s.phi * s.phi;
            double pow_k = 1.0;  // phi^k
            for (Eigen::Index k = 0; k < n; ++k) {
              double lag_sum = 0.0;
              for (Eigen::Index i = k; i < n; ++i) lag_sum += G(i, i - k) + (k > 0 ? G(i - k, i) : 0.0);
              g(0) += s.variance * pow_k * lag_sum;
              if (k > 0) {
                const double dpow = static_cast<double>(k) * std::pow(s.phi, static_cast<double>(k - 1));
                g(1) += s.variance * dpow * dphi_deta * lag_sum;
              }
              pow_k *= s.phi;
            }
            return g;
          },
          [&](const DenseSPD& s) -> Vector {
            const Matrix L = cholesky_logdet(s.A).L;
            const Matrix dL = 2.0 * symmetrize(G) * L;
            Vector g(n * (n + 1) / 2);
            Eigen::Index p = 0;
            for (Eigen::Index i = 0; i < n; ++i)
              for (Eigen::Index j = 0; j <= i; ++j)
                g(p++) = (i == j) ? dL(i, i) * L(i, i) : dL(i, j);
            return g;
          },
          [&](const SEKernel& s) -> Vector {
            const Matrix K = se_kernel_matrix(s, false);
            Vector g = Vector::Zero(2);
            g(0) = (G.array() * K.array()).sum();
            const double inv_l2 = 1.0 / (s.length_scale * s.length_scale);
            for (Eigen::Index i = 0; i < n; ++i)
              for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double d2 = (s.points.row(i) - s.points.row(j)).squaredNorm();
                g(1) += G(i, j) * K(i, j) * d2 * inv_l2;
              }
            return g;
          },
      },
      spec);
}

CovarianceSpec cov_scaled(const CovarianceSpec& spec, double factor) {
  return std::visit(overloaded{
                        [&](const ScaledIdentity& s) -> CovarianceSpec {
                          return ScaledIdentity{s.variance * factor};
                        },
                        [&](const Diagonal& s) -> CovarianceSpec { return Diagonal{s.d * factor}; },
                        [&](const AR1& s) -> CovarianceSpec { return AR1{s.variance * factor, s.phi}; },
                        [&](const DenseSPD& s) -> CovarianceSpec { return DenseSPD{s.A * factor}; },
                        [&](const SEKernel& s) -> CovarianceSpec {
                          return SEKernel{s.points, s.magnitude * factor, s.length_scale, s.jitter * factor};
                        },
                    },
                    spec);
}

namespace ar1 {

double logdet(Eigen::Index n, double variance, double phi) {
  return static_cast<double>(n) * std::log(variance) +
         static_cast<double>(n - 1) * std::log1p(-phi * phi);
}

Vector precision_apply(const Vector& x, double variance, double phi) {
  const Eigen::Index n = x.size();
  const double c = 1.0 / (variance * (1.0 - phi * phi));
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool interior = t > 0 && t + 1 < n;
    double v = (interior ? 1.0 + phi * phi : 1.0) * x(t);
    if (n == 1) v = (1.0 - phi * phi) * x(t);
    if (t > 0) v -= phi * x(t - 1);
    if (t + 1 < n) v -= phi * x(t + 1);
    y(t) = c * v;
  }
  return y;
}

Vector precision_dphi_apply(const Vector& x, double variance, double phi) {
  const Eigen::Index n = x.size();
  if (n == 1) return Vector::Zero(1);
  const double omp = 1.0 - phi * phi;
  const double c = 1.0 / (variance * omp);
  const double dc = c * 2.0 * phi / omp;
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool interior = t > 0 && t + 1 < n;
    const double nb = (t > 0 ? x(t - 1) : 0.0) + (t + 1 < n ? x(t + 1) : 0.0);
    const double base = (interior ? 1.0 + phi * phi : 1.0) * x(t) - phi * nb;
    const double dbase = (interior ? 2.0 * phi : 0.0) * x(t) - nb;
    y(t) = dc * base + c * dbase;
  }
  return y;
}

}  // namespace ar1

}  // namespace neuropgm
