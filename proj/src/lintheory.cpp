#include "momnet/lintheory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace momnet {
namespace {

constexpr double kExpRange = 600.0;
constexpr double kCancelRange = 12.0;

void require_eps(double eps, const char* what) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw std::invalid_argument(std::string(what) + ": eps must be positive");
  }
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": not square");
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

Matrix series_matrix(const Matrix& theta, double eps) {
  const Eigen::Index d = theta.rows();
  return theta / eps + Matrix::Identity(d, d) / (4.0 * eps * eps);
}

}  // namespace

bool series_in_range(const Matrix& theta, double eps) {
  require_eps(eps, "series_in_range");
  // The terms sum in absolute value to at most exp(growth - half_inv), so a
  // large gap means cancellation when M has negative eigenvalues.
  const double half_inv = 0.5 / eps;
  const double growth = std::sqrt(series_matrix(theta, eps).norm());
  return half_inv < kExpRange && growth - half_inv < kCancelRange;
}

Matrix psi_eps_series(const Matrix& theta, double eps, double tol) {
  require_eps(eps, "psi_eps");
  require_square(theta, "psi_eps");
  if (!(tol > 0.0)) throw std::invalid_argument("psi_eps: tol must be positive");
  const Eigen::Index d = theta.rows();
  const Matrix M = series_matrix(theta, eps);
  const double mnorm = M.norm();
  // term_n = e^{-1/(2eps)} M^n / (2n)!, carried with its prefactor so the
  // partial sums stay near the size of the result.
  Matrix power = std::exp(-0.5 / eps) * Matrix::Identity(d, d);
  Matrix sum = Matrix::Zero(d, d);
  constexpr int kBudget = 2000;
  for (int n = 0; n < kBudget; ++n) {
    const double odd = 1.0 / (2.0 * eps * (2.0 * n + 1.0));
    const Matrix term = power * (1.0 + odd);
    sum += term;
    if (!sum.allFinite()) throw std::overflow_error("psi_eps: series left the float range");
    const double ratio = mnorm / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
    if (ratio < 0.5 && term.norm() <= tol * std::max(1.0, sum.norm())) return sum;
    power = power * M / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
  }
  throw ConvergenceError("psi_eps: series did not converge; ||theta|| too large for tol");
}

Matrix psi_eps_block(const Matrix& theta, double eps) {
  require_eps(eps, "psi_eps");
  require_square(theta, "psi_eps");
  const Eigen::Index d = theta.rows();
  if (2 * d > kMaxDimension) throw std::invalid_argument("psi_eps: dimension overflow");
  // Conjugated by diag(I, s I) so the off-diagonal blocks have similar norms;
  // the top-left block of the exponential is unchanged.
  const double s = std::max(1.0, std::sqrt(theta.norm() / eps));
  Matrix big = Matrix::Zero(2 * d, 2 * d);
  big.topRightCorner(d, d) = s * Matrix::Identity(d, d);
  big.bottomLeftCorner(d, d) = theta / (eps * s);
  big.bottomRightCorner(d, d) = -Matrix::Identity(d, d) / eps;
  return matrix_exp(big).topLeftCorner(d, d);
}

Matrix psi_eps(const LinearDynamics& dyn, double tol) {
  if (series_in_range(dyn.theta, dyn.epsilon)) return psi_eps_series(dyn.theta, dyn.epsilon, tol);
  return psi_eps_block(dyn.theta, dyn.epsilon);
}

double psi_eps_scalar(double mu, double eps) {
  require_eps(eps, "psi_eps_scalar");
  const double a = 0.5 / eps;
  const double m = mu / eps + a * a;
  if (m > 0.0) {
    const double s = std::sqrt(m);
    if (s < 1e-8) return std::exp(-a) * (1.0 + a);
    const double k = a / s;
    return 0.5 * (std::exp(s - a) * (1.0 + k) + std::exp(-s - a) * (1.0 - k));
  }
  return g_eps(std::sqrt(-m), eps);
}

double g_eps(double alpha, double eps) {
  require_eps(eps, "g_eps");
  const double a = 0.5 / eps;
  if (std::abs(alpha) < 1e-12) return std::exp(-a) * (1.0 + a);
  return std::exp(-a) * (std::cos(alpha) + a * std::sin(alpha) / alpha);
}

double lambda_eps(double eps) {
  require_eps(eps, "lambda_eps");
  const auto r = minimize_scalar([eps](double al) { return g_eps(al, eps); }, 0.0,
                                 4.0 * std::numbers::pi, 4000, 200);
  return r.value;
}

RepresentabilityVerdict representable(const Matrix& D, double eps, double tol) {
  require_square(D, "representable");
  if (eps < 0.0 || !std::isfinite(eps)) throw std::invalid_argument("representable: eps < 0");
  const Spectrum spec = eigenvalues(D, tol);
  if (spec.grouping_ambiguous()) {
    throw AmbiguousSpectrum("representable: eigenvalue grouping is ambiguous at tolerance " +
                            std::to_string(spec.tolerance));
  }
  RepresentabilityVerdict v;
  v.lambda_eps = eps == 0.0 ? 0.0 : lambda_eps(eps);
  const double t = spec.tolerance;
  for (const RealEigenGroup& g : spec.real_groups()) {
    if (eps == 0.0) {
      if (std::abs(g.value) <= t) {
        v.offending.push_back(g);  // singular: no real logarithm
      } else if (g.value < 0.0 && g.multiplicity % 2 != 0) {
        v.offending.push_back(g);
      }
      continue;
    }
    if (std::abs(g.value - v.lambda_eps) <= t) {
      v.boundary = true;
    } else if (g.value < v.lambda_eps && g.multiplicity % 2 != 0) {
      v.offending.push_back(g);
    }
  }
  v.representable = v.offending.empty();
  return v;
}

double scale_to_representable(const Matrix& D, double eps) {
  require_eps(eps, "scale_to_representable");
  require_square(D, "scale_to_representable");
  const Spectrum spec = eigenvalues(D);
  double mu_min = 0.0;
  for (const Complex& z : spec.values) {
    if (std::abs(z.imag()) <= spec.tolerance) mu_min = std::min(mu_min, z.real());
  }
  if (mu_min >= 0.0) return 1.0;
  constexpr double delta = 1e-6;
  return std::min(1.0, (lambda_eps(eps) + delta) / mu_min);
}

Matrix revnet_jacobian(const Matrix& A, const Matrix& B) {
  require_square(A, "revnet_jacobian");
  require_square(B, "revnet_jacobian");
  if (A.rows() != B.rows()) throw std::invalid_argument("revnet_jacobian: A and B sizes differ");
  const Eigen::Index d = A.rows();
  Matrix J(2 * d, 2 * d);
  J << Matrix::Identity(d, d), A, B, Matrix::Identity(d, d) + B * A;
  return J;
}

Matrix revnet_continuous_matrix(const Matrix& A, const Matrix& B) {
  require_square(A, "revnet_continuous_matrix");
  if (A.rows() != B.rows() || B.rows() != B.cols()) {
    throw std::invalid_argument("revnet_continuous_matrix: A and B sizes differ");
  }
  const Eigen::Index d = A.rows();
  Matrix K = Matrix::Zero(2 * d, 2 * d);
  K.topRightCorner(d, d) = A;
  K.bottomLeftCorner(d, d) = B;
  return K;
}

double hadamard_ratio(const Matrix& m) {
  require_square(m, "hadamard_ratio");
  double prod = 1.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double r = m.row(i).norm();
    if (r == 0.0) return 0.0;
    prod *= r;
  }
  return std::abs(m.partialPivLu().determinant()) / prod;
}

InstabilityReport revnet_instability_check(const Matrix& A, const Matrix& B, double tol) {
  const Matrix J = revnet_jacobian(A, B);
  InstabilityReport r;
  r.hypothesis_met = hadamard_ratio(A) > 1e-12 && hadamard_ratio(B) > 1e-12;
  const Spectrum spec = eigenvalues(J);
  r.spectral_radius = spec.spectral_radius();
  for (const Complex& z : spec.values) {
    if (std::abs(z) >= 1.0 - tol && std::abs(z - 1.0) > tol) r.unstable = true;
  }
  return r;
}

std::vector<std::pair<Complex, Complex>> revnet_paired_roots(const Matrix& A, const Matrix& B) {
  const Spectrum mus = eigenvalues(Matrix(A * B));
  std::vector<std::pair<Complex, Complex>> out;
  for (const Complex& mu : mus.values) {
    const Complex b = 2.0 + mu;
    const Complex disc = std::sqrt(b * b - 4.0);
    out.emplace_back((b + disc) / 2.0, (b - disc) / 2.0);
  }
  return out;
}

}  // namespace momnet
