#pragma once

// Linear second-order dynamics eps x'' + x' = theta x, x(0) = x0, x'(0) = 0,
// and the map Psi_eps(theta): x0 -> x(1). Also the representability test for
// that map and the RevNet fixed-point spectrum.

#include "momnet/numerics.hpp"

#include <stdexcept>
#include <utility>
#include <vector>

namespace momnet {

struct LinearDynamics {
  Matrix theta;
  double epsilon = 1.0;
};

/// Real eigenvalues could not be grouped reliably at the given tolerance.
class AmbiguousSpectrum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Psi_eps by its power series in M = theta/eps + I/(4 eps^2). Stops once the
/// terms decay geometrically and fall below tol relative to the partial sum.
/// Throws ConvergenceError if that does not happen within the budget, and
/// std::overflow_error if the terms leave the float range.
[[nodiscard]] Matrix psi_eps_series(const Matrix& theta, double eps, double tol = 1e-17);

/// Psi_eps as the top-left block of exp([[0, I], [theta/eps, -I/eps]]).
[[nodiscard]] Matrix psi_eps_block(const Matrix& theta, double eps);

/// Series when its terms stay in range, block exponential otherwise.
[[nodiscard]] Matrix psi_eps(const LinearDynamics& dyn, double tol = 1e-17);

/// True when psi_eps_series can be evaluated without overflow or heavy
/// cancellation.
[[nodiscard]] bool series_in_range(const Matrix& theta, double eps);

/// Scalar Psi_eps(mu) in closed form.
[[nodiscard]] double psi_eps_scalar(double mu, double eps);

/// G_eps(alpha) = exp(-1/(2 eps)) (cos alpha + sin alpha / (2 eps alpha)).
[[nodiscard]] double g_eps(double alpha, double eps);

/// min of G_eps over (0, 4 pi].
[[nodiscard]] double lambda_eps(double eps);

struct RepresentabilityVerdict {
  bool representable = false;
  double lambda_eps = 0.0;  // threshold used (0 for eps = 0)
  std::vector<RealEigenGroup> offending;
  bool boundary = false;    // a real eigenvalue sits within tol of the threshold
};

/// Representability of a diagonalizable D as Psi_eps of a real matrix
/// (eps = 0: as exp of a real matrix). `tol` < 0 selects the default
/// grouping tolerance. Throws AmbiguousSpectrum.
[[nodiscard]] RepresentabilityVerdict representable(const Matrix& D, double eps, double tol = -1.0);

/// alpha in (0, 1] such that alpha D is representable for eps > 0.
[[nodiscard]] double scale_to_representable(const Matrix& D, double eps);

/// J(A, B) = [[I, A], [B, I + B A]].
[[nodiscard]] Matrix revnet_jacobian(const Matrix& A, const Matrix& B);
/// [[0, A], [B, 0]].
[[nodiscard]] Matrix revnet_continuous_matrix(const Matrix& A, const Matrix& B);

struct InstabilityReport {
  bool unstable = false;        // some |lambda| >= 1 - tol with |lambda - 1| > tol
  bool hypothesis_met = false;  // A and B numerically invertible
  double spectral_radius = 0.0;
};

[[nodiscard]] InstabilityReport revnet_instability_check(const Matrix& A, const Matrix& B,
                                                         double tol = 1e-9);

/// For each eigenvalue mu of AB, the two roots of l^2 - (2 + mu) l + 1 = 0.
[[nodiscard]] std::vector<std::pair<Complex, Complex>> revnet_paired_roots(const Matrix& A,
                                                                           const Matrix& B);

/// |det m| / prod ||row_i||: 1 for orthogonal rows, 0 for singular m.
[[nodiscard]] double hadamard_ratio(const Matrix& m);

}  // namespace momnet
