#pragma once

// Dense linear algebra for small (d <= 64) problems: eigenvalues through
// balancing + Hessenberg reduction + shifted QR, the matrix exponential by
// scaling and squaring, and bracketed scalar minimization.

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace momnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Largest matrix dimension accepted by the dense routines.
inline constexpr Eigen::Index kMaxDimension = 64;

/// Raised when an iterative routine exhausts its iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A real eigenvalue together with its algebraic multiplicity.
struct RealEigenGroup {
  double value = 0.0;
  int multiplicity = 0;
};

/// Eigenvalues with algebraic multiplicity. `tolerance` is the absolute
/// threshold used to call an eigenvalue real and to merge nearly equal real
/// eigenvalues into one group.
struct Spectrum {
  std::vector<Complex> values;
  double tolerance = 0.0;

  [[nodiscard]] std::size_t size() const { return values.size(); }

  /// Values sorted lexicographically by (real, imaginary).
  [[nodiscard]] std::vector<Complex> sorted() const;

  /// Real eigenvalues (|imag| <= tolerance) merged into groups of values
  /// lying within `tolerance` of their neighbour, ascending.
  [[nodiscard]] std::vector<RealEigenGroup> real_groups() const;

  /// True when some eigenvalue sits close enough to the realness or merge
  /// thresholds that a factor-of-ten change in tolerance would change the
  /// grouping.
  [[nodiscard]] bool grouping_ambiguous() const;

  [[nodiscard]] double spectral_radius() const;
};

/// Default grouping tolerance: 1e-7 times the Frobenius norm (floored so the
/// zero matrix still gets a usable threshold).
[[nodiscard]] double default_spectrum_tolerance(const Matrix& m);

/// All eigenvalues of a real square matrix. A negative `tol` selects
/// `default_spectrum_tolerance(m)`. Throws std::invalid_argument for
/// non-square or oversized input and ConvergenceError when the QR sweep
/// stalls.
[[nodiscard]] Spectrum eigenvalues(const Matrix& m, double tol = -1.0);
[[nodiscard]] Spectrum eigenvalues(const ComplexMatrix& m, double tol = -1.0);

/// Largest relative residual ||m v - lambda v|| / (||m|| ||v||) over the
/// spectrum, with each eigenvector recomputed by inverse iteration.
[[nodiscard]] double max_eigenpair_residual(const ComplexMatrix& m, const Spectrum& spectrum);
[[nodiscard]] double max_eigenpair_residual(const Matrix& m, const Spectrum& spectrum);

/// exp(m) by scaling and squaring with a degree-13 Padé approximant.
[[nodiscard]] Matrix matrix_exp(const Matrix& m);

struct ScalarMinimum {
  double argmin = 0.0;
  double value = 0.0;
};

/// Minimizes `f` on [lo, hi]: a uniform scan over `grid` cells followed by
/// `refine_iters` golden-section steps inside the cells adjacent to the best
/// grid node.
[[nodiscard]] ScalarMinimum minimize_scalar(const std::function<double(double)>& f, double lo,
                                            double hi, int grid = 1000, int refine_iters = 200);

}  // namespace momnet
