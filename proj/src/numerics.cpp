#include "momnet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace momnet {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double abs1(Complex z) { return std::abs(z.real()) + std::abs(z.imag()); }

void require_square(Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (rows != cols) {
    throw std::invalid_argument(std::string(what) + ": matrix must be square, got " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (rows > kMaxDimension) {
    throw std::invalid_argument(std::string(what) + ": dimension " + std::to_string(rows) +
                                " exceeds " + std::to_string(kMaxDimension));
  }
}

// Parlett-Reinsch balancing with radix 2; a diagonal similarity, so the
// spectrum is unchanged.
void balance(ComplexMatrix& a) {
  constexpr double radix = 2.0;
  constexpr double sqrdx = radix * radix;
  const Eigen::Index n = a.rows();
  bool converged = false;
  while (!converged) {
    converged = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      double c = 0.0;
      double r = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        c += abs1(a(j, i));
        r += abs1(a(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      const double s = c + r;
      double f = 1.0;
      double g = r / radix;
      while (c < g) {
        f *= radix;
        c *= sqrdx;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= sqrdx;
      }
      if ((c + r) / f < 0.95 * s) {
        converged = false;
        a.row(i) /= f;
        a.col(i) *= f;
      }
    }
  }
}

// Householder reduction to upper Hessenberg form.
void to_hessenberg(ComplexMatrix& a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k + 2 < n; ++k) {
    const Eigen::Index m = n - k - 1;
    ComplexVector v = a.block(k + 1, k, m, 1);
    const double xnorm = v.norm();
    if (xnorm == 0.0) continue;
    const Complex phase = std::abs(v(0)) == 0.0 ? Complex(1.0) : v(0) / std::abs(v(0));
    v(0) += phase * xnorm;
    const double vnorm = v.norm();
    if (vnorm == 0.0) continue;
    v /= vnorm;
    // a <- (I - 2 v v^H) a (I - 2 v v^H) restricted to the trailing rows/cols.
    ComplexMatrix rows = a.bottomRows(m);
    rows -= 2.0 * v * (v.adjoint() * rows);
    a.bottomRows(m) = rows;
    ComplexMatrix cols = a.rightCols(m);
    cols -= 2.0 * (cols * v) * v.adjoint();
    a.rightCols(m) = cols;
    a.block(k + 2, k, m - 1, 1).setZero();
  }
}

struct Givens {
  double c = 1.0;
  Complex s{0.0, 0.0};
};

// Rotation G = [c s; -conj(s) c] with G [a; b] = [r; 0].
Givens make_givens(Complex a, Complex b) {
  const double abs_a = std::abs(a);
  const double abs_b = std::abs(b);
  if (abs_b == 0.0) return {};
  if (abs_a == 0.0) return {0.0, std::conj(b) / abs_b};
  const double r = std::hypot(abs_a, abs_b);
  const Complex alpha = a / abs_a;
  return {abs_a / r, alpha * std::conj(b) / r};
}

// Eigenvalues of an upper Hessenberg matrix by single-shift QR with
// Wilkinson shifts and exceptional shifts on stalls.
std::vector<Complex> hessenberg_qr(ComplexMatrix h) {
  const Eigen::Index n = h.rows();
  std::vector<Complex> out(static_cast<std::size_t>(n));
  const double hnorm = std::max(h.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const int budget = 30 * static_cast<int>(std::max<Eigen::Index>(n, 1));
  int total_iters = 0;
  int stall = 0;
  Eigen::Index iu = n - 1;
  while (iu >= 0) {
    Eigen::Index il = iu;
    while (il > 0) {
      double scale = abs1(h(il - 1, il - 1)) + abs1(h(il, il));
      if (scale == 0.0) scale = hnorm;
      if (abs1(h(il, il - 1)) <= kEps * scale) {
        h(il, il - 1) = 0.0;
        break;
      }
      --il;
    }
    if (il == iu) {
      out[static_cast<std::size_t>(iu)] = h(iu, iu);
      --iu;
      stall = 0;
      continue;
    }
    if (++total_iters > budget) {
      throw ConvergenceError("eigenvalues: QR iteration did not converge (ill-conditioned input)");
    }
    ++stall;
    Complex shift;
    if (stall % 10 == 0) {
      shift = h(iu, iu) + Complex(std::abs(h(iu, iu - 1).real()) +
                                      (iu >= 2 ? std::abs(h(iu - 1, iu - 2).real()) : 0.0),
                                  0.0);
    } else {
      const Complex a = h(iu - 1, iu - 1);
      const Complex b = h(iu - 1, iu);
      const Complex c = h(iu, iu - 1);
      const Complex d = h(iu, iu);
      const Complex half_tr = 0.5 * (a + d);
      const Complex disc = std::sqrt(0.25 * (a - d) * (a - d) + b * c);
      const Complex l1 = half_tr + disc;
      const Complex l2 = half_tr - disc;
      shift = std::abs(l1 - d) < std::abs(l2 - d) ? l1 : l2;
    }
    for (Eigen::Index k = il; k <= iu; ++k) h(k, k) -= shift;
    std::vector<Givens> rots(static_cast<std::size_t>(iu - il));
    for (Eigen::Index k = il; k < iu; ++k) {
      const Givens g = make_givens(h(k, k), h(k + 1, k));
      rots[static_cast<std::size_t>(k - il)] = g;
      for (Eigen::Index j = k; j <= iu; ++j) {
        const Complex x = h(k, j);
        const Complex y = h(k + 1, j);
        h(k, j) = g.c * x + g.s * y;
        h(k + 1, j) = -std::conj(g.s) * x + g.c * y;
      }
    }
    for (Eigen::Index k = il; k < iu; ++k) {
      const Givens& g = rots[static_cast<std::size_t>(k - il)];
      const Eigen::Index last = std::min(k + 2, iu);
      for (Eigen::Index i = il; i <= last; ++i) {
        const Complex x = h(i, k);
        const Complex y = h(i, k + 1);
        h(i, k) = g.c * x + std::conj(g.s) * y;
        h(i, k + 1) = -g.s * x + g.c * y;
      }
    }
    for (Eigen::Index k = il; k <= iu; ++k) h(k, k) += shift;
  }
  return out;
}

}  // namespace

std::vector<Complex> Spectrum::sorted() const {
  std::vector<Complex> s = values;
  std::sort(s.begin(), s.end(), [](Complex a, Complex b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return s;
}

std::vector<RealEigenGroup> Spectrum::real_groups() const {
  std::vector<double> reals;
  for (const Complex& z : values) {
    if (std::abs(z.imag()) <= tolerance) reals.push_back(z.real());
  }
  std::sort(reals.begin(), reals.end());
  std::vector<RealEigenGroup> groups;
  double sum = 0.0;
  for (std::size_t i = 0; i < reals.size(); ++i) {
    if (i > 0 && reals[i] - reals[i - 1] <= tolerance) {
      groups.back().multiplicity += 1;
      sum += reals[i];
      groups.back().value = sum / groups.back().multiplicity;
    } else {
      groups.push_back({reals[i], 1});
      sum = reals[i];
    }
  }
  return groups;
}

bool Spectrum::grouping_ambiguous() const {
  const double hi = 10.0 * tolerance;
  std::vector<double> reals;
  for (const Complex& z : values) {
    const double im = std::abs(z.imag());
    if (im > tolerance && im <= hi) return true;
    if (im <= tolerance) reals.push_back(z.real());
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 1; i < reals.size(); ++i) {
    const double gap = reals[i] - reals[i - 1];
    if (gap > tolerance && gap <= hi) return true;
  }
  return false;
}

double Spectrum::spectral_radius() const {
  double r = 0.0;
  for (const Complex& z : values) r = std::max(r, std::abs(z));
  return r;
}

double default_spectrum_tolerance(const Matrix& m) {
  return std::max(1e-7 * m.norm(), 1e-14);
}

Spectrum eigenvalues(const ComplexMatrix& m, double tol) {
  require_square(m.rows(), m.cols(), "eigenvalues");
  if (!m.allFinite()) throw std::invalid_argument("eigenvalues: non-finite entry");
  Spectrum spec;
  spec.tolerance = tol >= 0.0 ? tol : std::max(1e-7 * m.norm(), 1e-14);
  if (m.rows() == 0) return spec;
  ComplexMatrix a = m;
  balance(a);
  to_hessenberg(a);
  spec.values = hessenberg_qr(std::move(a));
  return spec;
}

Spectrum eigenvalues(const Matrix& m, double tol) {
  require_square(m.rows(), m.cols(), "eigenvalues");
  return eigenvalues(ComplexMatrix(m.cast<Complex>()),
                     tol >= 0.0 ? tol : default_spectrum_tolerance(m));
}

double max_eigenpair_residual(const ComplexMatrix& m, const Spectrum& spectrum) {
  const Eigen::Index n = m.rows();
  const double mnorm = std::max(m.norm(), std::numeric_limits<double>::min());
  double worst = 0.0;
  for (const Complex& lambda : spectrum.values) {
    // Perturbed shift keeps the solve nonsingular; inverse iteration then
    // converges to an eigenvector of the nearest eigenvalue.
    const Complex shift = lambda + Complex(1e-10 * mnorm, 1e-10 * mnorm);
    const ComplexMatrix shifted = m - shift * ComplexMatrix::Identity(n, n);
    Eigen::PartialPivLU<ComplexMatrix> lu(shifted);
    ComplexVector y = ComplexVector::Ones(n) / std::sqrt(static_cast<double>(n));
    for (int it = 0; it < 3; ++it) {
      y = lu.solve(y);
      const double nrm = y.norm();
      if (!(nrm > 0.0) || !std::isfinite(nrm)) break;
      y /= nrm;
    }
    const double res = (m * y - lambda * y).norm() / (mnorm * y.norm());
    worst = std::max(worst, res);
  }
  return worst;
}

double max_eigenpair_residual(const Matrix& m, const Spectrum& spectrum) {
  return max_eigenpair_residual(ComplexMatrix(m.cast<Complex>()), spectrum);
}

Matrix matrix_exp(const Matrix& m) {
  require_square(m.rows(), m.cols(), "matrix_exp");
  if (!m.allFinite()) throw std::invalid_argument("matrix_exp: non-finite entry");
  const Eigen::Index n = m.rows();
  if (n == 0) return m;
  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;
  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > theta13) s = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  const Matrix a = m / std::ldexp(1.0, s);
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 +
           b[1] * id);
  const Matrix v =
      a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
  // Scaled so that v = Id exactly when a = 0.
  const Matrix un = u / b[0];
  const Matrix vn = v / b[0];
  Matrix r = (vn - un).partialPivLu().solve(vn + un);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

ScalarMinimum minimize_scalar(const std::function<double(double)>& f, double lo, double hi,
                              int grid, int refine_iters) {
  if (!(lo < hi)) throw std::invalid_argument("minimize_scalar: require lo < hi");
  if (grid < 100) throw std::invalid_argument("minimize_scalar: grid must be >= 100");
  auto eval = [&](double x) {
    const double y = f(x);
    return std::isnan(y) ? std::numeric_limits<double>::infinity() : y;
  };
  const double step = (hi - lo) / grid;
  auto node = [&](int i) { return i == grid ? hi : lo + step * i; };
  ScalarMinimum best{lo, eval(lo)};
  int best_i = 0;
  for (int i = 1; i <= grid; ++i) {
    const double x = node(i);
    const double y = eval(x);
    if (y < best.value) {
      best = {x, y};
      best_i = i;
    }
  }
  double a = node(std::max(0, best_i - 1));
  double b = node(std::min(grid, best_i + 1));
  constexpr double inv_phi = 0.6180339887498949;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int it = 0; it < refine_iters && b - a > 0.0; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
    if (fc < best.value) best = {c, fc};
    if (fd < best.value) best = {d, fd};
  }
  return best;
}

}  // namespace momnet
