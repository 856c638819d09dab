#include "momnet/numerics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numbers>

using namespace momnet;

namespace {

std::vector<Complex> exp_of(const std::vector<Complex>& z) {
  std::vector<Complex> out;
  for (Complex v : z) out.push_back(std::exp(v));
  return out;
}

}  // namespace

TEST_CASE("eigenvalues of small fixed matrices") {
  const Spectrum id = eigenvalues(Matrix(Matrix::Identity(3, 3)));
  REQUIRE(id.size() == 3);
  for (Complex z : id.values) CHECK(std::abs(z - 1.0) < 1e-14);
  const auto groups = id.real_groups();
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].multiplicity == 3);

  Matrix rot(2, 2);
  rot << 0, -1, 1, 0;
  const auto s = eigenvalues(rot).sorted();
  REQUIRE(s.size() == 2);
  CHECK(std::abs(s[0] - Complex(0, -1)) < 1e-14);
  CHECK(std::abs(s[1] - Complex(0, 1)) < 1e-14);
  CHECK(eigenvalues(rot).real_groups().empty());
}

TEST_CASE("eigenvalues agree with characteristic polynomial roots") {
  oracle::Gen gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = gen.matrix(4, 4);
    const auto roots = oracle::poly_roots(oracle::char_poly(m));
    CHECK(oracle::multiset_distance(eigenvalues(m).values, roots) <= 1e-8);
  }
}

TEST_CASE("eigenvalues of planted spectra") {
  oracle::Gen gen(12);
  for (int n : {2, 5, 12, 30}) {
    std::vector<Complex> planted;
    Matrix d = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      d(i, i) = gen.uniform(-3.0, 3.0);
      planted.emplace_back(d(i, i), 0.0);
    }
    Matrix v = gen.matrix(n, n);
    v += 3.0 * Matrix::Identity(n, n);  // keep it well conditioned
    const Matrix m = v * d * v.inverse();
    CHECK(oracle::multiset_distance(eigenvalues(m).values, planted) <= 1e-8 * m.norm());
  }
}

TEST_CASE("eigenpair residuals and conjugate symmetry on random matrices") {
  oracle::Gen gen(13);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(1, 20);
    const Matrix m = gen.matrix(n, n, gen.uniform(0.1, 10.0));
    const Spectrum s = eigenvalues(m);
    REQUIRE(static_cast<int>(s.size()) == n);
    CHECK(max_eigenpair_residual(m, s) <= 1e-9 * std::max(1.0, m.norm()));
    std::vector<Complex> conj;
    for (Complex z : s.values) conj.push_back(std::conj(z));
    CHECK(oracle::multiset_distance(s.values, conj) <= 1e-9 * std::max(1.0, m.norm()));
  }
}

TEST_CASE("complex eigenvalues") {
  oracle::Gen gen(14);
  ComplexMatrix m(3, 3);
  m.setZero();
  m(0, 0) = Complex(1, 2);
  m(1, 1) = Complex(-1, 0.5);
  m(2, 2) = Complex(0, -3);
  m(0, 2) = Complex(4, 1);
  const Spectrum s = eigenvalues(m);
  CHECK(oracle::multiset_distance(s.values, {Complex(1, 2), Complex(-1, 0.5), Complex(0, -3)}) < 1e-12);
  CHECK(max_eigenpair_residual(m, s) < 1e-10);
}

TEST_CASE("eigenvalue grouping") {
  Matrix m = Matrix::Zero(4, 4);
  m.diagonal() << 2.0, 2.0, -1.0, 5.0;
  const auto groups = eigenvalues(m).real_groups();
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].value == doctest::Approx(-1.0));
  CHECK(groups[1].value == doctest::Approx(2.0));
  CHECK(groups[1].multiplicity == 2);

  Spectrum close;
  close.tolerance = 1e-6;
  close.values = {Complex(1.0, 0), Complex(1.0 + 5e-6, 0)};
  CHECK(close.grouping_ambiguous());
  close.values[1] = Complex(1.0 + 1e-3, 0);
  CHECK_FALSE(close.grouping_ambiguous());
}

TEST_CASE("eigenvalue input validation") {
  CHECK_THROWS_AS((void)eigenvalues(Matrix(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS((void)eigenvalues(Matrix(Matrix::Identity(65, 65))), std::invalid_argument);
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS((void)eigenvalues(bad), std::invalid_argument);
}

TEST_CASE("matrix exponential fixed cases") {
  CHECK((matrix_exp(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)).norm() == 0.0);
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 0.7, -2.5;
  const Matrix ed = matrix_exp(d);
  CHECK(ed(0, 0) == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
  CHECK(ed(1, 1) == doctest::Approx(std::exp(-2.5)).epsilon(1e-15));
  CHECK(ed(0, 1) == 0.0);
  Matrix nil = Matrix::Zero(2, 2);
  nil(0, 1) = 3.25;
  Matrix want = Matrix::Identity(2, 2);
  want(0, 1) = 3.25;
  CHECK((matrix_exp(nil) - want).norm() < 1e-15);
}

TEST_CASE("matrix exponential against Taylor oracle") {
  oracle::Gen gen(21);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = gen.integer(1, 8);
    const Matrix m = gen.matrix_with_norm(n, gen.uniform(0.01, 10.0));
    const Matrix ours = matrix_exp(m);
    const Matrix ref = oracle::expm_taylor(m);
    CHECK((ours - ref).norm() <= 1e-12 * ref.norm() * std::max(1.0, m.norm()));
  }
}

TEST_CASE("matrix exponential properties") {
  oracle::Gen gen(22);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = gen.integer(2, 6);
    const Matrix m = gen.matrix_with_norm(n, gen.uniform(0.1, 5.0));
    const Matrix e = matrix_exp(m);
    CHECK(e.determinant() == doctest::Approx(std::exp(m.trace())).epsilon(1e-8));
    CHECK((e * matrix_exp(-m) - Matrix::Identity(n, n)).norm() < 1e-10 * e.norm());
    const double dist = oracle::multiset_distance(eigenvalues(e).values, exp_of(eigenvalues(m).values));
    CHECK(dist <= 1e-6 * std::max(1.0, e.norm()));
  }
}

TEST_CASE("minimize_scalar") {
  const auto q = minimize_scalar([](double x) { return (x - 2.0) * (x - 2.0); }, 0.0, 5.0);
  CHECK(std::abs(q.argmin - 2.0) < 1e-8);
  CHECK(q.value < 1e-15);
  const auto c = minimize_scalar([](double x) { return std::cos(x); }, 0.0, 2.0 * std::numbers::pi);
  CHECK(std::abs(c.argmin - std::numbers::pi) < 1e-7);
  CHECK(c.value == doctest::Approx(-1.0).epsilon(1e-14));
  // NaN regions are skipped.
  const auto n = minimize_scalar([](double x) { return x < 1.0 ? std::nan("") : (x - 3) * (x - 3); }, 0.0, 4.0);
  CHECK(std::abs(n.argmin - 3.0) < 1e-7);
  CHECK_THROWS_AS((void)minimize_scalar([](double x) { return x; }, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)minimize_scalar([](double x) { return x; }, 0.0, 1.0, 10), std::invalid_argument);
}

TEST_CASE("minimize_scalar against dense grid on random multimodal functions") {
  oracle::Gen gen(23);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = gen.uniform(0.5, 3.0), b = gen.uniform(3.0, 9.0), phase = gen.uniform(0, 6.0);
    auto f = [=](double x) { return a * std::sin(b * x + phase) + 0.1 * x * x; };
    const auto ours = minimize_scalar(f, -4.0, 4.0, 2000, 200);
    const auto ref = oracle::grid_min(f, -4.0, 4.0, 1'000'000);
    CHECK(ours.value <= ref.value + 1e-10);
    CHECK(std::abs(ours.argmin - ref.argmin) < 1e-4);
  }
}
