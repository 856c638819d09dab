#include "momnet/odesim.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace momnet {
namespace {

void check_finite(const Vector& z, double t) {
  if (!z.allFinite()) throw BlowUp("integrator: non-finite state at t = " + std::to_string(t));
}

}  // namespace

void Trajectory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  const Eigen::Index d = x.empty() ? 0 : x.front().size();
  out << "t";
  for (Eigen::Index i = 0; i < d; ++i) out << ",x" << i;
  if (!v.empty()) {
    for (Eigen::Index i = 0; i < d; ++i) out << ",v" << i;
  }
  out << "\n";
  for (std::size_t n = 0; n < times.size(); ++n) {
    out << times[n];
    for (Eigen::Index i = 0; i < d; ++i) out << "," << x[n](i);
    if (!v.empty()) {
      for (Eigen::Index i = 0; i < d; ++i) out << "," << v[n](i);
    }
    out << "\n";
  }
}

int step_count(double T, double h) {
  if (!(h > 0.0) || !(T > 0.0)) throw std::invalid_argument("step_count: need T > 0 and h > 0");
  const double ratio = T / h;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * n || n > 1e9) {
    throw std::invalid_argument("step_count: h must divide T");
  }
  return static_cast<int>(n);
}

Trajectory integrate_first_order(const VectorField& f, const Vector& x0, double T, double h) {
  const int steps = step_count(T, h);
  Trajectory tr;
  tr.h = h;
  tr.times.reserve(static_cast<std::size_t>(steps) + 1);
  tr.x.reserve(static_cast<std::size_t>(steps) + 1);
  Vector x = x0;
  tr.times.push_back(0.0);
  tr.x.push_back(x);
  for (int n = 1; n <= steps; ++n) {
    x += h * f(x);
    const double t = n == steps ? T : n * h;
    check_finite(x, t);
    tr.times.push_back(t);
    tr.x.push_back(x);
  }
  return tr;
}

Trajectory integrate_second_order(const VectorField& f, const Vector& x0, const Vector& v0,
                                  double eps, double T, double h) {
  if (!(eps > 0.0)) throw std::invalid_argument("integrate_second_order: eps must be positive");
  if (x0.size() != v0.size()) throw std::invalid_argument("integrate_second_order: x0/v0 sizes");
  const int steps = step_count(T, h);
  const double k = h / eps;
  const double keep = 1.0 - k;
  Trajectory tr;
  tr.h = h;
  Vector x = x0;
  Vector v = v0;
  tr.times.push_back(0.0);
  tr.x.push_back(x);
  tr.v.push_back(v);
  for (int n = 1; n <= steps; ++n) {
    v = keep * v + k * f(x);
    x += h * v;
    const double t = n == steps ? T : n * h;
    check_finite(x, t);
    check_finite(v, t);
    tr.times.push_back(t);
    tr.x.push_back(x);
    tr.v.push_back(v);
  }
  return tr;
}

Trajectory integrate_damped(const VectorField& g, const Vector& x0, const Vector& v0, double c,
                            double T, double h) {
  if (c < 0.0) throw std::invalid_argument("integrate_damped: negative damping");
  if (x0.size() != v0.size()) throw std::invalid_argument("integrate_damped: x0/v0 sizes");
  const int steps = step_count(T, h);
  Trajectory tr;
  tr.h = h;
  Vector x = x0;
  Vector v = v0;
  tr.times.push_back(0.0);
  tr.x.push_back(x);
  tr.v.push_back(v);
  for (int n = 1; n <= steps; ++n) {
    v += h * (g(x) - c * v);
    x += h * v;
    const double t = n == steps ? T : n * h;
    check_finite(x, t);
    check_finite(v, t);
    tr.times.push_back(t);
    tr.x.push_back(x);
    tr.v.push_back(v);
  }
  return tr;
}

double sup_distance(const Trajectory& a, const Trajectory& b) {
  if (a.x.size() != b.x.size()) throw std::invalid_argument("sup_distance: grids differ");
  double m = 0.0;
  for (std::size_t n = 0; n < a.x.size(); ++n) {
    m = std::max(m, (a.x[n] - b.x[n]).lpNorm<Eigen::Infinity>());
  }
  return m;
}

std::vector<ConvergencePoint> convergence_eps_to_zero(const VectorField& f, const Vector& x0,
                                                      const Vector& v0,
                                                      const std::vector<double>& eps_list,
                                                      double T, double h) {
  for (std::size_t i = 1; i < eps_list.size(); ++i) {
    if (!(eps_list[i] < eps_list[i - 1])) {
      throw std::invalid_argument("convergence_eps_to_zero: eps_list must decrease");
    }
  }
  const Trajectory first = integrate_first_order(f, x0, T, h);
  std::vector<ConvergencePoint> out;
  for (double eps : eps_list) {
    const Trajectory second = integrate_second_order(f, x0, v0, eps, T, h);
    out.push_back({eps, sup_distance(second, first)});
  }
  return out;
}

std::vector<ConvergencePoint> convergence_eps_to_infty(const VectorField& f, const Vector& x0,
                                                       const Vector& v0,
                                                       const std::vector<double>& eps_list,
                                                       double T, double h) {
  for (std::size_t i = 1; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > eps_list[i - 1])) {
      throw std::invalid_argument("convergence_eps_to_infty: eps_list must increase");
    }
  }
  const Trajectory limit = integrate_damped(f, x0, v0, 0.0, T, h);
  std::vector<ConvergencePoint> out;
  for (double eps : eps_list) {
    if (!(eps > 0.0)) throw std::invalid_argument("convergence_eps_to_infty: eps must be > 0");
    const Trajectory damped = integrate_damped(f, x0, v0, 1.0 / eps, T, h);
    out.push_back({eps, sup_distance(damped, limit)});
  }
  return out;
}

double crossing_stiffness(double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("crossing_stiffness: eps must be positive");
  return (1.0 + eps * eps) / (4.0 * eps);
}

double crossing_closed_form(double x0, double eps, double t) {
  return x0 * std::exp(-t / (2.0 * eps)) * std::cos(t / 2.0);
}

CrossingBundle crossing_witness(double eps, const std::vector<double>& x0s, double h_max) {
  const double T = std::numbers::pi;
  const int steps = static_cast<int>(std::ceil(T / h_max));
  const double h = T / steps;
  const double k = crossing_stiffness(eps);
  const VectorField f = [k](const Vector& x) -> Vector { return -k * x; };
  CrossingBundle b;
  b.x0s = x0s;
  for (double x0 : x0s) {
    Trajectory exact;
    exact.h = h;
    for (int n = 0; n <= steps; ++n) {
      const double t = n == steps ? T : n * h;
      exact.times.push_back(t);
      exact.x.push_back(Vector::Constant(1, crossing_closed_form(x0, eps, t)));
      const double dx = -x0 * std::exp(-t / (2.0 * eps)) *
                        (std::cos(t / 2.0) / (2.0 * eps) + std::sin(t / 2.0) / 2.0);
      exact.v.push_back(Vector::Constant(1, dx));
    }
    b.closed_form.push_back(std::move(exact));
    b.integrated.push_back(integrate_second_order(f, Vector::Constant(1, x0),
                                                  Vector::Constant(1, -x0 / (2.0 * eps)), eps, T,
                                                  h));
  }
  return b;
}

Vector free_v0_speed(const Vector& x0, const Vector& target, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("free_v0_speed: eps must be positive");
  return (target - x0) / (eps * (1.0 - std::exp(-1.0 / eps)));
}

double second_order_embedding_error(const Matrix& theta, const Vector& x0, double eps, double T,
                                    double h) {
  const Matrix lifted = theta + eps * theta * theta;
  const VectorField fhat = [&lifted](const Vector& x) -> Vector { return lifted * x; };
  const Trajectory tr = integrate_second_order(fhat, x0, theta * x0, eps, T, h);
  double m = 0.0;
  for (std::size_t n = 0; n < tr.x.size(); ++n) {
    const Vector exact = matrix_exp(tr.times[n] * theta) * x0;
    m = std::max(m, (tr.x[n] - exact).lpNorm<Eigen::Infinity>());
  }
  return m;
}

}  // namespace momnet
