#pragma once

// Fixed-step integrators for x' = f(x), eps x'' + x' = f(x) and
// x'' + c x' = g(x), plus the closed-form experiments built on them.

#include "momnet/numerics.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

namespace momnet {

using VectorField = std::function<Vector(const Vector&)>;

/// A state went non-finite during integration.
class BlowUp : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  double h = 0.0;
  std::vector<double> times;
  std::vector<Vector> x;
  std::vector<Vector> v;  // empty for first-order runs

  [[nodiscard]] const Vector& final_x() const { return x.back(); }
  /// CSV with header t,x0..,v0..
  void write_csv(const std::filesystem::path& path) const;
};

/// Number of steps T / h; throws std::invalid_argument unless it is a
/// positive integer up to 1e-9 relative slack.
[[nodiscard]] int step_count(double T, double h);

/// Euler: x <- x + h f(x).
[[nodiscard]] Trajectory integrate_first_order(const VectorField& f, const Vector& x0, double T,
                                               double h);

/// eps x'' + x' = f(x) in phase space, v first then x:
///   v <- (1 - k) v + k f(x),  x <- x + h v,  k = h / eps.
/// At h = 1 with 1 - k = gamma this is the float momentum step.
[[nodiscard]] Trajectory integrate_second_order(const VectorField& f, const Vector& x0,
                                                const Vector& v0, double eps, double T, double h);

/// x'' + c x' = g(x): v <- v + h (g(x) - c v), x <- x + h v. c = 0 is
/// undamped.
[[nodiscard]] Trajectory integrate_damped(const VectorField& g, const Vector& x0, const Vector& v0,
                                          double c, double T, double h);

/// sup over the shared time grid of ||a.x - b.x||_inf.
[[nodiscard]] double sup_distance(const Trajectory& a, const Trajectory& b);

struct ConvergencePoint {
  double eps = 0.0;
  double sup_error = 0.0;
};

/// Distance on [0, T] between eps x'' + x' = f and x' = f for each eps.
/// eps_list must be strictly decreasing.
[[nodiscard]] std::vector<ConvergencePoint> convergence_eps_to_zero(
    const VectorField& f, const Vector& x0, const Vector& v0, const std::vector<double>& eps_list,
    double T, double h);

/// Distance on [0, T] between x'' + x'/eps = f and x'' = f for each eps.
/// eps_list must be strictly increasing.
[[nodiscard]] std::vector<ConvergencePoint> convergence_eps_to_infty(
    const VectorField& f, const Vector& x0, const Vector& v0, const std::vector<double>& eps_list,
    double T, double h);

/// eps x'' + x' = -k x with k = (1 + eps^2) / (4 eps) and v0 = -x0 / (2 eps):
/// x(t) = x0 exp(-t / (2 eps)) cos(t / 2), which vanishes at t = pi for
/// every x0.
[[nodiscard]] double crossing_stiffness(double eps);
[[nodiscard]] double crossing_closed_form(double x0, double eps, double t);

struct CrossingBundle {
  std::vector<double> x0s;
  std::vector<Trajectory> closed_form;  // sampled on the integrator's grid
  std::vector<Trajectory> integrated;
};

/// Trajectories from each x0 on [0, pi] with the largest step <= h_max that
/// divides pi.
[[nodiscard]] CrossingBundle crossing_witness(double eps, const std::vector<double>& x0s,
                                              double h_max = 1e-4);

/// Initial speed making eps x'' + x' = 0 reach `target` at t = 1.
[[nodiscard]] Vector free_v0_speed(const Vector& x0, const Vector& target, double eps);

/// Solutions of x' = theta x also solve eps x'' + x' = (theta + eps theta^2) x
/// with v0 = theta x0. Returns the sup distance on [0, T] between that
/// second-order run and exp(t theta) x0.
[[nodiscard]] double second_order_embedding_error(const Matrix& theta, const Vector& x0, double eps,
                                                  double T, double h);

}  // namespace momnet
