#pragma once

// The desk-scale experiments as plain functions returning result tables.
// tools/momrev.cpp turns them into CSV files; the acceptance suite checks
// them directly.

#include "momnet/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace momnet {

// ---------------------------------------------------------------- rings

struct RingsConfig {
  std::uint64_t seed = 0;
  int n_per_ring = 100;
  std::vector<double> radii{0.25, 0.5, 0.75, 1.0};
  double noise = 0.02;
  int hidden = 16;
  int depth = 15;
  double init_scale = 1.0;
  Ratio gamma{9, 10};
  int frac_bits = kDefaultFracBits;
  V0Mode v0_mode = V0Mode::zero;
  int iterations = 5000;
  int batch_size = 64;
  double learning_rate = 0.05;
  double optimizer_momentum = 0.9;
  int eval_every = 100;
  int threads = 1;
};

struct AccuracyPoint {
  int iteration = 0;
  double accuracy = 0.0;
};

struct RingsModelResult {
  std::string model;
  TrainHistory history;
  std::vector<AccuracyPoint> accuracy;  // full training set, every eval_every
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  int first_perfect = -1;               // first evaluated iteration at 100%, or -1
  std::vector<Matrix> clouds;           // depth + 1 snapshots after training
};

struct RingsResult {
  Dataset data;
  RingsModelResult momentum;
  RingsModelResult resnet;
};

[[nodiscard]] RingsResult run_rings(const RingsConfig& cfg);

// ---------------------------------------------------------------- cubic

struct CubicConfig {
  std::uint64_t seed = 0;
  int n_train = 200;
  int n_test = 200;
  double lo = -1.0;
  double hi = 1.0;
  int hidden = 16;
  int depth = 15;
  double init_scale = 0.1;
  double feature_scale = 1.0;  // extra factor on W1 and b
  Ratio gamma{9, 10};
  int frac_bits = kDefaultFracBits;
  V0Mode v0_mode = V0Mode::residual;
  int iterations = 3000;
  int batch_size = 50;
  double learning_rate = 0.02;
  double optimizer_momentum = 0.9;
  int eval_every = 100;
  int threads = 1;
};

struct CubicModelResult {
  std::string model;
  TrainHistory history;
  double final_mse = 0.0;            // on the test set
  double min_pairwise_gap = 0.0;     // over layers, between sorted test trajectories
  std::vector<Matrix> trajectories;  // depth + 1 snapshots on the test inputs
};

struct CubicResult {
  Dataset train;
  Dataset test;
  CubicModelResult momentum;
  CubicModelResult resnet;
};

[[nodiscard]] CubicResult run_cubic(const CubicConfig& cfg);

/// Smallest distance between two trajectories over all layers, taking
/// neighbours in the order of their starting points (1-D states).
[[nodiscard]] double min_pairwise_gap(const std::vector<Matrix>& snapshots);

// ---------------------------------------------------------------- LISTA

struct ListaConfig {
  std::uint64_t seed = 0;
  int d = 16;
  int p = 32;
  double lasso_lambda = 0.1;
  int n_train = 2000;
  int n_test = 1000;
  std::vector<int> depths{2, 5, 10, 20, 30};
  Ratio gamma{9, 10};
  int frac_bits = kDefaultFracBits;
  int iterations = 2000;
  int batch_size = 256;
  double learning_rate = 0.25;
  double optimizer_momentum = 0.0;
  int eval_every = 100;
  int threads = 1;
};

struct ListaRow {
  int depth = 0;
  std::string model;  // ista | lista | momentum | revnet
  double initial_test_loss = 0.0;
  double test_loss = 0.0;
  bool diverged = false;
  TrainHistory history;
};

struct ListaResult {
  ListaProblem problem;
  std::vector<ListaRow> rows;

  [[nodiscard]] const ListaRow& find(int depth, const std::string& model) const;
};

[[nodiscard]] ListaResult run_lista(const ListaConfig& cfg);

// ---------------------------------------------------------------- memory

struct MemcheckConfig {
  std::uint64_t seed = 0;
  std::vector<int> depths{10, 100, 1000};
  std::vector<Ratio> gammas{{1, 2}, {3, 4}, {9, 10}, {99, 100}};
  int dim = 8;
  int hidden = 16;
  int batch = 4;
  int frac_bits = kDefaultFracBits;
};

struct MemcheckRow {
  int depth = 0;
  Ratio gamma;
  double predicted_bits = 0.0;       // k log2(1/gamma)
  double upper_bits = 0.0;           // k log2(1/gamma) + k
  std::size_t min_bits = 0;          // over coordinates
  std::size_t max_bits = 0;
  double mean_bits = 0.0;
  long peak_memory_free = 0;         // live activation tensors
  long peak_stored = 0;
  bool round_trip_exact = false;
};

[[nodiscard]] std::vector<MemcheckRow> run_memcheck(const MemcheckConfig& cfg);

// ---------------------------------------------------------------- linear theory

struct LambdaRow {
  double eps = 0.0;
  double lambda = 0.0;
};

struct BatteryRow {
  double eps = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  bool representable = false;
  bool expected = false;  // eps = 0: l1 == l2 or both > 0; eps > 0: rule with lambda_eps
};

struct Prop1Row {
  int dim = 0;
  int trials = 0;
  int unstable = 0;
  int hypothesis_met = 0;
  double max_product_error = 0.0;  // |l1 l2 - 1| over matched eigenvalues of J
};

struct LinearAnalysis {
  std::vector<LambdaRow> lambdas;
  std::vector<BatteryRow> battery;
  std::vector<Prop1Row> prop1;
};

[[nodiscard]] LinearAnalysis run_analyze_linear(std::uint64_t seed,
                                                const std::vector<double>& eps_grid, int trials);

/// Matches each root to the nearest unused eigenvalue of J(A, B) and returns
/// the worst |l1 l2 - 1| over the matched pairs.
[[nodiscard]] double paired_root_product_error(const Matrix& A, const Matrix& B);

// ---------------------------------------------------------------- ODE checks

struct B4Row {
  double eps = 0.0;
  double h = 0.0;
  double numeric = 0.0;
  double closed = 0.0;
  double rel_error = 0.0;
};

struct ConvergenceRow {
  std::string experiment;  // prop2 | b1
  double eps = 0.0;
  double sup_error = 0.0;
  double sup_error_fine = 0.0;  // same with the refined step
};

struct CrossingRow {
  double eps = 0.0;
  double x0 = 0.0;
  double closed_at_pi = 0.0;
  double integrated_at_pi = 0.0;
  double max_error = 0.0;  // integrator vs closed form over [0, pi]
};

struct OdeCheck {
  std::vector<B4Row> b4;
  std::vector<ConvergenceRow> convergence;
  std::vector<CrossingRow> crossing;
  double embedding_error = 0.0;
};

[[nodiscard]] OdeCheck run_odecheck(double h);

/// x(1) of x'' + x'/eps = -(pi^2 + 1/(4 eps^2)) x from (x0, 0) with step h.
[[nodiscard]] double b4_numeric(double eps, double h, double x0 = 1.0);

}  // namespace momnet
