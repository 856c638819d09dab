#pragma once

// Minibatch SGD over residual stacks, the toy datasets, and the sparse-coding
// problem used by the LISTA experiments.

#include "momnet/autodiff.hpp"
#include "momnet/momentum_net.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace momnet {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 64;
  double learning_rate = 0.05;
  int iterations = 5000;
  Ratio gamma{9, 10};
  int depth = 15;
  V0Mode v0_mode = V0Mode::zero;
  double optimizer_momentum = 0.0;  // 0 is plain SGD
  int eval_every = 100;             // test-loss period; 0 disables
  int threads = 1;

  void validate() const;
};

struct LossPoint {
  int iteration = 0;
  double train_loss = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
  std::vector<LossPoint> points;
};

/// Anything sgd_train can fit. Losses are sums over samples; sgd_train
/// divides by the batch size.
class Trainable {
 public:
  virtual ~Trainable() = default;
  [[nodiscard]] virtual std::size_t train_size() const = 0;
  [[nodiscard]] virtual std::vector<std::span<double>> parameters() = 0;
  /// Sum of per-sample losses over `batch`, adding its gradient into `grad`
  /// (flat, in parameters() order). Must not modify the model.
  virtual double loss_grad_sum(std::span<const std::size_t> batch, std::span<double> grad) const = 0;
  /// Mean loss over the held-out set; NaN when there is none.
  [[nodiscard]] virtual double test_loss() const = 0;
};

[[nodiscard]] std::size_t parameter_count(Trainable& model);

/// Per-iteration callback, called after the update.
using TrainObserver = std::function<void(int iteration, const LossPoint&)>;

/// Epoch-wise shuffled minibatches from `seed`. Each batch is split into
/// fixed chunks whose gradients are summed in ascending order, so the result
/// does not depend on `threads`. Throws DivergenceError on a non-finite loss.
TrainHistory sgd_train(Trainable& model, const TrainConfig& cfg,
                       const TrainObserver& observer = nullptr);

// ---------------------------------------------------------------- data

struct Dataset {
  Matrix X;  // features x samples
  Matrix Y;  // targets x samples
};

/// Points on circles of the given radii plus Gaussian noise; ring k gets
/// label k mod 2.
[[nodiscard]] Dataset make_rings(int n_per_ring, const std::vector<double>& radii, double noise,
                                 std::uint64_t seed);

/// x uniform in [lo, hi], target -x^3.
[[nodiscard]] Dataset make_cubic(int n, double lo, double hi, std::uint64_t seed);

struct ListaProblem {
  Matrix D;  // d x p, unit-norm columns
  double lasso_lambda = 0.1;
  double eta = 0.0;  // 1 / ||D^T D||_2
  Matrix y_train;    // d x n_train, each with ||D^T y||_inf = 1
  Matrix y_test;
};

[[nodiscard]] ListaProblem make_lista_problem(int d, int p, double lasso_lambda, int n_train,
                                              int n_test, std::uint64_t seed);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
[[nodiscard]] double spectral_norm_psd(const Matrix& m, int iterations = 1000);

/// L ISTA steps from x = 0, one column per sample.
[[nodiscard]] Matrix ista_iterate(const ListaProblem& prob, const Matrix& y, int steps);

/// 1/2 ||y - D x||^2 + lambda ||x||_1 summed over columns.
[[nodiscard]] double lasso_loss(const ListaProblem& prob, const Matrix& x, const Matrix& y);

// ---------------------------------------------------------------- models

/// How a residual stack is evaluated.
enum class StackMode {
  exact_memory_free,  // fixed-point forward, reconstructing backward
  exact_stored,       // fixed-point forward, stored-activation backward
  float_stack,        // float forward with `float_gamma` (0: ResNet)
};

enum class LossKind { logistic, mse, lasso };

/// A residual stack with a loss on its final state.
///  logistic: 2-class labels, linear readout w^T x + c.
///  mse:      squared error against Y.
///  lasso:    x0 = 0, y is the context, Lasso objective of the output.
template <class P>
class StackModel : public Trainable {
 public:
  Network<P> net;
  StackMode mode = StackMode::exact_memory_free;
  double float_gamma = 0.0;
  LossKind loss = LossKind::mse;
  Vector head_w;       // logistic only
  double head_c = 0.0; // logistic only
  const ListaProblem* lasso = nullptr;

  Dataset train;
  Dataset test;

  [[nodiscard]] std::size_t train_size() const override {
    return static_cast<std::size_t>(train.X.cols());
  }
  [[nodiscard]] std::vector<std::span<double>> parameters() override;
  double loss_grad_sum(std::span<const std::size_t> batch, std::span<double> grad) const override;
  [[nodiscard]] double test_loss() const override;

  /// Final states for the given inputs (and context for lasso models).
  [[nodiscard]] Matrix predict(const Matrix& x0, const Matrix& ctx) const;
  /// States entering each layer plus the output: depth + 1 snapshots.
  [[nodiscard]] std::vector<Matrix> layer_states(const Matrix& x0, const Matrix& ctx) const;
  /// Mean loss over a whole dataset.
  [[nodiscard]] double dataset_loss(const Dataset& data) const;
  /// Fraction of samples whose readout sign matches the label (logistic).
  [[nodiscard]] double accuracy(const Dataset& data) const;

 private:
  [[nodiscard]] Matrix inputs_for(const Dataset& data, std::span<const std::size_t> idx) const;
  [[nodiscard]] Matrix context_for(const Dataset& data, std::span<const std::size_t> idx) const;
};

/// Two-stream RevNet with lasso loss on the x stream; x0 = v0 = 0.
class RevListaModel : public Trainable {
 public:
  RevNetwork<ListaParams> net;
  const ListaProblem* lasso = nullptr;

  [[nodiscard]] std::size_t train_size() const override;
  [[nodiscard]] std::vector<std::span<double>> parameters() override;
  double loss_grad_sum(std::span<const std::size_t> batch, std::span<double> grad) const override;
  [[nodiscard]] double test_loss() const override;
  [[nodiscard]] Matrix predict(const Matrix& y) const;
};

/// Columns of `m` selected by `idx`.
[[nodiscard]] Matrix gather_columns(const Matrix& m, std::span<const std::size_t> idx);

}  // namespace momnet
