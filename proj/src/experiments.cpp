#include "momnet/experiments.hpp"

#include "momnet/lintheory.hpp"
#include "momnet/odesim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace momnet {
namespace {

// Separate streams for data, held-out data and weights from one seed.
constexpr std::uint64_t kTestStream = 0x7465737400000000ULL;
constexpr std::uint64_t kWeightStream = 0x7765696700000000ULL;

TrainConfig train_config(std::uint64_t seed, int bs, double lr, int iters, Ratio gamma, int depth,
                         double opt_momentum, int eval_every, int threads) {
  TrainConfig tc;
  tc.seed = seed;
  tc.batch_size = bs;
  tc.learning_rate = lr;
  tc.iterations = iters;
  tc.gamma = gamma;
  tc.depth = depth;
  tc.optimizer_momentum = opt_momentum;
  tc.eval_every = eval_every;
  tc.threads = threads;
  return tc;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * g(rng);
  return m;
}

}  // namespace

// ---------------------------------------------------------------- rings

RingsResult run_rings(const RingsConfig& cfg) {
  RingsResult res;
  res.data = make_rings(cfg.n_per_ring, cfg.radii, cfg.noise, cfg.seed);
  const Dataset test = make_rings(cfg.n_per_ring, cfg.radii, cfg.noise, cfg.seed ^ kTestStream);

  std::mt19937_64 rng(cfg.seed ^ kWeightStream);
  std::vector<MlpParams> blocks;
  for (int k = 0; k < cfg.depth; ++k) blocks.push_back(MlpParams::random(2, cfg.hidden, cfg.init_scale, rng));
  const Vector w0 = gaussian(2, 1, 0.5, rng);

  auto train_one = [&](bool momentum) {
    StackModel<MlpParams> m;
    m.net.blocks = blocks;
    m.net.depth = cfg.depth;
    m.net.gamma = momentum ? cfg.gamma : Ratio{0, 1};
    m.net.frac_bits = cfg.frac_bits;
    m.net.v0_mode = cfg.v0_mode;
    m.mode = momentum ? StackMode::exact_memory_free : StackMode::float_stack;
    m.float_gamma = 0.0;
    m.loss = LossKind::logistic;
    m.head_w = w0;
    m.head_c = 0.0;
    m.train = res.data;
    m.test = test;
    RingsModelResult r;
    r.model = momentum ? "momentum" : "resnet";
    const TrainConfig tc = train_config(cfg.seed, cfg.batch_size, cfg.learning_rate, cfg.iterations,
                                        m.net.gamma, cfg.depth, cfg.optimizer_momentum,
                                        cfg.eval_every, cfg.threads);
    auto record = [&](int it) {
      const double acc = m.accuracy(res.data);
      r.accuracy.push_back({it, acc});
      r.best_accuracy = std::max(r.best_accuracy, acc);
      if (acc == 1.0 && r.first_perfect < 0) r.first_perfect = it;
    };
    record(0);
    r.history = sgd_train(m, tc, [&](int it, const LossPoint&) {
      if (cfg.eval_every > 0 && it % cfg.eval_every == 0) record(it);
    });
    r.final_accuracy = m.accuracy(res.data);
    r.clouds = m.layer_states(res.data.X, Matrix());
    return r;
  };
  res.momentum = train_one(true);
  res.resnet = train_one(false);
  return res;
}

// ---------------------------------------------------------------- cubic

double min_pairwise_gap(const std::vector<Matrix>& snapshots) {
  if (snapshots.empty() || snapshots.front().cols() < 2) return 0.0;
  const Matrix& first = snapshots.front();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(first.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return first(0, a) < first(0, b); });
  double gap = std::numeric_limits<double>::infinity();
  for (const Matrix& s : snapshots) {
    for (std::size_t j = 1; j < order.size(); ++j) {
      if (first(0, order[j]) == first(0, order[j - 1])) continue;
      gap = std::min(gap, s(0, order[j]) - s(0, order[j - 1]));
    }
  }
  return gap;
}

CubicResult run_cubic(const CubicConfig& cfg) {
  CubicResult res;
  res.train = make_cubic(cfg.n_train, cfg.lo, cfg.hi, cfg.seed);
  res.test = make_cubic(cfg.n_test, cfg.lo, cfg.hi, cfg.seed ^ kTestStream);
  std::mt19937_64 rng(cfg.seed ^ kWeightStream);
  MlpParams shared = MlpParams::random(1, cfg.hidden, cfg.init_scale, rng);
  shared.W1 *= cfg.feature_scale;
  shared.b *= cfg.feature_scale;

  auto train_one = [&](bool momentum) {
    StackModel<MlpParams> m;
    m.net.blocks = {shared};
    m.net.depth = cfg.depth;
    m.net.gamma = momentum ? cfg.gamma : Ratio{0, 1};
    m.net.frac_bits = cfg.frac_bits;
    m.net.v0_mode = cfg.v0_mode;
    m.mode = momentum ? StackMode::exact_memory_free : StackMode::float_stack;
    m.loss = LossKind::mse;
    m.train = res.train;
    m.test = res.test;
    CubicModelResult r;
    r.model = momentum ? "momentum" : "resnet";
    const TrainConfig tc = train_config(cfg.seed, cfg.batch_size, cfg.learning_rate, cfg.iterations,
                                        m.net.gamma, cfg.depth, cfg.optimizer_momentum,
                                        cfg.eval_every, cfg.threads);
    r.history = sgd_train(m, tc);
    r.final_mse = m.dataset_loss(res.test);
    r.trajectories = m.layer_states(res.test.X, Matrix());
    r.min_pairwise_gap = min_pairwise_gap(r.trajectories);
    return r;
  };
  res.momentum = train_one(true);
  res.resnet = train_one(false);
  return res;
}

// ---------------------------------------------------------------- LISTA

const ListaRow& ListaResult::find(int depth, const std::string& model) const {
  for (const ListaRow& r : rows) {
    if (r.depth == depth && r.model == model) return r;
  }
  throw std::out_of_range("lista: no row for depth " + std::to_string(depth) + " model " + model);
}

ListaResult run_lista(const ListaConfig& cfg) {
  ListaProblem prob =
      make_lista_problem(cfg.d, cfg.p, cfg.lasso_lambda, cfg.n_train, cfg.n_test, cfg.seed);
  const ListaParams init = ListaParams::ista(prob.D, prob.eta, prob.lasso_lambda);
  const double n_test = static_cast<double>(prob.y_test.cols());
  std::vector<ListaRow> rows;

  auto fit = [&](Trainable& model, ListaRow& row, int depth) {
    row.initial_test_loss = model.test_loss();
    const TrainConfig tc = train_config(cfg.seed, cfg.batch_size, cfg.learning_rate, cfg.iterations,
                                        cfg.gamma, depth, cfg.optimizer_momentum, cfg.eval_every,
                                        cfg.threads);
    try {
      row.history = sgd_train(model, tc);
    } catch (const DivergenceError&) {
      row.diverged = true;
    }
    row.test_loss = model.test_loss();
    if (!std::isfinite(row.test_loss)) row.diverged = true;
  };

  for (int depth : cfg.depths) {
    ListaRow ista{depth, "ista", 0.0, 0.0, false, {}};
    ista.test_loss = lasso_loss(prob, ista_iterate(prob, prob.y_test, depth), prob.y_test) / n_test;
    ista.initial_test_loss = ista.test_loss;
    rows.push_back(std::move(ista));

    for (const bool momentum : {false, true}) {
      StackModel<ListaParams> m;
      m.net.blocks.assign(static_cast<std::size_t>(depth), init);
      m.net.depth = depth;
      m.net.gamma = momentum ? cfg.gamma : Ratio{0, 1};
      m.net.frac_bits = cfg.frac_bits;
      m.mode = momentum ? StackMode::exact_memory_free : StackMode::float_stack;
      m.loss = LossKind::lasso;
      m.lasso = &prob;
      m.train.X = prob.y_train;
      m.test.X = prob.y_test;
      ListaRow row;
      row.depth = depth;
      row.model = momentum ? "momentum" : "lista";
      fit(m, row, depth);
      rows.push_back(std::move(row));
    }

    RevListaModel rev;
    rev.net.phi.assign(static_cast<std::size_t>(depth), init);
    rev.net.psi.assign(static_cast<std::size_t>(depth), init);
    rev.lasso = &prob;
    ListaRow row;
    row.depth = depth;
    row.model = "revnet";
    fit(rev, row, depth);
    rows.push_back(std::move(row));
  }
  ListaResult res;
  res.rows = std::move(rows);
  res.problem = std::move(prob);
  return res;
}

// ---------------------------------------------------------------- memory

std::vector<MemcheckRow> run_memcheck(const MemcheckConfig& cfg) {
  std::vector<MemcheckRow> rows;
  std::mt19937_64 rng(cfg.seed);
  for (const Ratio& gamma : cfg.gammas) {
    for (int depth : cfg.depths) {
      MlpNetwork net;
      net.depth = depth;
      net.gamma = gamma;
      net.frac_bits = cfg.frac_bits;
      for (int k = 0; k < depth; ++k) net.blocks.push_back(MlpParams::random(cfg.dim, cfg.hidden, 1.0, rng));
      const Matrix x0 = gaussian(cfg.dim, cfg.batch, 1.0, rng);
      const Matrix g_out = gaussian(cfg.dim, cfg.batch, 1.0, rng);

      MemcheckRow row;
      row.depth = depth;
      row.gamma = gamma;
      const double per_step = std::log2(static_cast<double>(gamma.d) / static_cast<double>(gamma.n));
      row.predicted_bits = depth * per_step;
      row.upper_bits = depth * (per_step + 1.0);

      const ForwardResult fr = forward(net, x0, Matrix());
      row.min_bits = std::numeric_limits<std::size_t>::max();
      double sum = 0.0;
      for (const InfoBuffer& b : fr.state.buffers) {
        row.min_bits = std::min(row.min_bits, b.bit_length());
        row.max_bits = std::max(row.max_bits, b.bit_length());
        sum += static_cast<double>(b.bit_length());
      }
      row.mean_bits = sum / static_cast<double>(fr.state.buffers.size());
      const MomentumState back = inverse(net, fr.state, Matrix());
      row.round_trip_exact =
          back == MomentumState::encode(x0, Matrix::Zero(x0.rows(), x0.cols()), cfg.frac_bits);

      const Cotangent cot{g_out, Matrix::Zero(g_out.rows(), g_out.cols())};
      ActivationCounter::reset();
      (void)backward_memory_free(net, fr.state, cot, Matrix());
      row.peak_memory_free = ActivationCounter::peak();

      ActivationCounter::reset();
      {
        const Trace tr = forward_recorded(net, x0, Matrix());
        (void)backward_stored(net, tr, cot, Matrix());
      }
      row.peak_stored = ActivationCounter::peak();
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------- linear theory

double paired_root_product_error(const Matrix& A, const Matrix& B) {
  const Spectrum spec = eigenvalues(revnet_jacobian(A, B));
  std::vector<bool> used(spec.values.size(), false);
  auto take_nearest = [&](Complex z) {
    std::size_t best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spec.values.size(); ++i) {
      if (used[i]) continue;
      const double dd = std::abs(spec.values[i] - z);
      if (dd < dist) {
        dist = dd;
        best = i;
      }
    }
    used[best] = true;
    return spec.values[best];
  };
  double worst = 0.0;
  for (const auto& [r1, r2] : revnet_paired_roots(A, B)) {
    const Complex e1 = take_nearest(r1);
    const Complex e2 = take_nearest(r2);
    worst = std::max(worst, std::abs(e1 * e2 - 1.0));
  }
  return worst;
}

LinearAnalysis run_analyze_linear(std::uint64_t seed, const std::vector<double>& eps_grid,
                                  int trials) {
  LinearAnalysis out;
  for (double eps : eps_grid) out.lambdas.push_back({eps, lambda_eps(eps)});

  const std::vector<double> values{-2.0, -1.0, -0.5, -0.1, 0.5, 1.0, 2.0};
  for (double eps : {0.0, 0.01, 2.0}) {
    const double lam = eps == 0.0 ? 0.0 : lambda_eps(eps);
    for (double l1 : values) {
      for (double l2 : values) {
        Matrix D = Matrix::Zero(2, 2);
        D(0, 0) = l1;
        D(1, 1) = l2;
        BatteryRow row{eps, l1, l2, representable(D, eps).representable, false};
        row.expected = (l1 == l2) || (l1 > lam && l2 > lam);
        out.battery.push_back(row);
      }
    }
  }

  std::mt19937_64 rng(seed);
  for (int dim : {2, 5, 10}) {
    Prop1Row row;
    row.dim = dim;
    row.trials = trials;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int t = 0; t < trials; ++t) {
      const Matrix A = gaussian(dim, dim, scale, rng);
      const Matrix B = gaussian(dim, dim, scale, rng);
      const InstabilityReport rep = revnet_instability_check(A, B);
      row.unstable += rep.unstable ? 1 : 0;
      row.hypothesis_met += rep.hypothesis_met ? 1 : 0;
      row.max_product_error = std::max(row.max_product_error, paired_root_product_error(A, B));
    }
    out.prop1.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------- ODE checks

double b4_numeric(double eps, double h, double x0) {
  const double k = std::numbers::pi * std::numbers::pi + 1.0 / (4.0 * eps * eps);
  const VectorField g = [k](const Vector& x) -> Vector { return -k * x; };
  const Trajectory tr =
      integrate_damped(g, Vector::Constant(1, x0), Vector::Zero(1), 1.0 / eps, 1.0, h);
  return tr.final_x()(0);
}

OdeCheck run_odecheck(double h) {
  OdeCheck out;
  for (double eps : {0.5, 1.0, 2.0, 10.0}) {
    B4Row row{eps, h, b4_numeric(eps, h), -std::exp(-1.0 / (2.0 * eps)), 0.0};
    row.rel_error = std::abs(row.numeric - row.closed) / std::abs(row.closed);
    out.b4.push_back(row);
  }

  Matrix theta(2, 2);
  theta << -1.0, 0.5, -0.5, -1.0;
  const VectorField linear = [theta](const Vector& x) -> Vector { return theta * x; };
  Vector x0(2);
  x0 << 1.0, 0.5;
  const Vector zero = Vector::Zero(2);
  const std::vector<double> small_eps{0.1, 0.05, 0.01};
  const auto coarse = convergence_eps_to_zero(linear, x0, zero, small_eps, 1.0, 1e-4);
  const auto fine = convergence_eps_to_zero(linear, x0, zero, small_eps, 1.0, 1e-5);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    out.convergence.push_back({"prop2", coarse[i].eps, coarse[i].sup_error, fine[i].sup_error});
  }

  Vector force(2);
  force << 1.0, -0.5;
  const VectorField constant = [force](const Vector&) -> Vector { return force; };
  const std::vector<double> big_eps{1.0, 10.0, 100.0};
  const auto b1 = convergence_eps_to_infty(constant, zero, zero, big_eps, 1.0, 1e-3);
  const auto b1_fine = convergence_eps_to_infty(constant, zero, zero, big_eps, 1.0, 1e-4);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    out.convergence.push_back({"b1", b1[i].eps, b1[i].sup_error, b1_fine[i].sup_error});
  }

  for (double eps : {0.5, 1.0, 2.0}) {
    const CrossingBundle bundle = crossing_witness(eps, {0.0, 1.0, 2.0}, 1e-4);
    for (std::size_t i = 0; i < bundle.x0s.size(); ++i) {
      CrossingRow row;
      row.eps = eps;
      row.x0 = bundle.x0s[i];
      row.closed_at_pi = bundle.closed_form[i].final_x()(0);
      row.integrated_at_pi = bundle.integrated[i].final_x()(0);
      row.max_error = sup_distance(bundle.integrated[i], bundle.closed_form[i]);
      out.crossing.push_back(row);
    }
  }

  out.embedding_error = second_order_embedding_error(theta, x0, 0.5, 1.0, 1e-4);
  return out;
}

}  // namespace momnet
