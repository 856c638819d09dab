#include "momnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace momnet {
namespace {

constexpr std::size_t kChunk = 32;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double sign0(double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); }

// Adds every tensor of `g` into `flat` starting at `offset`.
template <class P>
void add_flat(const P& g, std::span<double> flat, std::size_t& offset) {
  g.for_each_tensor([&](std::span<const double> s) {
    for (double x : s) flat[offset++] += x;
  });
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size > 0, "train: batch_size must be positive");
  require(iterations >= 0, "train: iterations must be non-negative");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: bad learning rate");
  require(depth >= 0, "train: depth must be non-negative");
  require(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0,
          "train: optimizer momentum must lie in [0, 1)");
  require(eval_every >= 0, "train: eval_every must be non-negative");
  require(threads >= 1, "train: threads must be >= 1");
}

std::size_t parameter_count(Trainable& model) {
  std::size_t n = 0;
  for (const auto& s : model.parameters()) n += s.size();
  return n;
}

TrainHistory sgd_train(Trainable& model, const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  const std::size_t n = model.train_size();
  require(n > 0, "train: empty training set");
  const auto params = model.parameters();
  const std::size_t total = parameter_count(model);
  std::vector<double> velocity(total, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::size_t cursor = n;  // forces a shuffle before the first batch
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  TrainHistory hist;
  std::vector<std::size_t> batch(bs);
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (std::size_t j = 0; j < bs; ++j) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch[j] = order[cursor++];
    }
    const std::size_t chunks = (bs + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> grads(chunks, std::vector<double>(total, 0.0));
    std::vector<double> losses(chunks, 0.0);
    auto work = [&](std::size_t c) {
      const std::size_t lo = c * kChunk;
      const std::size_t hi = std::min(bs, lo + kChunk);
      losses[c] = model.loss_grad_sum(std::span<const std::size_t>(batch).subspan(lo, hi - lo),
                                      grads[c]);
    };
    const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), chunks);
    if (nthreads <= 1) {
      for (std::size_t c = 0; c < chunks; ++c) work(c);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t c = t; c < chunks; c += nthreads) work(c);
        });
      }
      for (auto& th : pool) th.join();
    }
    double loss = 0.0;
    std::vector<double> g(total, 0.0);
    for (std::size_t c = 0; c < chunks; ++c) {
      loss += losses[c];
      for (std::size_t i = 0; i < total; ++i) g[i] += grads[c][i];
    }
    loss /= static_cast<double>(bs);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: non-finite loss at iteration " + std::to_string(it));
    }
    const double scale = 1.0 / static_cast<double>(bs);
    std::size_t k = 0;
    for (const auto& s : params) {
      for (double& p : s) {
        velocity[k] = cfg.optimizer_momentum * velocity[k] + g[k] * scale;
        p -= cfg.learning_rate * velocity[k];
        ++k;
      }
    }
    LossPoint pt{it, loss, std::numeric_limits<double>::quiet_NaN()};
    if (cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations)) {
      pt.test_loss = model.test_loss();
    }
    hist.points.push_back(pt);
    if (observer) observer(it, pt);
  }
  return hist;
}

// ---------------------------------------------------------------- data

Dataset make_rings(int n_per_ring, const std::vector<double>& radii, double noise,
                   std::uint64_t seed) {
  require(n_per_ring > 0, "make_rings: n_per_ring must be positive");
  require(noise >= 0.0, "make_rings: noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto total = static_cast<Eigen::Index>(n_per_ring) * static_cast<Eigen::Index>(radii.size());
  Dataset ds{Matrix(2, total), Matrix(1, total)};
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    for (int i = 0; i < n_per_ring; ++i, ++col) {
      const double t = angle(rng);
      ds.X(0, col) = radii[k] * std::cos(t) + noise * gauss(rng);
      ds.X(1, col) = radii[k] * std::sin(t) + noise * gauss(rng);
      ds.Y(0, col) = static_cast<double>(k % 2);
    }
  }
  return ds;
}

Dataset make_cubic(int n, double lo, double hi, std::uint64_t seed) {
  require(n > 0 && lo < hi, "make_cubic: need n > 0 and lo < hi");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Dataset ds{Matrix(1, n), Matrix(1, n)};
  for (int i = 0; i < n; ++i) {
    const double x = u(rng);
    ds.X(0, i) = x;
    ds.Y(0, i) = -x * x * x;
  }
  return ds;
}

double spectral_norm_psd(const Matrix& m, int iterations) {
  require(m.rows() == m.cols() && m.rows() > 0, "spectral_norm_psd: need a square matrix");
  Vector v = Vector::Ones(m.rows()) / std::sqrt(static_cast<double>(m.rows()));
  double lambda = 0.0;
  for (int i = 0; i < iterations; ++i) {
    Vector w = m * v;
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    v = w / nrm;
    const double next = v.dot(m * v);
    if (std::abs(next - lambda) <= 1e-15 * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

ListaProblem make_lista_problem(int d, int p, double lasso_lambda, int n_train, int n_test,
                                std::uint64_t seed) {
  require(d > 0 && p > 0 && n_train > 0 && n_test >= 0, "make_lista_problem: bad sizes");
  require(lasso_lambda >= 0.0, "make_lista_problem: lambda must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ListaProblem prob;
  prob.lasso_lambda = lasso_lambda;
  prob.D.resize(d, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) prob.D(i, j) = gauss(rng);
    prob.D.col(j) /= prob.D.col(j).norm();
  }
  prob.eta = 1.0 / spectral_norm_psd(prob.D.transpose() * prob.D);
  auto samples = [&](int n) {
    Matrix y(d, n);
    for (int s = 0; s < n; ++s) {
      for (Eigen::Index i = 0; i < d; ++i) y(i, s) = gauss(rng);
      y.col(s) /= (prob.D.transpose() * y.col(s)).lpNorm<Eigen::Infinity>();
    }
    return y;
  };
  prob.y_train = samples(n_train);
  prob.y_test = samples(n_test);
  return prob;
}

Matrix ista_iterate(const ListaProblem& prob, const Matrix& y, int steps) {
  require(y.rows() == prob.D.rows(), "ista_iterate: y has the wrong dimension");
  require(steps >= 0, "ista_iterate: negative step count");
  Matrix x = Matrix::Zero(prob.D.cols(), y.cols());
  const double t = prob.eta * prob.lasso_lambda;
  for (int s = 0; s < steps; ++s) {
    x = soft_threshold(x - prob.eta * prob.D.transpose() * (prob.D * x - y), t);
  }
  return x;
}

double lasso_loss(const ListaProblem& prob, const Matrix& x, const Matrix& y) {
  require(x.rows() == prob.D.cols() && y.rows() == prob.D.rows() && x.cols() == y.cols(),
          "lasso_loss: shape mismatch");
  return 0.5 * (y - prob.D * x).squaredNorm() + prob.lasso_lambda * x.lpNorm<1>();
}

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
  }
  return out;
}

// ---------------------------------------------------------------- StackModel

namespace {

struct OutputGrad {
  double loss = 0.0;
  Matrix g_out;
  Vector g_w;
  double g_c = 0.0;
};

template <class P>
OutputGrad output_loss(const StackModel<P>& m, const Matrix& out, const Matrix& targets,
                       const Matrix& ctx, bool want_grad) {
  OutputGrad r;
  switch (m.loss) {
    case LossKind::logistic: {
      const Eigen::RowVectorXd z = (m.head_w.transpose() * out).array() + m.head_c;
      Eigen::RowVectorXd dz(z.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) {
        const double y = targets(0, j);
        r.loss += softplus(z(j)) - y * z(j);
        dz(j) = sigmoid(z(j)) - y;
      }
      if (want_grad) {
        r.g_out = m.head_w * dz;
        r.g_w = out * dz.transpose();
        r.g_c = dz.sum();
      }
      break;
    }
    case LossKind::mse: {
      const Matrix diff = out - targets;
      r.loss = diff.squaredNorm();
      if (want_grad) r.g_out = 2.0 * diff;
      break;
    }
    case LossKind::lasso: {
      const ListaProblem& prob = *m.lasso;
      const Matrix resid = prob.D * out - ctx;
      r.loss = 0.5 * resid.squaredNorm() + prob.lasso_lambda * out.lpNorm<1>();
      if (want_grad) {
        r.g_out = prob.D.transpose() * resid + prob.lasso_lambda * out.unaryExpr(&sign0);
      }
      break;
    }
  }
  return r;
}

}  // namespace

template <class P>
std::vector<std::span<double>> StackModel<P>::parameters() {
  std::vector<std::span<double>> out;
  for (P& blk : net.blocks) blk.for_each_tensor([&](std::span<double> s) { out.push_back(s); });
  if (loss == LossKind::logistic) {
    out.emplace_back(head_w.data(), static_cast<std::size_t>(head_w.size()));
    out.emplace_back(&head_c, 1);
  }
  return out;
}

template <class P>
Matrix StackModel<P>::inputs_for(const Dataset& data, std::span<const std::size_t> idx) const {
  if (loss == LossKind::lasso) {
    return Matrix::Zero(net.blocks.front().dim(), static_cast<Eigen::Index>(idx.size()));
  }
  return gather_columns(data.X, idx);
}

template <class P>
Matrix StackModel<P>::context_for(const Dataset& data, std::span<const std::size_t> idx) const {
  if (loss == LossKind::lasso) return gather_columns(data.X, idx);
  return {};
}

template <class P>
double StackModel<P>::loss_grad_sum(std::span<const std::size_t> batch,
                                    std::span<double> grad) const {
  const Matrix x0 = inputs_for(train, batch);
  const Matrix ctx = context_for(train, batch);
  const Matrix targets = loss == LossKind::lasso ? Matrix() : gather_columns(train.Y, batch);
  Matrix out;
  BackwardResult<P> br;
  auto cot = [](const Matrix& g) { return Cotangent{g, Matrix::Zero(g.rows(), g.cols())}; };
  OutputGrad og;
  switch (mode) {
    case StackMode::exact_memory_free: {
      const ForwardResult fr = forward(net, x0, ctx);
      og = output_loss(*this, fr.output, targets, ctx, true);
      br = backward_memory_free(net, fr.state, cot(og.g_out), ctx);
      break;
    }
    case StackMode::exact_stored: {
      const Trace tr = forward_recorded(net, x0, ctx);
      og = output_loss(*this, tr.output, targets, ctx, true);
      br = backward_stored(net, tr, cot(og.g_out), ctx);
      break;
    }
    case StackMode::float_stack: {
      std::vector<Matrix> inputs;
      out = forward_float(net, x0, ctx, float_gamma, &inputs);
      og = output_loss(*this, out, targets, ctx, true);
      br = backward_float(net, inputs, x0, cot(og.g_out), ctx, float_gamma);
      break;
    }
  }
  std::size_t offset = 0;
  for (const P& g : br.grads) add_flat(g, grad, offset);
  if (loss == LossKind::logistic) {
    for (Eigen::Index i = 0; i < og.g_w.size(); ++i) grad[offset++] += og.g_w(i);
    grad[offset++] += og.g_c;
  }
  return og.loss;
}

template <class P>
Matrix StackModel<P>::predict(const Matrix& x0, const Matrix& ctx) const {
  if (mode == StackMode::float_stack) return forward_float(net, x0, ctx, float_gamma);
  return forward(net, x0, ctx).output;
}

template <class P>
std::vector<Matrix> StackModel<P>::layer_states(const Matrix& x0, const Matrix& ctx) const {
  std::vector<Matrix> states;
  if (mode == StackMode::float_stack) {
    const Matrix out = forward_float(net, x0, ctx, float_gamma, &states);
    states.push_back(out);
    return states;
  }
  Trace tr = forward_recorded(net, x0, ctx);
  states = std::move(tr.inputs);
  states.push_back(tr.output);
  return states;
}

template <class P>
double StackModel<P>::dataset_loss(const Dataset& data) const {
  const auto n = static_cast<std::size_t>(data.X.cols());
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Matrix x0 = inputs_for(data, idx);
  const Matrix ctx = context_for(data, idx);
  const Matrix out = predict(x0, ctx);
  const Matrix targets = loss == LossKind::lasso ? Matrix() : data.Y;
  return output_loss(*this, out, targets, ctx, false).loss / static_cast<double>(n);
}

template <class P>
double StackModel<P>::test_loss() const {
  return dataset_loss(test);
}

template <class P>
double StackModel<P>::accuracy(const Dataset& data) const {
  require(loss == LossKind::logistic, "accuracy: only defined for the logistic head");
  const Matrix out = predict(data.X, Matrix());
  const Eigen::RowVectorXd z = (head_w.transpose() * out).array() + head_c;
  int hits = 0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double pred = z(j) > 0.0 ? 1.0 : 0.0;
    if (pred == data.Y(0, j)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(z.size());
}

template class StackModel<MlpParams>;
template class StackModel<ListaParams>;

// ---------------------------------------------------------------- RevNet LISTA

std::size_t RevListaModel::train_size() const {
  return static_cast<std::size_t>(lasso->y_train.cols());
}

std::vector<std::span<double>> RevListaModel::parameters() {
  std::vector<std::span<double>> out;
  for (std::size_t k = 0; k < net.phi.size(); ++k) {
    net.phi[k].for_each_tensor([&](std::span<double> s) { out.push_back(s); });
    net.psi[k].for_each_tensor([&](std::span<double> s) { out.push_back(s); });
  }
  return out;
}

Matrix RevListaModel::predict(const Matrix& y) const {
  const Eigen::Index p = net.phi.empty() ? lasso->D.cols() : net.phi.front().dim();
  const Matrix zero = Matrix::Zero(p, y.cols());
  return revnet_forward(net, zero, zero, y).x.back();
}

double RevListaModel::loss_grad_sum(std::span<const std::size_t> batch,
                                    std::span<double> grad) const {
  const ListaProblem& prob = *lasso;
  const Matrix y = gather_columns(prob.y_train, batch);
  const Matrix zero = Matrix::Zero(prob.D.cols(), y.cols());
  const RevTrace tr = revnet_forward(net, zero, zero, y);
  const Matrix& out = tr.x.back();
  const Matrix resid = prob.D * out - y;
  const double loss = 0.5 * resid.squaredNorm() + prob.lasso_lambda * out.lpNorm<1>();
  const Matrix g_out = prob.D.transpose() * resid + prob.lasso_lambda * out.unaryExpr(&sign0);
  const auto br = revnet_backward(net, tr, g_out, Matrix::Zero(g_out.rows(), g_out.cols()), y);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < net.phi.size(); ++k) {
    add_flat(br.dphi[k], grad, offset);
    add_flat(br.dpsi[k], grad, offset);
  }
  return loss;
}

double RevListaModel::test_loss() const {
  const ListaProblem& prob = *lasso;
  if (prob.y_test.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  return lasso_loss(prob, predict(prob.y_test), prob.y_test) /
         static_cast<double>(prob.y_test.cols());
}

}  // namespace momnet
