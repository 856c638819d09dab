#pragma once

// Reverse-mode gradients for momentum networks. The memory-free pass walks
// the layers backwards, rebuilding each layer input with the exact inverse
// step; the stored pass reads the same inputs from a recorded trace.

#include "momnet/momentum_net.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace momnet {

/// Gradient of the loss with respect to a state z = (x, v).
struct Cotangent {
  Matrix grad_x;
  Matrix grad_v;
};

/// The reconstruction ended in a state the forward pass could not have
/// started from (non-empty buffers or an inconsistent v0).
class BufferCorruption : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class P>
struct BackwardResult {
  std::vector<P> grads;  // one per stored block (tied nets accumulate into one)
  Cotangent at_input;    // cotangent of (x0, v0)
  Matrix grad_x0;        // total gradient wrt x0, v0 path folded in
};

template <class P>
[[nodiscard]] std::vector<std::span<double>> tensors(P& p) {
  std::vector<std::span<double>> out;
  p.for_each_tensor([&](std::span<double> s) { out.push_back(s); });
  return out;
}

template <class P>
[[nodiscard]] P zeros_like(const P& p) {
  P out = p;
  out.for_each_tensor([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return out;
}

/// Backward through one momentum step whose layer input was x_prev:
/// with g = grad_x + grad_v,
///   grad_x <- grad_x + (1 - gamma) J^T g,  grad_v <- gamma g,
/// and (1 - gamma) dtheta^T g is accumulated into `grad`. `cache` may hold
/// the residual cache at x_prev; it is recomputed otherwise.
template <class P>
Cotangent block_backward(const Cotangent& cot, const Matrix& x_prev, const P& params, double gamma,
                         const Matrix& ctx, P& grad, const typename P::Cache* cache = nullptr);

/// Memory-free backward from the final state of forward(). Throws
/// BufferCorruption when the reconstruction does not land on a valid
/// initial state, std::invalid_argument for gamma = 0.
template <class P>
[[nodiscard]] BackwardResult<P> backward_memory_free(const Network<P>& net,
                                                     const MomentumState& final_state,
                                                     const Cotangent& cot_out, const Matrix& ctx);

/// Reference backward reading layer inputs from a recorded trace.
template <class P>
[[nodiscard]] BackwardResult<P> backward_stored(const Network<P>& net, const Trace& trace,
                                                const Cotangent& cot_out, const Matrix& ctx);

/// Backward for forward_float, given its recorded layer inputs.
template <class P>
[[nodiscard]] BackwardResult<P> backward_float(const Network<P>& net,
                                               const std::vector<Matrix>& inputs,
                                               const Matrix& x0, const Cotangent& cot_out,
                                               const Matrix& ctx, double gamma);

template <class P>
struct RevBackwardResult {
  std::vector<P> dphi;
  std::vector<P> dpsi;
  Matrix grad_x0;
  Matrix grad_v0;
};

template <class P>
[[nodiscard]] RevBackwardResult<P> revnet_backward(const RevNetwork<P>& net, const RevTrace& trace,
                                                   const Matrix& grad_x_out,
                                                   const Matrix& grad_v_out, const Matrix& ctx);

/// Central differences of `loss` over every parameter coordinate.
template <class P>
[[nodiscard]] std::vector<P> finite_diff_loss_grad(
    const std::function<double(const std::vector<P>&)>& loss, const std::vector<P>& params,
    double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_loss_grad: h must be positive");
  std::vector<P> work = params;
  std::vector<P> grads;
  grads.reserve(params.size());
  for (const P& p : params) grads.push_back(zeros_like(p));
  for (std::size_t b = 0; b < work.size(); ++b) {
    auto wt = tensors(work[b]);
    auto gt = tensors(grads[b]);
    for (std::size_t t = 0; t < wt.size(); ++t) {
      for (std::size_t i = 0; i < wt[t].size(); ++i) {
        const double orig = wt[t][i];
        wt[t][i] = orig + h;
        const double up = loss(work);
        wt[t][i] = orig - h;
        const double down = loss(work);
        wt[t][i] = orig;
        gt[t][i] = (up - down) / (2.0 * h);
      }
    }
  }
  return grads;
}

/// Largest |a - b| / max(|b|, floor) over all coordinates of two gradient sets.
template <class P>
[[nodiscard]] double max_relative_deviation(const std::vector<P>& a, const std::vector<P>& b,
                                            double floor = 1e-12) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_deviation: size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto ta = tensors(const_cast<P&>(a[k]));
    auto tb = tensors(const_cast<P&>(b[k]));
    for (std::size_t t = 0; t < ta.size(); ++t) {
      for (std::size_t i = 0; i < ta[t].size(); ++i) {
        const double den = std::max(std::abs(tb[t][i]), floor);
        worst = std::max(worst, std::abs(ta[t][i] - tb[t][i]) / den);
      }
    }
  }
  return worst;
}

}  // namespace momnet
