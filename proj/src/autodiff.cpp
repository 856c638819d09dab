#include "momnet/autodiff.hpp"

namespace momnet {
namespace {

template <class P>
std::vector<P> zero_grads(const Network<P>& net) {
  std::vector<P> g;
  g.reserve(net.blocks.size());
  for (const P& p : net.blocks) g.push_back(zeros_like(p));
  return g;
}

void check_cotangent(const Cotangent& c, const Matrix& like) {
  if (c.grad_x.rows() != like.rows() || c.grad_x.cols() != like.cols() ||
      c.grad_v.rows() != like.rows() || c.grad_v.cols() != like.cols()) {
    throw std::invalid_argument("backward: cotangent shape does not match the state");
  }
}

// Folds the v0 = f(x0) dependence into the input gradient.
template <class P>
void finish(const Network<P>& net, const Matrix& x0, const Matrix& ctx, BackwardResult<P>& r) {
  r.grad_x0 = r.at_input.grad_x;
  if (net.v0_mode == V0Mode::residual && net.depth > 0) {
    const P& blk = net.block(0);
    typename P::Cache cache;
    (void)blk.apply(x0, ctx, &cache);
    r.grad_x0 += blk.vjp(x0, ctx, cache, r.at_input.grad_v, r.grads[net.block_index(0)]);
  }
}

template <class P>
BackwardResult<P> backward_from_inputs(const Network<P>& net, const std::vector<Matrix>& inputs,
                                       const Matrix& x0, const Cotangent& cot_out,
                                       const Matrix& ctx, double gamma) {
  net.validate();
  if (inputs.size() != static_cast<std::size_t>(net.depth)) {
    throw std::invalid_argument("backward_stored: trace holds " + std::to_string(inputs.size()) +
                                " layers, network has " + std::to_string(net.depth));
  }
  check_cotangent(cot_out, x0);
  BackwardResult<P> r;
  r.grads = zero_grads(net);
  Cotangent c = cot_out;
  for (int k = net.depth - 1; k >= 0; --k) {
    c = block_backward(c, inputs[static_cast<std::size_t>(k)], net.block(k), gamma, ctx,
                       r.grads[net.block_index(k)]);
  }
  r.at_input = std::move(c);
  finish(net, x0, ctx, r);
  return r;
}

}  // namespace

template <class P>
Cotangent block_backward(const Cotangent& cot, const Matrix& x_prev, const P& params, double gamma,
                         const Matrix& ctx, P& grad, const typename P::Cache* cache) {
  check_cotangent(cot, x_prev);
  typename P::Cache local;
  if (cache == nullptr) {
    (void)params.apply(x_prev, ctx, &local);
    cache = &local;
  }
  const Matrix g = cot.grad_x + cot.grad_v;
  const Matrix u = (1.0 - gamma) * g;
  Cotangent out;
  out.grad_x = cot.grad_x + params.vjp(x_prev, ctx, *cache, u, grad);
  out.grad_v = gamma * g;
  return out;
}

template <class P>
BackwardResult<P> backward_memory_free(const Network<P>& net, const MomentumState& final_state,
                                       const Cotangent& cot_out, const Matrix& ctx) {
  net.validate();
  if (!net.gamma.invertible()) {
    throw std::invalid_argument("backward_memory_free: gamma = 0 cannot be inverted");
  }
  ActivationToken t_x;
  ActivationToken t_v;
  MomentumState s = final_state;
  check_cotangent(cot_out, s.decode_x());
  BackwardResult<P> r;
  r.grads = zero_grads(net);
  Cotangent c = cot_out;
  const double gamma = net.gamma.value();
  for (int k = net.depth - 1; k >= 0; --k) {
    Matrix x_prev;
    typename P::Cache cache;
    momentum_inverse_step(s, net.block(k), net.gamma, ctx, &x_prev, &cache);
    ActivationToken t_prev;
    c = block_backward(c, x_prev, net.block(k), gamma, ctx, r.grads[net.block_index(k)], &cache);
  }
  if (!s.buffers_empty()) {
    throw BufferCorruption("backward_memory_free: buffers not empty after reconstruction");
  }
  const Matrix x0 = s.decode_x();
  if (net.v0_mode == V0Mode::zero || net.depth == 0) {
    if (!s.v.isZero()) throw BufferCorruption("backward_memory_free: reconstructed v0 != 0");
  } else {
    const Matrix f0 = net.block(0).apply(x0, ctx);
    for (Eigen::Index i = 0; i < f0.size(); ++i) {
      if (s.v(i) != encode(f0(i), s.frac_bits)) {
        throw BufferCorruption("backward_memory_free: reconstructed v0 != f(x0)");
      }
    }
  }
  r.at_input = std::move(c);
  finish(net, x0, ctx, r);
  return r;
}

template <class P>
BackwardResult<P> backward_stored(const Network<P>& net, const Trace& trace,
                                  const Cotangent& cot_out, const Matrix& ctx) {
  return backward_from_inputs(net, trace.inputs, trace.x0, cot_out, ctx, net.gamma.value());
}

template <class P>
BackwardResult<P> backward_float(const Network<P>& net, const std::vector<Matrix>& inputs,
                                 const Matrix& x0, const Cotangent& cot_out, const Matrix& ctx,
                                 double gamma) {
  return backward_from_inputs(net, inputs, x0, cot_out, ctx, gamma);
}

template <class P>
RevBackwardResult<P> revnet_backward(const RevNetwork<P>& net, const RevTrace& trace,
                                     const Matrix& grad_x_out, const Matrix& grad_v_out,
                                     const Matrix& ctx) {
  net.validate();
  const auto depth = static_cast<std::size_t>(net.depth());
  if (trace.x.size() != depth + 1 || trace.v.size() != depth + 1) {
    throw std::invalid_argument("revnet_backward: trace/depth mismatch");
  }
  RevBackwardResult<P> r;
  for (std::size_t k = 0; k < depth; ++k) {
    r.dphi.push_back(zeros_like(net.phi[k]));
    r.dpsi.push_back(zeros_like(net.psi[k]));
  }
  Matrix gx = grad_x_out;
  Matrix gv = grad_v_out;
  for (std::size_t k = depth; k-- > 0;) {
    const Matrix& x = trace.x[k];
    const Matrix& v1 = trace.v[k + 1];
    typename P::Cache cpsi;
    (void)net.psi[k].apply(v1, ctx, &cpsi);
    gv += net.psi[k].vjp(v1, ctx, cpsi, gx, r.dpsi[k]);
    typename P::Cache cphi;
    (void)net.phi[k].apply(x, ctx, &cphi);
    gx += net.phi[k].vjp(x, ctx, cphi, gv, r.dphi[k]);
  }
  r.grad_x0 = std::move(gx);
  r.grad_v0 = std::move(gv);
  return r;
}

#define MOMNET_INSTANTIATE(P)                                                                    \
  template Cotangent block_backward<P>(const Cotangent&, const Matrix&, const P&, double,        \
                                       const Matrix&, P&, const P::Cache*);                      \
  template BackwardResult<P> backward_memory_free<P>(const Network<P>&, const MomentumState&,    \
                                                     const Cotangent&, const Matrix&);           \
  template BackwardResult<P> backward_stored<P>(const Network<P>&, const Trace&,                 \
                                                const Cotangent&, const Matrix&);                \
  template BackwardResult<P> backward_float<P>(const Network<P>&, const std::vector<Matrix>&,    \
                                               const Matrix&, const Cotangent&, const Matrix&,   \
                                               double);                                          \
  template RevBackwardResult<P> revnet_backward<P>(const RevNetwork<P>&, const RevTrace&,        \
                                                   const Matrix&, const Matrix&, const Matrix&);

MOMNET_INSTANTIATE(MlpParams)
MOMNET_INSTANTIATE(ListaParams)

#undef MOMNET_INSTANTIATE

}  // namespace momnet
