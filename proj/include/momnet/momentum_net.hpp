#pragma once

// Residual blocks and their compositions. States are batched: a d x B matrix
// holds one sample per column. The exact path keeps x and v as fixed-point
// mantissas plus one information buffer per coordinate of v; the float path
// exists for plain ResNets, RevNets and comparisons with ODE integrators.

#include "momnet/numerics.hpp"
#include "momnet/revarith.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace momnet {

using MantissaMatrix = Eigen::Matrix<Mantissa, Eigen::Dynamic, Eigen::Dynamic>;

/// Counts live activation tensors on the current thread. A tensor is any
/// state-space value held by a forward or backward pass (x, v, a decoded x,
/// a residual output or a recorded layer input).
class ActivationCounter {
 public:
  static void reset();
  [[nodiscard]] static long current();
  [[nodiscard]] static long peak();

 private:
  friend class ActivationToken;
  static void add(long delta);
};

/// RAII handle for one live activation tensor.
class ActivationToken {
 public:
  ActivationToken();
  ~ActivationToken();
  ActivationToken(const ActivationToken&) = delete;
  ActivationToken& operator=(const ActivationToken&) = delete;
  ActivationToken(ActivationToken&& other) noexcept;
  ActivationToken& operator=(ActivationToken&& other) noexcept;

 private:
  bool live_ = true;
};

/// f(x) = W2^T tanh(W1 x + b), W1 and W2 both p x d.
struct MlpParams {
  Matrix W1;
  Matrix W2;
  Vector b;

  struct Cache {
    Matrix h;  // tanh(W1 x + b)
  };

  static MlpParams zeros(Eigen::Index d, Eigen::Index p);
  /// Uniform entries: W1, b in +-scale/sqrt(d), W2 in +-scale/sqrt(p).
  static MlpParams random(Eigen::Index d, Eigen::Index p, double scale, std::mt19937_64& rng);

  [[nodiscard]] Eigen::Index dim() const { return W1.cols(); }
  [[nodiscard]] Eigen::Index hidden() const { return W1.rows(); }
  void validate() const;

  /// `ctx` is unused; it keeps the signature shared with ListaParams.
  [[nodiscard]] Matrix apply(const Matrix& x, const Matrix& ctx, Cache* cache = nullptr) const;
  /// Returns (df/dx)^T u and accumulates (df/dtheta)^T u into `grad`.
  Matrix vjp(const Matrix& x, const Matrix& ctx, const Cache& cache, const Matrix& u,
             MlpParams& grad) const;

  template <class F>
  void for_each_tensor(F&& f) {
    f(std::span<double>(W1.data(), static_cast<std::size_t>(W1.size())));
    f(std::span<double>(W2.data(), static_cast<std::size_t>(W2.size())));
    f(std::span<double>(b.data(), static_cast<std::size_t>(b.size())));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(std::span<const double>(W1.data(), static_cast<std::size_t>(W1.size())));
    f(std::span<const double>(W2.data(), static_cast<std::size_t>(W2.size())));
    f(std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
  }
};

/// LISTA residual f(x, y) = st(W1 x + W2 y, t) - x with x in R^p, y in R^d.
/// The threshold t is shared and not trained.
struct ListaParams {
  Matrix W1;  // p x p
  Matrix W2;  // p x d
  double threshold = 0.0;

  struct Cache {
    Matrix a;  // W1 x + W2 y
  };

  static ListaParams zeros(Eigen::Index p, Eigen::Index d, double threshold);
  /// One ISTA step: W1 = I - eta D^T D, W2 = eta D^T, t = eta lambda.
  static ListaParams ista(const Matrix& D, double eta, double lambda);

  [[nodiscard]] Eigen::Index dim() const { return W1.cols(); }
  void validate() const;

  [[nodiscard]] Matrix apply(const Matrix& x, const Matrix& y, Cache* cache = nullptr) const;
  Matrix vjp(const Matrix& x, const Matrix& y, const Cache& cache, const Matrix& u,
             ListaParams& grad) const;

  template <class F>
  void for_each_tensor(F&& f) {
    f(std::span<double>(W1.data(), static_cast<std::size_t>(W1.size())));
    f(std::span<double>(W2.data(), static_cast<std::size_t>(W2.size())));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(std::span<const double>(W1.data(), static_cast<std::size_t>(W1.size())));
    f(std::span<const double>(W2.data(), static_cast<std::size_t>(W2.size())));
  }
};

[[nodiscard]] Matrix soft_threshold(const Matrix& u, double t);

enum class V0Mode { zero, residual };

[[nodiscard]] std::string to_string(V0Mode mode);
[[nodiscard]] V0Mode parse_v0_mode(const std::string& text);

/// A stack of `depth` residual blocks sharing gamma and frac_bits. With one
/// block and depth > 1 the weights are tied across layers.
template <class P>
struct Network {
  std::vector<P> blocks;
  int depth = 0;
  Ratio gamma{9, 10};
  int frac_bits = kDefaultFracBits;
  V0Mode v0_mode = V0Mode::zero;

  [[nodiscard]] bool tied() const { return blocks.size() == 1 && depth > 1; }
  [[nodiscard]] std::size_t block_index(int layer) const {
    return blocks.size() == 1 ? 0 : static_cast<std::size_t>(layer);
  }
  [[nodiscard]] const P& block(int layer) const { return blocks[block_index(layer)]; }
  void validate() const;
};

using MlpNetwork = Network<MlpParams>;
using ListaNetwork = Network<ListaParams>;

/// Fixed-point (x, v) with one buffer per coordinate of v (column-major).
struct MomentumState {
  MantissaMatrix x;
  MantissaMatrix v;
  std::vector<InfoBuffer> buffers;
  int frac_bits = kDefaultFracBits;

  static MomentumState encode(const Matrix& x, const Matrix& v, int frac_bits);
  [[nodiscard]] Matrix decode_x() const;
  [[nodiscard]] Matrix decode_v() const;
  [[nodiscard]] bool buffers_empty() const;
  [[nodiscard]] std::size_t max_buffer_bits() const;

  friend bool operator==(const MomentumState& a, const MomentumState& b);
};

/// x + f(x).
template <class P>
[[nodiscard]] Matrix resnet_step(const Matrix& x, const P& params, const Matrix& ctx);

/// In-place exact step: v <- gamma v (buffered), v += q((1 - gamma) f(x)),
/// x += v. gamma = 0 drops v and leaves the buffers untouched.
template <class P>
void momentum_step(MomentumState& s, const P& params, Ratio gamma, const Matrix& ctx);

/// Exact inverse of momentum_step. When `x_prev` / `cache` are given they
/// receive the decoded layer input and the residual cache evaluated there.
template <class P>
void momentum_inverse_step(MomentumState& s, const P& params, Ratio gamma, const Matrix& ctx,
                           Matrix* x_prev = nullptr, typename P::Cache* cache = nullptr);

/// Float step: v <- gamma v + (1 - gamma) f(x); x <- x + v.
template <class P>
void momentum_step_float(Matrix& x, Matrix& v, const P& params, double gamma, const Matrix& ctx);

struct ForwardResult {
  Matrix output;
  MomentumState state;
};

/// Encodes x0 (and v0 per the network's mode) and runs every block exactly.
/// Only the running state is kept.
template <class P>
[[nodiscard]] ForwardResult forward(const Network<P>& net, const Matrix& x0, const Matrix& ctx);

/// Same arithmetic as forward(), recording the decoded input of every layer.
struct Trace {
  Matrix x0;                    // decoded encoded input
  std::vector<Matrix> inputs;   // inputs[k] = decoded x entering layer k
  Matrix output;
  MomentumState state;
  std::vector<ActivationToken> tokens;
};

template <class P>
[[nodiscard]] Trace forward_recorded(const Network<P>& net, const Matrix& x0, const Matrix& ctx);

/// Runs every inverse step from `state`, returning the recovered input state.
template <class P>
[[nodiscard]] MomentumState inverse(const Network<P>& net, MomentumState state, const Matrix& ctx);

/// Float forward with an arbitrary gamma in [0, 1]; gamma = 0 is a ResNet.
/// `inputs` (optional) receives the input to every layer.
template <class P>
[[nodiscard]] Matrix forward_float(const Network<P>& net, const Matrix& x0, const Matrix& ctx,
                                   double gamma, std::vector<Matrix>* inputs = nullptr);

/// Two-stream RevNet: v <- v + phi(x); x <- x + psi(v).
template <class P>
struct RevNetwork {
  std::vector<P> phi;
  std::vector<P> psi;

  [[nodiscard]] int depth() const { return static_cast<int>(phi.size()); }
  void validate() const;
};

template <class P>
void revnet_step(Matrix& x, Matrix& v, const P& phi, const P& psi, const Matrix& ctx);
template <class P>
void revnet_inverse_step(Matrix& x, Matrix& v, const P& phi, const P& psi, const Matrix& ctx);

struct RevTrace {
  std::vector<Matrix> x;  // x[k], v[k]: state entering layer k; last entry is the output
  std::vector<Matrix> v;
};

template <class P>
[[nodiscard]] RevTrace revnet_forward(const RevNetwork<P>& net, const Matrix& x0, const Matrix& v0,
                                      const Matrix& ctx);

/// Versioned binary checkpoint: shapes, gamma (n, d), frac_bits, v0 mode,
/// row-major little-endian float64 weights.
void save_checkpoint(const MlpNetwork& net, const std::filesystem::path& path);
void save_checkpoint(const ListaNetwork& net, const std::filesystem::path& path);
[[nodiscard]] MlpNetwork load_mlp_checkpoint(const std::filesystem::path& path);
[[nodiscard]] ListaNetwork load_lista_checkpoint(const std::filesystem::path& path);

}  // namespace momnet
