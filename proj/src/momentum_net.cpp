#include "momnet/momentum_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace momnet {
namespace {

thread_local long g_live = 0;
thread_local long g_peak = 0;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_state_rows(Eigen::Index rows, Eigen::Index dim, const char* what) {
  require(rows == dim, std::string(what) + ": state has " + std::to_string(rows) +
                           " rows, block expects " + std::to_string(dim));
}

Matrix decode_matrix(const MantissaMatrix& m, int frac_bits) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) out(i) = decode(m(i), frac_bits);
  return out;
}

}  // namespace

void ActivationCounter::reset() {
  g_live = 0;
  g_peak = 0;
}
long ActivationCounter::current() { return g_live; }
long ActivationCounter::peak() { return g_peak; }
void ActivationCounter::add(long delta) {
  g_live += delta;
  if (g_live > g_peak) g_peak = g_live;
}

ActivationToken::ActivationToken() { ActivationCounter::add(1); }
ActivationToken::~ActivationToken() {
  if (live_) ActivationCounter::add(-1);
}
ActivationToken::ActivationToken(ActivationToken&& other) noexcept : live_(other.live_) {
  other.live_ = false;
}
ActivationToken& ActivationToken::operator=(ActivationToken&& other) noexcept {
  if (this != &other) {
    if (live_) ActivationCounter::add(-1);
    live_ = other.live_;
    other.live_ = false;
  }
  return *this;
}

// ---------------------------------------------------------------- MLP

MlpParams MlpParams::zeros(Eigen::Index d, Eigen::Index p) {
  return {Matrix::Zero(p, d), Matrix::Zero(p, d), Vector::Zero(p)};
}

MlpParams MlpParams::random(Eigen::Index d, Eigen::Index p, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MlpParams out = zeros(d, p);
  const double s1 = scale / std::sqrt(static_cast<double>(d));
  const double s2 = scale / std::sqrt(static_cast<double>(p));
  for (Eigen::Index i = 0; i < out.W1.size(); ++i) out.W1(i) = u(rng) * s1;
  for (Eigen::Index i = 0; i < out.W2.size(); ++i) out.W2(i) = u(rng) * s2;
  for (Eigen::Index i = 0; i < out.b.size(); ++i) out.b(i) = u(rng) * s1;
  return out;
}

void MlpParams::validate() const {
  require(W1.rows() == W2.rows() && W1.cols() == W2.cols() && b.size() == W1.rows(),
          "MlpParams: inconsistent shapes W1 " + std::to_string(W1.rows()) + "x" +
              std::to_string(W1.cols()) + ", W2 " + std::to_string(W2.rows()) + "x" +
              std::to_string(W2.cols()) + ", b " + std::to_string(b.size()));
}

Matrix MlpParams::apply(const Matrix& x, const Matrix& /*ctx*/, Cache* cache) const {
  check_state_rows(x.rows(), dim(), "residual_mlp");
  Matrix h = ((W1 * x).colwise() + b).array().tanh().matrix();
  Matrix out = W2.transpose() * h;
  if (cache != nullptr) cache->h = std::move(h);
  return out;
}

Matrix MlpParams::vjp(const Matrix& x, const Matrix& /*ctx*/, const Cache& cache, const Matrix& u,
                      MlpParams& grad) const {
  const Matrix& h = cache.h;
  const Matrix da = ((W2 * u).array() * (1.0 - h.array().square())).matrix();
  grad.W2.noalias() += h * u.transpose();
  grad.W1.noalias() += da * x.transpose();
  grad.b += da.rowwise().sum();
  return W1.transpose() * da;
}

// ---------------------------------------------------------------- LISTA

Matrix soft_threshold(const Matrix& u, double t) {
  require(t >= 0.0, "soft_threshold: negative threshold");
  return u.unaryExpr([t](double a) {
    const double m = std::abs(a) - t;
    return m > 0.0 ? std::copysign(m, a) : 0.0;
  });
}

ListaParams ListaParams::zeros(Eigen::Index p, Eigen::Index d, double threshold) {
  return {Matrix::Zero(p, p), Matrix::Zero(p, d), threshold};
}

ListaParams ListaParams::ista(const Matrix& D, double eta, double lambda) {
  const Eigen::Index p = D.cols();
  return {Matrix::Identity(p, p) - eta * D.transpose() * D, eta * D.transpose(), eta * lambda};
}

void ListaParams::validate() const {
  require(W1.rows() == W1.cols() && W2.rows() == W1.rows(),
          "ListaParams: W1 must be p x p and W2 p x d");
  require(threshold >= 0.0 && std::isfinite(threshold), "ListaParams: bad threshold");
}

Matrix ListaParams::apply(const Matrix& x, const Matrix& y, Cache* cache) const {
  check_state_rows(x.rows(), dim(), "lista_residual");
  require(y.rows() == W2.cols() && y.cols() == x.cols(), "lista_residual: y shape mismatch");
  Matrix a = W1 * x + W2 * y;
  Matrix out = soft_threshold(a, threshold) - x;
  if (cache != nullptr) cache->a = std::move(a);
  return out;
}

Matrix ListaParams::vjp(const Matrix& x, const Matrix& y, const Cache& cache, const Matrix& u,
                        ListaParams& grad) const {
  const double t = threshold;
  const Matrix gs = u.binaryExpr(cache.a, [t](double g, double a) {
    return std::abs(a) > t ? g : 0.0;
  });
  grad.W1.noalias() += gs * x.transpose();
  grad.W2.noalias() += gs * y.transpose();
  return W1.transpose() * gs - u;
}

// ---------------------------------------------------------------- network

std::string to_string(V0Mode mode) { return mode == V0Mode::zero ? "zero" : "residual"; }

V0Mode parse_v0_mode(const std::string& text) {
  if (text == "zero") return V0Mode::zero;
  if (text == "residual") return V0Mode::residual;
  throw std::invalid_argument("unknown v0 mode '" + text + "' (expected zero|residual)");
}

template <class P>
void Network<P>::validate() const {
  require(depth >= 0, "network: negative depth");
  require(frac_bits >= 1 && frac_bits <= 62, "network: frac_bits must lie in [1, 62]");
  if (depth == 0) return;
  require(blocks.size() == 1 || blocks.size() == static_cast<std::size_t>(depth),
          "network: need 1 (tied) or depth blocks, got " + std::to_string(blocks.size()));
  for (const P& blk : blocks) {
    blk.validate();
    require(blk.dim() == blocks.front().dim(), "network: blocks disagree on dimension");
  }
}

MomentumState MomentumState::encode(const Matrix& x, const Matrix& v, int frac_bits) {
  require(x.rows() == v.rows() && x.cols() == v.cols(), "MomentumState: x and v shapes differ");
  MomentumState s;
  s.frac_bits = frac_bits;
  s.x.resize(x.rows(), x.cols());
  s.v.resize(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    s.x(i) = momnet::encode(x(i), frac_bits);
    s.v(i) = momnet::encode(v(i), frac_bits);
  }
  s.buffers.resize(static_cast<std::size_t>(v.size()));
  return s;
}

Matrix MomentumState::decode_x() const { return decode_matrix(x, frac_bits); }
Matrix MomentumState::decode_v() const { return decode_matrix(v, frac_bits); }

bool MomentumState::buffers_empty() const {
  for (const InfoBuffer& b : buffers) {
    if (!b.is_zero()) return false;
  }
  return true;
}

std::size_t MomentumState::max_buffer_bits() const {
  std::size_t m = 0;
  for (const InfoBuffer& b : buffers) m = std::max(m, b.bit_length());
  return m;
}

bool operator==(const MomentumState& a, const MomentumState& b) {
  return a.frac_bits == b.frac_bits && a.x == b.x && a.v == b.v && a.buffers == b.buffers;
}

template <class P>
Matrix resnet_step(const Matrix& x, const P& params, const Matrix& ctx) {
  return x + params.apply(x, ctx);
}

template <class P>
void momentum_step(MomentumState& s, const P& params, Ratio gamma, const Matrix& ctx) {
  check_state_rows(s.x.rows(), params.dim(), "momentum_step");
  Matrix f;
  {
    ActivationToken t_in;
    const Matrix xd = s.decode_x();
    f = params.apply(xd, ctx);
  }
  ActivationToken t_f;
  const double c = gamma.complement();
  const int F = s.frac_bits;
  if (gamma.invertible()) {
    for (Eigen::Index i = 0; i < s.v.size(); ++i) {
      reversible_mul(s.buffers[static_cast<std::size_t>(i)], s.v(i), gamma);
      s.v(i) = checked_add(s.v(i), encode(c * f(i), F));
    }
  } else {
    for (Eigen::Index i = 0; i < s.v.size(); ++i) s.v(i) = encode(c * f(i), F);
  }
  for (Eigen::Index i = 0; i < s.x.size(); ++i) s.x(i) = checked_add(s.x(i), s.v(i));
}

template <class P>
void momentum_inverse_step(MomentumState& s, const P& params, Ratio gamma, const Matrix& ctx,
                           Matrix* x_prev, typename P::Cache* cache) {
  if (!gamma.invertible()) {
    throw std::invalid_argument("momentum_inverse_step: gamma = 0 is not invertible");
  }
  check_state_rows(s.x.rows(), params.dim(), "momentum_inverse_step");
  for (Eigen::Index i = 0; i < s.x.size(); ++i) s.x(i) = checked_sub(s.x(i), s.v(i));
  ActivationToken t_in;
  Matrix xd = s.decode_x();
  ActivationToken t_f;
  const Matrix f = params.apply(xd, ctx, cache);
  const double c = gamma.complement();
  const int F = s.frac_bits;
  for (Eigen::Index i = 0; i < s.v.size(); ++i) {
    s.v(i) = checked_sub(s.v(i), encode(c * f(i), F));
    reversible_mul_inverse(s.buffers[static_cast<std::size_t>(i)], s.v(i), gamma);
  }
  if (x_prev != nullptr) *x_prev = std::move(xd);
}

template <class P>
void momentum_step_float(Matrix& x, Matrix& v, const P& params, double gamma, const Matrix& ctx) {
  const Matrix f = params.apply(x, ctx);
  v = gamma * v + (1.0 - gamma) * f;
  x += v;
}

namespace {

template <class P>
MomentumState initial_state(const Network<P>& net, const Matrix& x0, const Matrix& ctx) {
  net.validate();
  if (net.depth > 0) check_state_rows(x0.rows(), net.block(0).dim(), "forward");
  MomentumState s = MomentumState::encode(x0, Matrix::Zero(x0.rows(), x0.cols()), net.frac_bits);
  if (net.v0_mode == V0Mode::residual && net.depth > 0) {
    ActivationToken t_f;
    const Matrix f0 = net.block(0).apply(s.decode_x(), ctx);
    for (Eigen::Index i = 0; i < f0.size(); ++i) s.v(i) = encode(f0(i), net.frac_bits);
  }
  return s;
}

}  // namespace

template <class P>
ForwardResult forward(const Network<P>& net, const Matrix& x0, const Matrix& ctx) {
  ActivationToken t_x;
  ActivationToken t_v;
  MomentumState s = initial_state(net, x0, ctx);
  for (int k = 0; k < net.depth; ++k) momentum_step(s, net.block(k), net.gamma, ctx);
  Matrix out = s.decode_x();
  return {std::move(out), std::move(s)};
}

template <class P>
Trace forward_recorded(const Network<P>& net, const Matrix& x0, const Matrix& ctx) {
  ActivationToken t_x;
  ActivationToken t_v;
  Trace tr;
  tr.state = initial_state(net, x0, ctx);
  tr.x0 = tr.state.decode_x();
  tr.tokens.emplace_back();
  tr.inputs.reserve(static_cast<std::size_t>(net.depth));
  for (int k = 0; k < net.depth; ++k) {
    tr.inputs.push_back(tr.state.decode_x());
    tr.tokens.emplace_back();
    momentum_step(tr.state, net.block(k), net.gamma, ctx);
  }
  tr.output = tr.state.decode_x();
  return tr;
}

template <class P>
MomentumState inverse(const Network<P>& net, MomentumState state, const Matrix& ctx) {
  net.validate();
  for (int k = net.depth - 1; k >= 0; --k) momentum_inverse_step(state, net.block(k), net.gamma, ctx);
  return state;
}

template <class P>
Matrix forward_float(const Network<P>& net, const Matrix& x0, const Matrix& ctx, double gamma,
                     std::vector<Matrix>* inputs) {
  net.validate();
  require(gamma >= 0.0 && gamma <= 1.0, "forward_float: gamma must lie in [0, 1]");
  Matrix x = x0;
  Matrix v = Matrix::Zero(x0.rows(), x0.cols());
  if (net.v0_mode == V0Mode::residual && net.depth > 0) v = net.block(0).apply(x, ctx);
  if (inputs != nullptr) inputs->clear();
  for (int k = 0; k < net.depth; ++k) {
    if (inputs != nullptr) inputs->push_back(x);
    momentum_step_float(x, v, net.block(k), gamma, ctx);
  }
  return x;
}

// ---------------------------------------------------------------- RevNet

template <class P>
void RevNetwork<P>::validate() const {
  require(phi.size() == psi.size(), "revnet: phi and psi depths differ");
  for (std::size_t k = 0; k < phi.size(); ++k) {
    phi[k].validate();
    psi[k].validate();
  }
}

template <class P>
void revnet_step(Matrix& x, Matrix& v, const P& phi, const P& psi, const Matrix& ctx) {
  require(x.rows() == v.rows() && x.cols() == v.cols(), "revnet_step: x and v shapes differ");
  v += phi.apply(x, ctx);
  x += psi.apply(v, ctx);
}

template <class P>
void revnet_inverse_step(Matrix& x, Matrix& v, const P& phi, const P& psi, const Matrix& ctx) {
  x -= psi.apply(v, ctx);
  v -= phi.apply(x, ctx);
}

template <class P>
RevTrace revnet_forward(const RevNetwork<P>& net, const Matrix& x0, const Matrix& v0,
                        const Matrix& ctx) {
  net.validate();
  RevTrace tr;
  Matrix x = x0;
  Matrix v = v0;
  tr.x.push_back(x);
  tr.v.push_back(v);
  for (int k = 0; k < net.depth(); ++k) {
    revnet_step(x, v, net.phi[static_cast<std::size_t>(k)], net.psi[static_cast<std::size_t>(k)],
                ctx);
    tr.x.push_back(x);
    tr.v.push_back(v);
  }
  return tr;
}

#define MOMNET_INSTANTIATE(P)                                                                     \
  template struct Network<P>;                                                                     \
  template struct RevNetwork<P>;                                                                  \
  template Matrix resnet_step<P>(const Matrix&, const P&, const Matrix&);                         \
  template void momentum_step<P>(MomentumState&, const P&, Ratio, const Matrix&);                 \
  template void momentum_inverse_step<P>(MomentumState&, const P&, Ratio, const Matrix&, Matrix*, \
                                         P::Cache*);                                              \
  template void momentum_step_float<P>(Matrix&, Matrix&, const P&, double, const Matrix&);        \
  template ForwardResult forward<P>(const Network<P>&, const Matrix&, const Matrix&);             \
  template Trace forward_recorded<P>(const Network<P>&, const Matrix&, const Matrix&);            \
  template MomentumState inverse<P>(const Network<P>&, MomentumState, const Matrix&);             \
  template Matrix forward_float<P>(const Network<P>&, const Matrix&, const Matrix&, double,       \
                                   std::vector<Matrix>*);                                         \
  template void revnet_step<P>(Matrix&, Matrix&, const P&, const P&, const Matrix&);              \
  template void revnet_inverse_step<P>(Matrix&, Matrix&, const P&, const P&, const Matrix&);      \
  template RevTrace revnet_forward<P>(const RevNetwork<P>&, const Matrix&, const Matrix&,         \
                                      const Matrix&);

MOMNET_INSTANTIATE(MlpParams)
MOMNET_INSTANTIATE(ListaParams)

#undef MOMNET_INSTANTIATE

// ---------------------------------------------------------------- checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes little-endian");

constexpr char kMagic[4] = {'M', 'R', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindMlp = 1;
constexpr std::uint32_t kKindLista = 2;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open " + path.string());
  }
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_matrix(const Matrix& m) {
    put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(m(i, j));
    }
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint: write failed");
  }
  std::ofstream& raw() { return out_; }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw std::runtime_error("checkpoint: truncated file");
    return v;
  }
  Matrix get_matrix() {
    const auto rows = get<std::uint32_t>();
    const auto cols = get<std::uint32_t>();
    if (rows > 4096 || cols > 4096) throw std::runtime_error("checkpoint: implausible shape");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get<double>();
    }
    return m;
  }
  std::ifstream& raw() { return in_; }

 private:
  std::ifstream in_;
};

template <class P>
void write_header(Writer& w, const Network<P>& net, std::uint32_t kind) {
  net.validate();
  w.raw().write(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(kind);
  w.put<std::int64_t>(net.gamma.n);
  w.put<std::int64_t>(net.gamma.d);
  w.put<std::int32_t>(net.frac_bits);
  w.put<std::uint8_t>(net.v0_mode == V0Mode::zero ? 0 : 1);
  w.put<std::uint8_t>(net.tied() ? 1 : 0);
  w.put<std::int32_t>(net.depth);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.blocks.size()));
}

template <class P>
std::uint32_t read_header(Reader& r, Network<P>& net, std::uint32_t expected_kind) {
  char magic[4];
  r.raw().read(magic, 4);
  if (!r.raw() || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (r.get<std::uint32_t>() != kVersion) throw std::runtime_error("checkpoint: unknown version");
  if (r.get<std::uint32_t>() != expected_kind) throw std::runtime_error("checkpoint: wrong kind");
  const auto n = r.get<std::int64_t>();
  const auto d = r.get<std::int64_t>();
  net.gamma = Ratio::make(n, d);
  net.frac_bits = r.get<std::int32_t>();
  net.v0_mode = r.get<std::uint8_t>() == 0 ? V0Mode::zero : V0Mode::residual;
  (void)r.get<std::uint8_t>();  // tied flag, implied by the block count
  net.depth = r.get<std::int32_t>();
  return r.get<std::uint32_t>();
}

}  // namespace

void save_checkpoint(const MlpNetwork& net, const std::filesystem::path& path) {
  Writer w(path);
  write_header(w, net, kKindMlp);
  for (const MlpParams& p : net.blocks) {
    w.put_matrix(p.W1);
    w.put_matrix(p.W2);
    w.put_matrix(p.b);
  }
  w.finish();
}

void save_checkpoint(const ListaNetwork& net, const std::filesystem::path& path) {
  Writer w(path);
  write_header(w, net, kKindLista);
  for (const ListaParams& p : net.blocks) {
    w.put_matrix(p.W1);
    w.put_matrix(p.W2);
    w.put<double>(p.threshold);
  }
  w.finish();
}

MlpNetwork load_mlp_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  MlpNetwork net;
  const std::uint32_t count = read_header(r, net, kKindMlp);
  for (std::uint32_t k = 0; k < count; ++k) {
    MlpParams p;
    p.W1 = r.get_matrix();
    p.W2 = r.get_matrix();
    p.b = r.get_matrix();
    net.blocks.push_back(std::move(p));
  }
  net.validate();
  return net;
}

ListaNetwork load_lista_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  ListaNetwork net;
  const std::uint32_t count = read_header(r, net, kKindLista);
  for (std::uint32_t k = 0; k < count; ++k) {
    ListaParams p;
    p.W1 = r.get_matrix();
    p.W2 = r.get_matrix();
    p.threshold = r.get<double>();
    net.blocks.push_back(std::move(p));
  }
  net.validate();
  return net;
}

}  // namespace momnet
