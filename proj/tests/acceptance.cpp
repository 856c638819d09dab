// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance <path-to-momrev> [work-dir]
// Exit status 0 only when every criterion passes.

#include "momnet/autodiff.hpp"
#include "momnet/experiments.hpp"
#include "momnet/lintheory.hpp"
#include "momnet/odesim.hpp"
#include "oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

using namespace momnet;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kTimeInvert = 30.0;          // s
constexpr double kFdTol = 1e-4;               // relative
constexpr double kMemFreeTol = 1e-10;         // relative
constexpr long kPeakActivations = 4;
constexpr double kPsiIdTol = 1e-12;
constexpr double kPsiExpTol = 1e-2;
constexpr double kPsiDualTol = 1e-10;
constexpr double kLambdaGridTol = 1e-9;
constexpr double kLambdaSmallEps = 0.05;
constexpr double kLambdaLo = -1.0, kLambdaHi = -0.85;
constexpr double kNecessaryTol = 1e-8;
constexpr double kProductTol = 1e-8;
constexpr double kB4Tol = 1e-3;
constexpr double kCrossTol = 1e-6;
constexpr double kTimeRings = 120.0;          // s, all seeds
constexpr double kCubicRatio = 0.2;
constexpr double kTimeLista = 600.0;          // s

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

MlpNetwork random_net(std::mt19937_64& rng, int d, int p, int depth, Ratio gamma, double scale,
                      V0Mode mode = V0Mode::zero) {
  MlpNetwork net;
  net.depth = depth;
  net.gamma = gamma;
  net.v0_mode = mode;
  for (int k = 0; k < depth; ++k) net.blocks.push_back(MlpParams::random(d, p, scale, rng));
  return net;
}

// ---------------------------------------------------------------- 1

void c1_invertibility() {
  std::mt19937_64 rng(1);
  const MlpNetwork net = random_net(rng, 64, 64, 1000, {9, 10}, 0.5);
  oracle::Gen gen(2);
  const Matrix x0 = gen.matrix(64, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const ForwardResult fr = forward(net, x0, Matrix());
  const MomentumState back = inverse(net, fr.state, Matrix());
  const double dt = seconds_since(t0);
  const MomentumState want = MomentumState::encode(x0, Matrix::Zero(64, 1), 32);
  const bool exact = back == want && back.buffers_empty();
  report(1, exact && dt < kTimeInvert, fmt("exact=%d time=%.2fs", exact, dt));
}

// ---------------------------------------------------------------- 2

void c2_memory() {
  MemcheckConfig cfg;
  const auto rows = run_memcheck(cfg);
  bool bits_ok = true, peak_ok = true;
  long peak_ref = -1;
  std::ostringstream d;
  for (const auto& r : rows) {
    if (peak_ref < 0) peak_ref = r.peak_memory_free;
    peak_ok = peak_ok && r.peak_memory_free <= kPeakActivations && r.peak_memory_free == peak_ref &&
              r.round_trip_exact;
    if (r.depth != 1000) continue;
    const bool in = static_cast<double>(r.min_bits) >= r.predicted_bits &&
                    static_cast<double>(r.max_bits) <= r.upper_bits;
    bits_ok = bits_ok && in;
    d << fmt("g=%s bits=[%zu,%zu] window=[%.1f,%.1f]; ", r.gamma.str().c_str(), r.min_bits,
             r.max_bits, r.predicted_bits, r.upper_bits);
  }
  d << fmt("peak=%ld", peak_ref);
  report(2, bits_ok && peak_ok, d.str());
}

// ---------------------------------------------------------------- 3

void c3_gradients() {
  oracle::Gen gen(3);
  const double h = 1e-5;
  double worst_fd = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = gen.integer(1, 5), p = gen.integer(2, 8), B = gen.integer(1, 3);
    const double gamma = gen.uniform(0.0, 1.0);
    const MlpParams prm = MlpParams::random(d, p, 1.0, gen.rng);
    const Matrix x0 = gen.matrix(d, B), v0 = gen.matrix(d, B);
    const Matrix a = gen.matrix(d, B), b = gen.matrix(d, B);
    auto loss_at = [&](const MlpParams& q, const Matrix& x, const Matrix& v) {
      Matrix xs = x, vs = v;
      momentum_step_float(xs, vs, q, gamma, Matrix());
      return (a.array() * xs.array()).sum() + (b.array() * vs.array()).sum();
    };
    MlpParams grad = MlpParams::zeros(d, p);
    const Cotangent out = block_backward({a, b}, x0, prm, gamma, Matrix(), grad);
    Matrix fx(d, B), fv(d, B);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      Matrix up = x0, dn = x0;
      up(i) += h;
      dn(i) -= h;
      fx(i) = (loss_at(prm, up, v0) - loss_at(prm, dn, v0)) / (2 * h);
      up = v0;
      dn = v0;
      up(i) += h;
      dn(i) -= h;
      fv(i) = (loss_at(prm, x0, up) - loss_at(prm, x0, dn)) / (2 * h);
    }
    const auto fp = finite_diff_loss_grad<MlpParams>(
        [&](const std::vector<MlpParams>& ps) { return loss_at(ps[0], x0, v0); }, {prm}, h);
    const double pd = std::max({(grad.W1 - fp[0].W1).cwiseAbs().maxCoeff(),
                                (grad.W2 - fp[0].W2).cwiseAbs().maxCoeff(),
                                (grad.b - fp[0].b).cwiseAbs().maxCoeff()}) /
                      std::max({fp[0].W1.cwiseAbs().maxCoeff(), fp[0].W2.cwiseAbs().maxCoeff(),
                                fp[0].b.cwiseAbs().maxCoeff()});
    worst_fd = std::max({worst_fd, rel(out.grad_x, fx), rel(out.grad_v, fv), pd});
  }

  std::mt19937_64 rng(4);
  double worst_mf = 0.0;
  for (int depth : {1, 10, 100}) {
    for (const Ratio gamma : {Ratio{1, 2}, Ratio{9, 10}}) {
      const MlpNetwork net = random_net(rng, 4, 8, depth, gamma, 1.0);
      const Matrix x0 = gen.matrix(4, 3);
      const Cotangent cot{gen.matrix(4, 3), gen.matrix(4, 3)};
      const auto mf = backward_memory_free(net, forward(net, x0, Matrix()).state, cot, Matrix());
      const auto st = backward_stored(net, forward_recorded(net, x0, Matrix()), cot, Matrix());
      worst_mf = std::max({worst_mf, max_relative_deviation(mf.grads, st.grads, 1e-300),
                           rel(mf.grad_x0, st.grad_x0)});
    }
  }
  report(3, worst_fd <= kFdTol && worst_mf <= kMemFreeTol,
         fmt("fd=%.2e memory-free-vs-stored=%.2e", worst_fd, worst_mf));
}

// ---------------------------------------------------------------- 4

void c4_psi() {
  double id_err = 0.0;
  for (double eps : {0.01, 0.1, 1.0, 10.0}) {
    for (int d : {1, 3, 5}) {
      id_err = std::max(id_err, (psi_eps({Matrix::Zero(d, d), eps}) - Matrix::Identity(d, d)).cwiseAbs().maxCoeff());
    }
  }
  oracle::Gen gen(5);
  double exp_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix theta = gen.matrix_with_norm(gen.integer(1, 5), gen.uniform(0.0, 1.0));
    exp_err = std::max(exp_err, (psi_eps({theta, 1e-4}) - oracle::expm_taylor(theta)).norm());
  }
  double dual = 0.0;
  int compared = 0;
  for (int t = 0; t < 100; ++t) {
    const Matrix theta = gen.matrix_with_norm(gen.integer(1, 5), gen.uniform(0.0, 5.0));
    const double eps = std::exp(gen.uniform(std::log(0.05), std::log(10.0)));
    if (!series_in_range(theta, eps)) continue;
    ++compared;
    const Matrix blk = psi_eps_block(theta, eps);
    dual = std::max(dual, (psi_eps_series(theta, eps) - blk).norm() / std::max(1.0, blk.norm()));
  }
  report(4, id_err <= kPsiIdTol && exp_err <= kPsiExpTol && dual <= kPsiDualTol && compared >= 80,
         fmt("id=%.1e exp=%.2e dual=%.1e (%d/100 in series range)", id_err, exp_err, dual, compared));
}

// ---------------------------------------------------------------- 5

void c5_lambda() {
  const std::vector<double> grid{0.01, 0.1, 0.5, 1, 2, 5, 10};
  bool mono = true, band = true;
  double prev = 0.0, grid_err = 0.0;
  std::ostringstream d;
  for (double eps : grid) {
    const double l = lambda_eps(eps);
    mono = mono && l <= prev;
    prev = l;
    if (eps >= 2) {
      band = band && l >= kLambdaLo && l <= kLambdaHi;
      d << fmt("l(%g)=%.4f ", eps, l);
    }
    const auto g = oracle::grid_min([eps](double a) { return g_eps(a, eps); }, 1e-9, 8.0 * std::numbers::pi, 1000000);
    grid_err = std::max(grid_err, std::abs(l - g.value));
  }
  const double small = std::abs(lambda_eps(0.01));
  d << fmt("|l(0.01)|=%.1e grid=%.1e monotone=%d", small, grid_err, mono);
  report(5, mono && band && small <= kLambdaSmallEps && grid_err <= kLambdaGridTol, d.str());
}

// ---------------------------------------------------------------- 6

Matrix planted(oracle::Gen& gen, const std::vector<double>& reals) {
  const auto n = static_cast<Eigen::Index>(reals.size());
  Matrix P = gen.matrix(n, n);
  while (hadamard_ratio(P) < 0.1) P = gen.matrix(n, n);
  Matrix core = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) core(i, i) = reals[static_cast<std::size_t>(i)];
  return P * core * P.inverse();
}

void c6_theorem() {
  oracle::Gen gen(6);
  const std::vector<std::vector<double>> battery = {
      {1, 2},      {-1, -1},     {-1, -2},     {-1, 2},          {0.5, 0.5},
      {-3, -3, 1}, {-3, 1, 1},   {-2, -2, -2}, {-2, -2, -2, -2}, {4, -1, -1, -5},
      {1, 0},      {-0.1, -0.1}, {2, 3, 4},    {-4, -4, -4, 3},  {-1, -1, -2, -2},
      {0.2, -0.2}, {7},          {-7},         {-1, -1, 1, 1},   {-1, -2, -2, -1, -3}};
  int agree = 0;
  for (const auto& sp : battery) {
    bool culver = true;
    for (double r : sp) {
      if (r == 0.0 || (r < 0.0 && std::count(sp.begin(), sp.end(), r) % 2 != 0)) culver = false;
    }
    agree += representable(planted(gen, sp), 0.0).representable == culver;
  }
  bool threshold = true;
  for (double eps : {0.01, 2.0}) {
    const double lam = lambda_eps(eps);
    Matrix s(1, 1);
    for (double off : {1e-3, 1e-5}) {
      s(0, 0) = lam + off;
      threshold = threshold && representable(s, eps).representable;
      s(0, 0) = lam - off;
      threshold = threshold && !representable(s, eps).representable;
    }
  }
  int violations = 0;
  for (double eps : {0.01, 2.0}) {
    const double lam = lambda_eps(eps);
    for (int t = 0; t < 500; ++t) {
      const Matrix theta = gen.matrix(3, 3, gen.uniform(0.1, 3.0));
      const Spectrum sp = eigenvalues(theta);
      for (const Complex& z : sp.values) {
        if (std::abs(z.imag()) <= sp.tolerance && psi_eps_scalar(z.real(), eps) < lam - kNecessaryTol) ++violations;
      }
    }
  }
  report(6, agree == 20 && threshold && violations == 0,
         fmt("battery=%d/20 threshold=%d necessary-violations=%d", agree, threshold, violations));
}

// ---------------------------------------------------------------- 7

void c7_revnet() {
  oracle::Gen gen(7);
  int unstable = 0, total = 0;
  double product = 0.0;
  for (int d : {2, 5, 10}) {
    const int want = d == 10 ? 334 : 333;
    for (int t = 0; t < want;) {
      const Matrix A = gen.matrix(d, d), B = gen.matrix(d, d);
      const auto rep = revnet_instability_check(A, B);
      if (!rep.hypothesis_met) continue;
      ++t;
      ++total;
      unstable += rep.unstable;
      product = std::max(product, paired_root_product_error(A, B));
    }
  }
  report(7, unstable == total && total == 1000 && product <= kProductTol,
         fmt("unstable=%d/%d product-error=%.1e", unstable, total, product));
}

// ---------------------------------------------------------------- 8

void c8_ode() {
  const OdeCheck oc = run_odecheck(1e-3);
  double b4 = 0.0;
  for (const auto& r : oc.b4) b4 = std::max(b4, r.rel_error);
  double cross = 0.0, cross_int = 0.0;
  for (const auto& r : oc.crossing) {
    cross = std::max(cross, std::abs(r.closed_at_pi));
    cross_int = std::max(cross_int, r.max_error);
  }
  bool dec = true;
  for (const char* ex : {"prop2", "b1"}) {
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& r : oc.convergence) {
      if (r.experiment != ex) continue;
      dec = dec && r.sup_error < prev;
      prev = r.sup_error;
    }
  }
  report(8, b4 <= kB4Tol && cross <= kCrossTol && dec,
         fmt("b4=%.1e crossing=%.1e (integrator vs closed form %.1e) decreasing=%d", b4, cross, cross_int, dec));
}

// ---------------------------------------------------------------- 9

void c9_rings() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::ostringstream d;
  for (std::uint64_t seed : {0, 1, 2}) {
    RingsConfig cfg;
    cfg.seed = seed;
    const RingsResult r = run_rings(cfg);
    ok = ok && r.momentum.first_perfect >= 0 && r.resnet.best_accuracy < 1.0;
    d << fmt("seed%d: momentum@%d resnet-best=%.3f; ", static_cast<int>(seed), r.momentum.first_perfect,
             r.resnet.best_accuracy);
  }
  const double dt = seconds_since(t0);
  d << fmt("time=%.0fs", dt);
  report(9, ok && dt < kTimeRings, d.str());
}

// ---------------------------------------------------------------- 10

void c10_cubic() {
  bool ok = true;
  std::ostringstream d;
  for (std::uint64_t seed : {0, 1, 2}) {
    CubicConfig cfg;
    cfg.seed = seed;
    const CubicResult r = run_cubic(cfg);
    ok = ok && r.momentum.final_mse <= kCubicRatio * r.resnet.final_mse;
    d << fmt("seed%d: %.4f vs %.4f; ", static_cast<int>(seed), r.momentum.final_mse, r.resnet.final_mse);
  }
  report(10, ok, d.str());
}

// ---------------------------------------------------------------- 11

void c11_lista() {
  const auto t0 = std::chrono::steady_clock::now();
  const ListaConfig cfg;
  const ListaResult r = run_lista(cfg);
  const double dt = seconds_since(t0);
  // A diverged run has no finite loss; it ranks above every finite one.
  auto loss = [&](int depth, const char* model) {
    const ListaRow& row = r.find(depth, model);
    return row.diverged || !std::isfinite(row.test_loss) ? std::numeric_limits<double>::infinity() : row.test_loss;
  };
  bool rev_ok = true, lista_ok = true;
  std::ostringstream d;
  for (int depth : cfg.depths) {
    const double m = loss(depth, "momentum"), l = loss(depth, "lista"), v = loss(depth, "revnet");
    if (depth >= 10) rev_ok = rev_ok && m < v;
    if (depth >= 20) lista_ok = lista_ok && m <= l;
    if (depth >= 10) d << fmt("d%d: mom=%.4f lista=%.4f rev=%.4g; ", depth, m, l, v);
  }
  d << fmt("time=%.0fs", dt);
  report(11, rev_ok && lista_ok && dt < kTimeLista, d.str());
}

// ---------------------------------------------------------------- 12

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void c12_determinism(const std::string& momrev, const fs::path& work) {
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train-rings", "--seed 1 train-rings --iterations 150 --eval-every 50"},
      {"train-cubic", "--seed 2 train-cubic --iterations 150"},
      {"lista", "lista --depths 2 5 --iterations 40 --n-train 300 --n-test 100"},
      {"memcheck", "memcheck --depths 10 50"},
      {"analyze-linear", "analyze-linear --trials 30"},
      {"odecheck", "odecheck --step 1e-3"},
  };
  bool ok = true;
  int files = 0;
  std::ostringstream d;
  for (const auto& [name, args] : commands) {
    const fs::path a = work / (name + "_a"), b = work / (name + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    const std::string first = "env -u MOMREV_OUT " + momrev + " --out-dir " + a.string() + " " + args + " > /dev/null";
    const std::string again = "env -u MOMREV_OUT " + momrev + " rerun " + (a / "manifest.json").string() +
                              " --to " + b.string() + " > /dev/null";
    if (std::system(first.c_str()) != 0 || std::system(again.c_str()) != 0) {
      ok = false;
      d << name << ": command failed; ";
      continue;
    }
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    bool same = manifest.at("status") == "ok";
    for (const auto& out : manifest.at("outputs")) {
      const std::string fa = slurp(a / out.get<std::string>());
      same = same && !fa.empty() && fa == slurp(b / out.get<std::string>());
      ++files;
    }
    if (!same) d << name << ": differs; ";
    ok = ok && same;
  }
  d << fmt("%zu commands, %d files compared", commands.size(), files);
  report(12, ok, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <momrev> [work-dir]\n");
    return 2;
  }
  const std::string momrev = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "momnet_acceptance";
  fs::create_directories(work);

  c1_invertibility();
  c2_memory();
  c3_gradients();
  c4_psi();
  c5_lambda();
  c6_theorem();
  c7_revnet();
  c8_ode();
  c9_rings();
  c10_cubic();
  c11_lista();
  c12_determinism(momrev, work);

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
