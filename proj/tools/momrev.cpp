// momrev: batch entry point for the experiments. Every command writes CSV
// files and a manifest.json into the output directory.

#include "momnet/experiments.hpp"
#include "momnet/odesim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef MOMREV_VERSION
#define MOMREV_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace momnet;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitDivergence = 2;

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Minimal RFC 4180 writer; the fields we emit never need quoting except
// model names, which are plain identifiers.
class Csv {
 public:
  Csv(const fs::path& path, std::vector<std::string> header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = "momrev_out";
  std::string gamma = "9/10";
  bool gamma_given = false;
  int frac_bits = kDefaultFracBits;
  std::optional<int> depth;
  std::optional<int> epochs;
  int threads = 1;
};

class Run {
 public:
  Run(std::string command, const Globals& g, std::vector<std::string> argv)
      : dir_(g.out_dir), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir_);
    manifest_["command"] = std::move(command);
    manifest_["argv"] = std::move(argv);
    manifest_["seed"] = g.seed;
    manifest_["version"] = MOMREV_VERSION;
    manifest_["config"] = json::object();
    manifest_["outputs"] = json::array();
    manifest_["status"] = "running";
  }

  json& config() { return manifest_["config"]; }
  void begin() { write(); }

  fs::path output(const std::string& name) {
    manifest_["outputs"].push_back(name);
    return dir_ / name;
  }

  void finish(const std::string& status, const std::string& error = {}) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest_["status"] = status;
    if (!error.empty()) manifest_["error"] = error;
    manifest_["duration_s"] = secs;
    write();
  }

 private:
  void write() const {
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << manifest_.dump(2) << '\n';
  }

  fs::path dir_;
  json manifest_;
  std::chrono::steady_clock::time_point start_;
};

void write_history(Run& run, const std::string& name, const TrainHistory& h) {
  Csv csv(run.output(name), {"iteration", "train_loss", "test_loss"});
  for (const LossPoint& p : h.points) csv.row({std::to_string(p.iteration), num(p.train_loss), num(p.test_loss)});
}

int iterations_for(const Globals& g, int iterations, int n_train, int batch) {
  if (!g.epochs) return iterations;
  if (*g.epochs < 0) throw std::invalid_argument("--epochs must be non-negative");
  const int per_epoch = (n_train + batch - 1) / batch;
  return *g.epochs * per_epoch;
}

// ---------------------------------------------------------------- commands

void cmd_rings(Run& run, const Globals& g, RingsConfig cfg, const std::string& v0) {
  cfg.seed = g.seed;
  cfg.gamma = Ratio::parse(g.gamma);
  cfg.frac_bits = g.frac_bits;
  cfg.threads = g.threads;
  if (g.depth) cfg.depth = *g.depth;
  cfg.v0_mode = parse_v0_mode(v0);
  cfg.iterations = iterations_for(g, cfg.iterations,
                                  cfg.n_per_ring * static_cast<int>(cfg.radii.size()), cfg.batch_size);
  run.config() = {{"depth", cfg.depth},         {"gamma", cfg.gamma.str()},
                  {"frac_bits", cfg.frac_bits}, {"hidden", cfg.hidden},
                  {"n_per_ring", cfg.n_per_ring}, {"radii", cfg.radii},
                  {"noise", cfg.noise},         {"init_scale", cfg.init_scale},
                  {"v0", to_string(cfg.v0_mode)}, {"iterations", cfg.iterations},
                  {"batch", cfg.batch_size},    {"lr", cfg.learning_rate},
                  {"optimizer_momentum", cfg.optimizer_momentum},
                  {"eval_every", cfg.eval_every}, {"threads", cfg.threads}};
  run.begin();
  const RingsResult res = run_rings(cfg);

  Csv summary(run.output("rings_summary.csv"),
              {"model", "final_accuracy", "best_accuracy", "first_perfect_iteration"});
  Csv acc(run.output("rings_accuracy.csv"), {"model", "iteration", "accuracy"});
  for (const RingsModelResult* r : {&res.momentum, &res.resnet}) {
    summary.row({r->model, num(r->final_accuracy), num(r->best_accuracy), std::to_string(r->first_perfect)});
    for (const AccuracyPoint& p : r->accuracy) acc.row({r->model, std::to_string(p.iteration), num(p.accuracy)});
    write_history(run, "rings_loss_" + r->model + ".csv", r->history);
    Csv cloud(run.output("rings_clouds_" + r->model + ".csv"), {"layer", "sample", "label", "x0", "x1"});
    for (std::size_t k = 0; k < r->clouds.size(); ++k) {
      const Matrix& m = r->clouds[k];
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        cloud.row({std::to_string(k), std::to_string(j), num(res.data.Y(0, j)), num(m(0, j)), num(m(1, j))});
      }
    }
  }
}

void cmd_cubic(Run& run, const Globals& g, CubicConfig cfg, const std::string& v0) {
  cfg.v0_mode = parse_v0_mode(v0);
  cfg.seed = g.seed;
  cfg.gamma = Ratio::parse(g.gamma);
  cfg.frac_bits = g.frac_bits;
  cfg.threads = g.threads;
  if (g.depth) cfg.depth = *g.depth;
  cfg.iterations = iterations_for(g, cfg.iterations, cfg.n_train, cfg.batch_size);
  run.config() = {{"depth", cfg.depth},       {"gamma", cfg.gamma.str()},
                  {"frac_bits", cfg.frac_bits}, {"hidden", cfg.hidden},
                  {"n_train", cfg.n_train},   {"n_test", cfg.n_test},
                  {"lo", cfg.lo},             {"hi", cfg.hi},
                  {"init_scale", cfg.init_scale}, {"feature_scale", cfg.feature_scale},
                  {"v0", to_string(cfg.v0_mode)}, {"iterations", cfg.iterations},
                  {"batch", cfg.batch_size},  {"lr", cfg.learning_rate},
                  {"optimizer_momentum", cfg.optimizer_momentum},
                  {"eval_every", cfg.eval_every}, {"threads", cfg.threads}};
  run.begin();
  const CubicResult res = run_cubic(cfg);

  Csv summary(run.output("cubic_summary.csv"), {"model", "final_mse", "min_pairwise_gap"});
  Csv traj(run.output("cubic_trajectories.csv"), {"model", "layer", "sample", "x"});
  for (const CubicModelResult* r : {&res.momentum, &res.resnet}) {
    summary.row({r->model, num(r->final_mse), num(r->min_pairwise_gap)});
    write_history(run, "cubic_loss_" + r->model + ".csv", r->history);
    for (std::size_t k = 0; k < r->trajectories.size(); ++k) {
      const Matrix& m = r->trajectories[k];
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        traj.row({r->model, std::to_string(k), std::to_string(j), num(m(0, j))});
      }
    }
  }
}

void cmd_lista(Run& run, const Globals& g, ListaConfig cfg) {
  cfg.seed = g.seed;
  cfg.gamma = Ratio::parse(g.gamma);
  cfg.frac_bits = g.frac_bits;
  cfg.threads = g.threads;
  if (g.depth) cfg.depths = {*g.depth};
  cfg.iterations = iterations_for(g, cfg.iterations, cfg.n_train, cfg.batch_size);
  run.config() = {{"d", cfg.d},           {"p", cfg.p},
                  {"lambda", cfg.lasso_lambda}, {"n_train", cfg.n_train},
                  {"n_test", cfg.n_test}, {"depths", cfg.depths},
                  {"gamma", cfg.gamma.str()}, {"frac_bits", cfg.frac_bits},
                  {"iterations", cfg.iterations}, {"batch", cfg.batch_size},
                  {"lr", cfg.learning_rate}, {"optimizer_momentum", cfg.optimizer_momentum},
                  {"eval_every", cfg.eval_every}, {"threads", cfg.threads}};
  run.begin();
  const ListaResult res = run_lista(cfg);

  Csv table(run.output("lista.csv"), {"depth", "model", "initial_test_loss", "test_loss", "diverged"});
  for (const ListaRow& r : res.rows) {
    table.row({std::to_string(r.depth), r.model, num(r.initial_test_loss), num(r.test_loss),
               r.diverged ? "1" : "0"});
    if (r.model != "ista") {
      write_history(run, "lista_loss_" + r.model + "_" + std::to_string(r.depth) + ".csv", r.history);
    }
  }
}

void cmd_memcheck(Run& run, const Globals& g, MemcheckConfig cfg, const std::vector<std::string>& gammas) {
  cfg.seed = g.seed;
  cfg.frac_bits = g.frac_bits;
  if (g.depth) cfg.depths = {*g.depth};
  if (!gammas.empty()) {
    cfg.gammas.clear();
    for (const std::string& s : gammas) cfg.gammas.push_back(Ratio::parse(s));
  } else if (g.gamma_given) {
    cfg.gammas = {Ratio::parse(g.gamma)};
  }
  json gj = json::array();
  for (const Ratio& r : cfg.gammas) gj.push_back(r.str());
  run.config() = {{"depths", cfg.depths}, {"gammas", gj},          {"dim", cfg.dim},
                  {"hidden", cfg.hidden}, {"batch", cfg.batch},    {"frac_bits", cfg.frac_bits}};
  run.begin();
  const auto rows = run_memcheck(cfg);
  Csv csv(run.output("memcheck.csv"),
          {"depth", "gamma", "predicted_bits", "upper_bits", "min_bits", "max_bits", "mean_bits",
           "peak_memory_free", "peak_stored", "round_trip_exact"});
  for (const MemcheckRow& r : rows) {
    csv.row({std::to_string(r.depth), r.gamma.str(), num(r.predicted_bits), num(r.upper_bits),
             std::to_string(r.min_bits), std::to_string(r.max_bits), num(r.mean_bits),
             std::to_string(r.peak_memory_free), std::to_string(r.peak_stored),
             r.round_trip_exact ? "1" : "0"});
  }
}

void cmd_linear(Run& run, const Globals& g, std::vector<double> eps_grid, int trials) {
  run.config() = {{"eps_grid", eps_grid}, {"trials", trials}};
  run.begin();
  const LinearAnalysis a = run_analyze_linear(g.seed, eps_grid, trials);
  Csv lam(run.output("lambda_eps.csv"), {"eps", "lambda_eps"});
  for (const LambdaRow& r : a.lambdas) lam.row({num(r.eps), num(r.lambda)});
  Csv bat(run.output("representability.csv"), {"eps", "l1", "l2", "representable", "expected"});
  for (const BatteryRow& r : a.battery) {
    bat.row({num(r.eps), num(r.l1), num(r.l2), r.representable ? "1" : "0", r.expected ? "1" : "0"});
  }
  Csv p1(run.output("revnet_instability.csv"),
         {"dim", "trials", "unstable", "hypothesis_met", "max_product_error"});
  for (const Prop1Row& r : a.prop1) {
    p1.row({std::to_string(r.dim), std::to_string(r.trials), std::to_string(r.unstable),
            std::to_string(r.hypothesis_met), num(r.max_product_error)});
  }
}

void cmd_odecheck(Run& run, double h) {
  run.config() = {{"h", h}};
  run.begin();
  const OdeCheck c = run_odecheck(h);
  Csv b4(run.output("damped_closed_form.csv"), {"eps", "h", "numeric", "closed_form", "rel_error"});
  for (const B4Row& r : c.b4) b4.row({num(r.eps), num(r.h), num(r.numeric), num(r.closed), num(r.rel_error)});
  Csv conv(run.output("convergence.csv"), {"experiment", "eps", "sup_error", "sup_error_fine"});
  for (const ConvergenceRow& r : c.convergence) {
    conv.row({r.experiment, num(r.eps), num(r.sup_error), num(r.sup_error_fine)});
  }
  Csv cross(run.output("crossing.csv"), {"eps", "x0", "closed_at_pi", "integrated_at_pi", "max_error"});
  for (const CrossingRow& r : c.crossing) {
    cross.row({num(r.eps), num(r.x0), num(r.closed_at_pi), num(r.integrated_at_pi), num(r.max_error)});
  }
  Csv emb(run.output("embedding.csv"), {"max_error"});
  emb.row({num(c.embedding_error)});
}

// ---------------------------------------------------------------- driver

int run_cli(std::vector<std::string> args);

int rerun(const std::string& manifest_path, const std::optional<std::string>& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw std::invalid_argument("cannot read manifest " + manifest_path);
  const json m = json::parse(in);
  std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
  if (out_dir) {
    for (auto it = args.begin(); it != args.end();) {
      if (*it == "--out-dir" && std::next(it) != args.end()) {
        it = args.erase(it, std::next(it, 2));
      } else if (it->rfind("--out-dir=", 0) == 0) {
        it = args.erase(it);
      } else {
        ++it;
      }
    }
    args.push_back("--out-dir");
    args.push_back(*out_dir);
  }
  return run_cli(std::move(args));
}

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Momentum residual network experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out-dir", g.out_dir, "Output directory (MOMREV_OUT overrides)");
  app.add_option("--gamma", g.gamma, "Momentum as N/D");
  app.add_option("--frac-bits", g.frac_bits, "Fixed-point fraction bits")->check(CLI::Range(1, 62));
  app.add_option("--depth", g.depth, "Network depth");
  app.add_option("--epochs", g.epochs, "Training length in epochs (overrides --iterations)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  RingsConfig rings;
  std::string rings_v0 = "zero";
  auto* c_rings = app.add_subcommand("train-rings", "ResNet vs Momentum ResNet on nested rings");
  c_rings->add_option("--iterations", rings.iterations);
  c_rings->add_option("--batch", rings.batch_size);
  c_rings->add_option("--lr", rings.learning_rate);
  c_rings->add_option("--opt-momentum", rings.optimizer_momentum);
  c_rings->add_option("--hidden", rings.hidden);
  c_rings->add_option("--init-scale", rings.init_scale);
  c_rings->add_option("--noise", rings.noise);
  c_rings->add_option("--n-per-ring", rings.n_per_ring);
  c_rings->add_option("--eval-every", rings.eval_every);
  c_rings->add_option("--v0", rings_v0, "zero | residual");

  CubicConfig cubic;
  auto* c_cubic = app.add_subcommand("train-cubic", "Tied-weight fit of x -> -x^3");
  c_cubic->add_option("--iterations", cubic.iterations);
  c_cubic->add_option("--batch", cubic.batch_size);
  c_cubic->add_option("--lr", cubic.learning_rate);
  c_cubic->add_option("--opt-momentum", cubic.optimizer_momentum);
  c_cubic->add_option("--hidden", cubic.hidden);
  c_cubic->add_option("--init-scale", cubic.init_scale);
  c_cubic->add_option("--feature-scale", cubic.feature_scale, "Extra factor on W1 and b");
  c_cubic->add_option("--n-train", cubic.n_train);
  std::string cubic_v0 = "residual";
  c_cubic->add_option("--v0", cubic_v0, "zero | residual");

  ListaConfig lista;
  auto* c_lista = app.add_subcommand("lista", "ISTA, LISTA, Momentum-LISTA and RevNet-LISTA");
  c_lista->add_option("--depths", lista.depths);
  c_lista->add_option("--iterations", lista.iterations);
  c_lista->add_option("--batch", lista.batch_size);
  c_lista->add_option("--lr", lista.learning_rate);
  c_lista->add_option("--opt-momentum", lista.optimizer_momentum);
  c_lista->add_option("--n-train", lista.n_train);
  c_lista->add_option("--n-test", lista.n_test);
  c_lista->add_option("--lambda", lista.lasso_lambda);

  MemcheckConfig mem;
  std::vector<std::string> mem_gammas;
  auto* c_mem = app.add_subcommand("memcheck", "Buffer growth and live activations");
  c_mem->add_option("--depths", mem.depths);
  c_mem->add_option("--gammas", mem_gammas, "List of N/D");
  c_mem->add_option("--dim", mem.dim);
  c_mem->add_option("--hidden", mem.hidden);
  c_mem->add_option("--batch", mem.batch);

  std::vector<double> eps_grid{0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
  int trials = 1000;
  auto* c_lin = app.add_subcommand("analyze-linear", "Linear representability tables");
  c_lin->add_option("--eps-grid", eps_grid);
  c_lin->add_option("--trials", trials);

  double ode_h = 1e-3;
  auto* c_ode = app.add_subcommand("odecheck", "ODE limits and closed forms");
  c_ode->add_option("--step", ode_h, "Integrator step");

  std::string manifest_path;
  std::optional<std::string> rerun_out;
  auto* c_rerun = app.add_subcommand("rerun", "Replay the command recorded in a manifest");
  c_rerun->add_option("manifest", manifest_path)->required();
  c_rerun->add_option("--to", rerun_out, "Output directory for the replay");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (c_rerun->parsed()) return rerun(manifest_path, rerun_out);
  g.gamma_given = app.get_option("--gamma")->count() > 0;

  if (const char* env = std::getenv("MOMREV_OUT"); env && *env) g.out_dir = env;
  CLI::App* sub = app.get_subcommands().front();
  Run run(sub->get_name(), g, args);
  try {
    if (sub == c_rings) cmd_rings(run, g, rings, rings_v0);
    else if (sub == c_cubic) cmd_cubic(run, g, cubic, cubic_v0);
    else if (sub == c_lista) cmd_lista(run, g, lista);
    else if (sub == c_mem) cmd_memcheck(run, g, mem, mem_gammas);
    else if (sub == c_lin) cmd_linear(run, g, eps_grid, trials);
    else if (sub == c_ode) cmd_odecheck(run, ode_h);
  } catch (const DivergenceError& e) {
    run.finish("diverged", e.what());
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const BlowUp& e) {
    run.finish("diverged", e.what());
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const FixedPointOverflow& e) {
    run.finish("diverged", e.what());
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    run.finish("invalid", e.what());
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitValidation;
  }
  run.finish("ok");
  std::cout << "momrev: " << sub->get_name() << " wrote " << g.out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const std::invalid_argument& e) {
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "momrev: " << e.what() << '\n';
    return kExitValidation;
  }
}
