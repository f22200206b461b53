#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "humctrl/analysis.hpp"
#include "humctrl/config.hpp"
#include "humctrl/io.hpp"

namespace {

using namespace humctrl;

struct Cli {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
};

RunConfig load(const Cli& cli) {
  RunConfig c = parse_config(cli.config_path);
  if (cli.seed_given) {
    c.seed = cli.seed;
    c.hum.seed = cli.seed;
  }
  if (!cli.out_override.empty()) c.out = cli.out_override;
  std::filesystem::create_directories(c.out);
  return c;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
  std::cout << "wrote " << path.string() << "\n";
}

void require_linear(const RunConfig& c, const char* sub) {
  if (c.reaction.type != "none")
    throw ConfigError(std::string("config: /reaction/type must be none for `") + sub +
                      "` (use nonlinear-control for reactive runs)");
}

TerminalData certificate_terminal(const ProblemSpec& ps, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "cert-terminal"));
  const int n = ps.grid.size();
  TerminalData xi{ScalarField(n), ScalarField(n)};
  for (int i = 0; i < n; ++i) {
    xi.phi_T[i] = rng.normal();
    xi.phi_eT[i] = rng.normal();
  }
  return xi;
}

nlohmann::ordered_json certificate_json(const CertificateValue& c) {
  nlohmann::ordered_json j;
  j["lhs"] = c.lhs;
  j["rhs"] = c.rhs;
  j["ratio"] = c.ratio;
  j["degenerate"] = c.degenerate;
  return j;
}

// Weight rows for weighted-mode synthesis, built the same way the nonlinear
// cubic driver builds them.
Eigen::MatrixXd build_weight_rows(const RunConfig& c, const ProblemSpec& ps,
                                  const PotentialField& a) {
  const WeightSet ws = finalize_weightset(ps.grid, c.weights.center, c.weights.m,
                                          ps.T, a.inf_norm(), c.weights.s0);
  return weight_rows(ws, ps.grid, omega_mask(ps), ps.n_steps);
}

int cmd_forward(const Cli& cli) {
  const RunConfig c = load(cli);
  const ProblemSpec ps = make_problem(c);
  const ControlFunction f0 = ControlFunction::zero(ps);
  const Trajectory tr = c.reaction.type == "none"
                            ? forward_relaxed_linear(ps, make_potential(c, ps), f0)
                            : forward_relaxed_nonlinear(ps, make_reaction(c), f0);
  std::ostringstream os;
  write_trajectory_csv(os, ps.grid, tr);
  write_file(std::filesystem::path(c.out) / "trajectory.csv", os.str());
  return 0;
}

int cmd_adjoint(const Cli& cli) {
  const RunConfig c = load(cli);
  require_linear(c, "adjoint");
  const ProblemSpec ps = make_problem(c);
  const Trajectory adj =
      adjoint_solve(ps, make_potential(c, ps), certificate_terminal(ps, c.seed));
  std::ostringstream os;
  write_trajectory_csv(os, ps.grid, adj, "phi", "phi_e");
  write_file(std::filesystem::path(c.out) / "adjoint.csv", os.str());
  return 0;
}

int write_control_outputs(const RunConfig& c, const ProblemSpec& ps,
                          const ControlResult& r) {
  std::ostringstream os;
  write_control_csv(os, ps.grid, r.control);
  write_file(std::filesystem::path(c.out) / "control.csv", os.str());
  write_file(std::filesystem::path(c.out) / "control.json",
             control_result_json(r).dump(2) + "\n");
  std::cout << "control_norm_l2 " << fmt_g17(r.control_norm_l2) << ", bound_ratio "
            << fmt_g17(r.bound_ratio) << ", iterations " << r.iterations
            << ", converged " << (r.converged ? "true" : "false") << "\n";
  return r.converged ? 0 : 2;
}

int cmd_control(const Cli& cli) {
  const RunConfig c = load(cli);
  require_linear(c, "control");
  const ProblemSpec ps = make_problem(c);
  const PotentialField a = make_potential(c, ps);
  ControlResult r;
  if (c.hum.mode == HumMode::weighted) {
    const Eigen::MatrixXd w = build_weight_rows(c, ps, a);
    r = synthesize_control(ps, a, c.hum, &w);
  } else {
    r = synthesize_control(ps, a, c.hum);
  }
  return write_control_outputs(c, ps, r);
}

int cmd_nonlinear_control(const Cli& cli) {
  const RunConfig c = load(cli);
  if (c.reaction.type == "none")
    throw ConfigError(
        "config: /reaction/type must be lipschitz or cubic for `nonlinear-control`");
  const ProblemSpec ps = make_problem(c);
  const Reaction r = make_reaction(c);
  const NonlinearControlResult nr =
      c.reaction.type == "lipschitz"
          ? nonlinear_control_lipschitz(ps, r, c.hum)
          : nonlinear_control_cubic(ps, r, c.hum, c.weights);
  const int status = write_control_outputs(c, ps, nr.result);
  nlohmann::ordered_json j;
  j["outer_iterations"] = nr.outer_iterations;
  j["outer_converged"] = nr.outer_converged;
  j["validated_v_norm"] = nr.validated_v_norm;
  j["validated_ue_norm"] = nr.validated_ue_norm;
  write_file(std::filesystem::path(c.out) / "nonlinear.json", j.dump(2) + "\n");
  return nr.outer_converged ? status : 2;
}

int cmd_sweep(const Cli& cli) {
  const RunConfig c = load(cli);
  require_linear(c, "sweep");
  const ProblemSpec ps = make_problem(c);
  const SweepReport report = epsilon_sweep(ps, make_potential(c, ps), c.hum,
                                           c.sweep_eps, c.weights, c.seed, cli.jobs);
  write_file(std::filesystem::path(c.out) / "sweep.csv", sweep_csv(report));
  write_file(std::filesystem::path(c.out) / "sweep.json",
             sweep_json(report).dump(2) + "\n");
  for (const std::string& flag : report.flags) std::cout << "flag: " << flag << "\n";
  std::cout << kDiagnosticsNote << "\n";
  bool all_converged = true;
  for (const SweepRow& row : report.rows) all_converged &= row.converged;
  return (report.any_failed || !all_converged) ? 2 : 0;
}

int cmd_observability(const Cli& cli) {
  const RunConfig c = load(cli);
  require_linear(c, "observability");
  const ProblemSpec ps = make_problem(c);
  const double c_obs =
      estimate_observability_constant(ps, make_potential(c, ps), c.seed);
  nlohmann::ordered_json j;
  j["note"] = kDiagnosticsNote;
  j["seed"] = c.seed;
  j["epsilon"] = c.epsilon;
  j["c_obs"] = c_obs;
  write_file(std::filesystem::path(c.out) / "observability.json", j.dump(2) + "\n");
  std::cout << "c_obs " << fmt_g17(c_obs) << "\n";
  return 0;
}

int cmd_carleman_check(const Cli& cli) {
  const RunConfig c = load(cli);
  require_linear(c, "carleman-check");
  const ProblemSpec ps = make_problem(c);
  const PotentialField a = make_potential(c, ps);
  const WeightSet ws = finalize_weightset(ps.grid, c.weights.center, c.weights.m,
                                          ps.T, a.inf_norm(), c.weights.s0);
  const TerminalData xi = certificate_terminal(ps, c.seed);
  const CarlemanCertificate cert = carleman_certificate(ps, a, ws, xi);
  const CertificateValue energy = energy_certificate(ps, ws, xi);
  nlohmann::ordered_json j;
  j["note"] = kDiagnosticsNote;
  j["seed"] = c.seed;
  j["lambda"] = ws.lambda;
  j["s"] = ws.s;
  j["variant_M"] = certificate_json(cert.variant_M);
  j["variant_Mi"] = certificate_json(cert.variant_Mi);
  j["energy"] = certificate_json(energy);
  write_file(std::filesystem::path(c.out) / "carleman.json", j.dump(2) + "\n");
  std::cout << kDiagnosticsNote << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"null-control synthesis for the relaxed monodomain system"};
  app.require_subcommand(1);

  Cli cli;
  int (*run)(const Cli&) = nullptr;
  auto add = [&](const char* name, const char* desc, int (*fn)(const Cli&),
                 bool with_jobs = false) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", cli.config_path, "JSON config file")
        ->required()
        ->type_name("<path>");
    sub->add_option("--out", cli.out_override, "output directory (overrides config)")
        ->type_name("<dir>");
    sub->add_option("--seed", cli.seed, "seed override (overrides config)")
        ->type_name("<u64>")
        ->each([&cli](const std::string&) { cli.seed_given = true; });
    if (with_jobs)
      sub->add_option("--jobs", cli.jobs, "parallel sweep rows")
          ->type_name("<n>")
          ->check(CLI::PositiveNumber);
    sub->callback([&run, fn] { run = fn; });
    return sub;
  };

  add("forward", "simulate the uncontrolled system, write trajectory.csv",
      cmd_forward);
  add("adjoint", "solve the adjoint from seeded random terminal data", cmd_adjoint);
  add("control", "synthesize the HUM null control", cmd_control);
  add("nonlinear-control", "fixed-point control for a reactive model",
      cmd_nonlinear_control);
  add("sweep", "epsilon sweep with per-row diagnostics", cmd_sweep,
      /*with_jobs=*/true);
  add("observability", "estimate the observability constant", cmd_observability);
  add("carleman-check", "evaluate weighted-inequality certificates",
      cmd_carleman_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    return run(cli);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
