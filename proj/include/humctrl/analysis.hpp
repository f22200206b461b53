#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "humctrl/dynamics.hpp"
#include "humctrl/hum.hpp"
#include "humctrl/io.hpp"
#include "humctrl/rng.hpp"
#include "humctrl/weights.hpp"

namespace humctrl {

// Every report that carries certificate or observability numbers repeats this.
inline constexpr const char* kDiagnosticsNote =
    "Certificate and observability values are numerical diagnostics, not proofs.";

namespace detail {

// Pencil B xi = theta A xi on terminal data:
//   A: observation Gramian (adjoint -> indicator control -> homogeneous forward)
//   B: initial-trace energy ||phi(0)||^2 + eps ||phi_e(0)||^2
struct PencilOps {
  const ProblemSpec* ps;
  const PotentialField* a;
  HumOps ops;

  PencilOps(const ProblemSpec& p, const PotentialField& pot)
      : ps(&p), a(&pot), ops(p, pot, nullptr) {}

  TerminalData apply_A(const TerminalData& xi) const { return ops.gramian_apply(xi); }

  TerminalData apply_B(const TerminalData& xi) const {
    const Trajectory adj = adjoint_solve(*ps, *a, xi);
    ProblemSpec init = *ps;
    init.v0 = adj.v[0] / ps->c_m;
    init.ue0 = adj.ue[0];
    const Trajectory tr =
        forward_relaxed_linear(init, *a, ControlFunction::zero(*ps));
    return TerminalData{ps->c_m * tr.v[ps->n_steps],
                        ps->epsilon * tr.ue[ps->n_steps]};
  }
};

template <typename Apply>
TerminalData cg_terminal(const Grid& g, const Apply& apply, const TerminalData& b,
                         double tol, int cap) {
  const int n = g.size();
  TerminalData x{ScalarField::Zero(n), ScalarField::Zero(n)};
  TerminalData r = b, p = b;
  double rs = pair_inner(g, r, r);
  const double nb = std::sqrt(rs);
  if (nb == 0.0) return x;
  for (int it = 0; it < cap; ++it) {
    const TerminalData Ap = apply(p);
    const double denom = pair_inner(g, p, Ap);
    if (denom <= 0.0) break;
    const double alpha = rs / denom;
    x = pair_axpy(x, alpha, p);
    r = pair_axpy(r, -alpha, Ap);
    const double rs_new = pair_inner(g, r, r);
    if (std::sqrt(rs_new) <= tol * nb) break;
    p = pair_axpy(r, rs_new / rs, p);
    rs = rs_new;
  }
  return x;
}

}  // namespace detail

// Largest Rayleigh quotient B/A of the observability pencil via inverse power
// iteration on the shifted Gramian; the shift is a trace-scaled jitter so a
// rank-deficient Gramian stays solvable.
inline double estimate_observability_constant(const ProblemSpec& ps,
                                              const PotentialField& a,
                                              std::uint64_t seed = 0) {
  const detail::PencilOps pencil(ps, a);
  const Grid& g = ps.grid;
  const int n = g.size();

  double trace = 0.0;
  {
    Rng rng(derive_seed(seed, "cobs-trace"));
    const int probes = 4;
    for (int p = 0; p < probes; ++p) {
      TerminalData r{ScalarField(n), ScalarField(n)};
      for (int i = 0; i < n; ++i) {
        r.phi_T[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        r.phi_eT[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
      }
      trace += pair_inner(g, pencil.apply_A(r), r) / probes;
    }
  }
  const double sigma = trace > 0.0 ? 1e-12 * trace / (2.0 * n) : 1e-12;
  auto shifted = [&](const TerminalData& x) {
    return detail::pair_axpy(pencil.apply_A(x), sigma, x);
  };

  Rng rng(derive_seed(seed, "cobs-power"));
  TerminalData z{ScalarField(n), ScalarField(n)};
  for (int i = 0; i < n; ++i) {
    z.phi_T[i] = rng.normal();
    z.phi_eT[i] = rng.normal();
  }
  {
    const double nz = pair_norm(g, z);
    z.phi_T /= nz;
    z.phi_eT /= nz;
  }

  double theta = 0.0;
  for (int it = 0; it < 1000; ++it) {
    const TerminalData Bz = pencil.apply_B(z);
    const TerminalData Az = pencil.apply_A(z);
    const double denom = pair_inner(g, Az, z);
    const double numer = pair_inner(g, Bz, z);
    if (denom <= 0.0) break;
    const double theta_new = numer / denom;
    const bool settled = std::abs(theta_new - theta) <= 1e-10 * std::abs(theta_new);
    theta = theta_new;
    if (settled) break;
    const TerminalData w =
        detail::cg_terminal(g, shifted, Bz, 1e-11, 20 * n + 200);
    const double nw = pair_norm(g, w);
    if (nw == 0.0) break;
    z.phi_T = w.phi_T / nw;
    z.phi_eT = w.phi_eT / nw;
  }
  return theta;
}

struct CertificateValue {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  bool degenerate = false;  // 0/0 on zero data
};

struct CarlemanCertificate {
  CertificateValue variant_M;   // residual rho = A pe
  CertificateValue variant_Mi;  // residual rho = Ai pe
};

namespace detail {

inline double log_phi_weight(const WeightSet& ws, const std::array<double, 2>& x,
                             double t) {
  return ws.lambda * (ws.psi_func.value(x) + ws.m * ws.psi_norm) -
         std::log(t * (ws.T - t));
}

inline CertificateValue finish_ratio(double lhs, double rhs) {
  CertificateValue out;
  out.lhs = lhs;
  out.rhs = rhs;
  if (rhs == 0.0) {
    out.degenerate = true;
    out.ratio = 0.0;
  } else {
    out.ratio = lhs / rhs;
  }
  return out;
}

}  // namespace detail

// Space-time quadrature: nodal x cell-volume in space, cell-centered midpoint
// in time; step k pairs with field index k-1.
inline CarlemanCertificate carleman_certificate(const ProblemSpec& ps,
                                                const PotentialField& a,
                                                const WeightSet& ws,
                                                const TerminalData& terminal) {
  const Trajectory adj = adjoint_solve(ps, a, terminal);
  const SpMat A = assemble_diffusion(ps.grid, ps.M_i).mat +
                  assemble_diffusion(ps.grid, ps.M_e).mat;
  const SpMat Ai = assemble_diffusion(ps.grid, ps.M_i).mat;
  const ScalarField mask = omega_mask(ps);
  const Grid& g = ps.grid;
  const double dt = ps.dt(), vol = g.cell_volume();
  const double s = ws.s, lam = ws.lambda, P = ws.psi_norm;
  const double s3l4 = s * s * s * lam * lam * lam * lam;
  const double s7l4 = s3l4 * s * s * s * s;
  const double front = std::exp(6.0 * lam * P) * s7l4;

  double lhs_M = 0.0, lhs_Mi = 0.0, rhs = 0.0;
  for (int k = 1; k <= ps.n_steps; ++k) {
    const double t = (k - 0.5) * dt;
    const ScalarField rho_M = A * adj.ue[k - 1];
    const ScalarField rho_Mi = Ai * adj.ue[k - 1];
    const ScalarField& phi = adj.v[k - 1];
    for (int i = 0; i < g.size(); ++i) {
      const auto x = g.coord(i);
      const WeightValues w = eval_weights(ws, x, t);
      const double lphi = detail::log_phi_weight(ws, x, t);
      const double e3 = flush_exp(3.0 * s * w.alpha);
      const double phi3e3 = flush_exp(3.0 * s * w.alpha + 3.0 * lphi);
      lhs_M += dt * vol * (e3 * rho_M[i] * rho_M[i] + s3l4 * phi3e3 * phi[i] * phi[i]);
      lhs_Mi +=
          dt * vol * (e3 * rho_Mi[i] * rho_Mi[i] + s3l4 * phi3e3 * phi[i] * phi[i]);
      if (mask[i] != 0.0) {
        const double phi8e2 = flush_exp(2.0 * s * w.alpha + 8.0 * lphi);
        rhs += dt * vol * front * phi8e2 * phi[i] * phi[i];
      }
    }
  }
  return CarlemanCertificate{detail::finish_ratio(lhs_M, rhs),
                             detail::finish_ratio(lhs_Mi, rhs)};
}

// The phi_e chain decouples from the potential, so none is taken. The rhs
// carries neither the eps^2 factor nor an unknown constant: the sweep checks
// the ratio trend against eps^2 instead.
inline CertificateValue energy_certificate(const ProblemSpec& ps, const WeightSet& ws,
                                           const TerminalData& terminal) {
  const PotentialField a = PotentialField::zero(ps);
  const Trajectory adj = adjoint_solve(ps, a, terminal);
  const SpMat A = assemble_diffusion(ps.grid, ps.M_i).mat +
                  assemble_diffusion(ps.grid, ps.M_e).mat;
  const Grid& g = ps.grid;
  const double dt = ps.dt(), vol = g.cell_volume();
  const double s = ws.s, lam = ws.lambda, P = ws.psi_norm;
  const double front = std::exp(4.0 * lam * P) * s * s * s;

  double lhs = 0.0, rhs = 0.0;
  for (int k = 1; k <= ps.n_steps; ++k) {
    const double t = (k - 0.5) * dt;
    const ScalarField rho = A * adj.ue[k - 1];
    for (int i = 0; i < g.size(); ++i) {
      const auto x = g.coord(i);
      const WeightValues w = eval_weights(ws, x, t);
      const double lphi = detail::log_phi_weight(ws, x, t);
      lhs += dt * vol * flush_exp(3.0 * s * w.alpha_star) * rho[i] * rho[i];
      rhs += dt * vol * front * flush_exp(2.0 * s * w.alpha + 4.0 * lphi) * rho[i] *
             rho[i];
    }
  }
  return detail::finish_ratio(lhs, rhs);
}

struct SweepRow {
  double epsilon = 0.0;
  double control_norm = 0.0;
  double bound_ratio = 0.0;
  double term_v = 0.0;
  double term_ue = 0.0;
  double c_obs = 0.0;
  double carleman_ratio_M = 0.0;
  double carleman_ratio_Mi = 0.0;
  double dist_to_limit = 0.0;
  bool converged = false;
  bool failed = false;
  // sidecar-only fields
  std::string error;
  double energy_ratio = 0.0;
  bool energy_degenerate = false;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<std::string> flags;
  double carleman_spread_M = 0.0;
  double carleman_spread_Mi = 0.0;
  bool any_failed = false;
  std::uint64_t seed = 0;
};

namespace detail {

inline void sweep_row_work(const ProblemSpec& tmpl, const PotentialField& a,
                           const HumConfig& cfg, const Eigen::MatrixXd* w_rows,
                           double lipschitz_hint, const WeightSet& ws,
                           const TerminalData& cert_xi,
                           const ControlFunction* limit_control,
                           const ControlResult* limit_result, double eps,
                           std::uint64_t seed, SweepRow& row) {
  row.epsilon = eps;
  try {
    ProblemSpec ps = tmpl;
    ps.epsilon = eps;
    ControlResult res;
    if (limit_result && eps == 0.0) {
      res = *limit_result;
    } else {
      res = synthesize_control(ps, a, cfg, w_rows, lipschitz_hint);
    }
    row.control_norm = res.control_norm_l2;
    row.bound_ratio = res.bound_ratio;
    row.term_v = res.terminal_v_norm;
    row.term_ue = res.terminal_ue_norm;
    row.converged = res.converged;
    row.dist_to_limit =
        limit_control ? control_distance_l2(ps.grid, res.control, *limit_control) : 0.0;
    row.c_obs = estimate_observability_constant(ps, a, seed);
    const CarlemanCertificate cc = carleman_certificate(ps, a, ws, cert_xi);
    row.carleman_ratio_M = cc.variant_M.ratio;
    row.carleman_ratio_Mi = cc.variant_Mi.ratio;
    const CertificateValue ec = energy_certificate(ps, ws, cert_xi);
    row.energy_ratio = ec.ratio;
    row.energy_degenerate = ec.degenerate;
  } catch (const std::exception& e) {
    row.failed = true;
    row.converged = false;
    row.error = e.what();
  }
}

}  // namespace detail

// One row per epsilon, all rows sharing the step size estimated on the first
// row; the limit control (eps = 0) is synthesized first so every row can
// report its distance to it. Rows are independent, so jobs > 1 fans them out.
inline SweepReport epsilon_sweep(const ProblemSpec& tmpl, const PotentialField& a,
                                 const HumConfig& cfg,
                                 const std::vector<double>& eps_list,
                                 const WeightParams& wp = WeightParams{},
                                 std::uint64_t seed = 0, int jobs = 1) {
  if (eps_list.empty()) throw std::invalid_argument("epsilon_sweep: empty list");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (eps_list[i] < 0.0)
      throw std::invalid_argument("epsilon_sweep: negative epsilon");
    if (i > 0 && eps_list[i] >= eps_list[i - 1])
      throw std::invalid_argument("epsilon_sweep: list not strictly decreasing");
  }

  HumConfig row_cfg = cfg;
  row_cfg.seed = seed;
  const WeightSet ws =
      finalize_weightset(tmpl.grid, wp.center, wp.m, tmpl.T, a.inf_norm(), wp.s0);
  Eigen::MatrixXd w_rows_buf;
  const Eigen::MatrixXd* w_rows = nullptr;
  if (cfg.mode == HumMode::weighted) {
    w_rows_buf = weight_rows(ws, tmpl.grid, omega_mask(tmpl), tmpl.n_steps);
    w_rows = &w_rows_buf;
  }

  TerminalData cert_xi;
  {
    Rng rng(derive_seed(seed, "cert-terminal"));
    const int n = tmpl.grid.size();
    cert_xi.phi_T.resize(n);
    cert_xi.phi_eT.resize(n);
    for (int i = 0; i < n; ++i) {
      cert_xi.phi_T[i] = rng.normal();
      cert_xi.phi_eT[i] = rng.normal();
    }
  }

  double L = 0.0;
  {
    ProblemSpec first = tmpl;
    first.epsilon = eps_list.front();
    const detail::HumOps ops(first, a, w_rows);
    L = detail::lipschitz_estimate(ops, row_cfg);
  }

  ControlFunction limit_control;
  ControlResult limit_result;
  bool have_limit = false;
  {
    ProblemSpec limit = tmpl;
    limit.epsilon = 0.0;
    limit_result = synthesize_control(limit, a, row_cfg, w_rows, L);
    limit_control = limit_result.control;
    have_limit = true;
  }

  SweepReport report;
  report.seed = seed;
  report.rows.assign(eps_list.size(), SweepRow{});
  auto work = [&](std::size_t idx) {
    detail::sweep_row_work(tmpl, a, row_cfg, w_rows, L, ws, cert_xi,
                           have_limit ? &limit_control : nullptr,
                           have_limit ? &limit_result : nullptr, eps_list[idx], seed,
                           report.rows[idx]);
  };
  const int workers =
      std::max(1, std::min<int>(jobs, static_cast<int>(eps_list.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < eps_list.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t]() {
        for (std::size_t i = t; i < eps_list.size(); i += workers) work(i);
      });
    for (auto& th : pool) th.join();
  }

  auto spread = [](std::vector<double> vals) {
    vals.erase(std::remove_if(vals.begin(), vals.end(),
                              [](double v) { return !(v > 0.0) || !std::isfinite(v); }),
               vals.end());
    if (vals.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    return *hi / *lo;
  };
  std::vector<double> rm, rmi, etrend;
  for (const SweepRow& row : report.rows) {
    report.any_failed = report.any_failed || row.failed;
    if (row.failed) continue;
    rm.push_back(row.carleman_ratio_M);
    rmi.push_back(row.carleman_ratio_Mi);
    if (row.epsilon > 0.0 && !row.energy_degenerate)
      etrend.push_back(row.energy_ratio / (row.epsilon * row.epsilon));
  }
  report.carleman_spread_M = spread(rm);
  report.carleman_spread_Mi = spread(rmi);
  if (report.carleman_spread_M > 100.0)
    report.flags.push_back("carleman ratio spread (variant M) exceeds 100");
  if (report.carleman_spread_Mi > 100.0)
    report.flags.push_back("carleman ratio spread (variant Mi) exceeds 100");
  const double eScale = spread(etrend);
  if (eScale > 100.0)
    report.flags.push_back(
        "energy certificate ratio does not track eps^2 within a factor 100");
  if (report.any_failed) report.flags.push_back("one or more rows failed");
  return report;
}

inline std::string sweep_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "epsilon,control_norm,bound_ratio,term_v,term_ue,c_obs,carleman_ratio_M,"
        "carleman_ratio_Mi,dist_to_limit,converged\n";
  for (const SweepRow& r : report.rows) {
    os << fmt_g17(r.epsilon) << ',' << fmt_g17(r.control_norm) << ','
       << fmt_g17(r.bound_ratio) << ',' << fmt_g17(r.term_v) << ','
       << fmt_g17(r.term_ue) << ',' << fmt_g17(r.c_obs) << ','
       << fmt_g17(r.carleman_ratio_M) << ',' << fmt_g17(r.carleman_ratio_Mi) << ','
       << fmt_g17(r.dist_to_limit) << ',' << (r.converged ? "true" : "false") << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json sweep_json(const SweepReport& report) {
  nlohmann::ordered_json j;
  j["note"] = kDiagnosticsNote;
  j["seed"] = report.seed;
  j["any_failed"] = report.any_failed;
  j["carleman_spread_M"] = report.carleman_spread_M;
  j["carleman_spread_Mi"] = report.carleman_spread_Mi;
  j["flags"] = report.flags;
  j["rows"] = nlohmann::ordered_json::array();
  for (const SweepRow& r : report.rows) {
    nlohmann::ordered_json row;
    row["epsilon"] = r.epsilon;
    row["control_norm"] = r.control_norm;
    row["bound_ratio"] = r.bound_ratio;
    row["term_v"] = r.term_v;
    row["term_ue"] = r.term_ue;
    row["c_obs"] = r.c_obs;
    row["carleman_ratio_M"] = r.carleman_ratio_M;
    row["carleman_ratio_Mi"] = r.carleman_ratio_Mi;
    row["dist_to_limit"] = r.dist_to_limit;
    row["converged"] = r.converged;
    row["failed"] = r.failed;
    row["error"] = r.error;
    row["energy_ratio"] = r.energy_ratio;
    row["energy_degenerate"] = r.energy_degenerate;
    j["rows"].push_back(row);
  }
  return j;
}

}  // namespace humctrl
