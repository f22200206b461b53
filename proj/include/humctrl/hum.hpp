#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "humctrl/dynamics.hpp"
#include "humctrl/grid.hpp"
#include "humctrl/model.hpp"
#include "humctrl/rng.hpp"
#include "humctrl/weights.hpp"

namespace humctrl {

enum class HumMode { plain, weighted };

inline std::string mode_name(HumMode m) {
  return m == HumMode::plain ? "plain" : "weighted";
}

struct HumConfig {
  double delta = 1e-3;
  HumMode mode = HumMode::plain;
  int max_iters = 5000;
  double lip_safety = 1.2;   // L = safety * power-iteration estimate
  int power_iters = 10;
  int backtrack_max = 60;    // step halvings per iteration
  double stop_tol = 1e-9;    // relative J decrease over stop_window iterations
  int stop_window = 10;
  double q = 4.0;            // exponent for the reported L^q control norm
  std::uint64_t seed = 0;
};

struct WeightParams {
  std::array<double, 2> center{0.5, 0.5};
  double m = 2.0;
  double s0 = 1.0;
};

struct ControlResult {
  ControlFunction control;
  TerminalData terminal;  // minimizing adjoint data; warm-start for refinements
  double epsilon = 0.0;
  double delta = 0.0;
  HumMode mode = HumMode::plain;
  double control_norm_l2 = 0.0;
  double control_norm_lq = 0.0;
  double q = 4.0;
  double terminal_v_norm = 0.0;
  double terminal_ue_norm = 0.0;
  double bound_ratio = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> functional_history;  // monotone non-increasing
};

inline double pair_inner(const Grid& g, const TerminalData& a, const TerminalData& b) {
  return l2_inner(g, a.phi_T, b.phi_T) + l2_inner(g, a.phi_eT, b.phi_eT);
}

inline double pair_norm(const Grid& g, const TerminalData& a) {
  return std::sqrt(pair_inner(g, a, a));
}

// Blockwise L2 shrinkage: each block scales by max(0, 1 - tau_delta/||block||).
inline TerminalData prox_penalty(const Grid& g, const TerminalData& x, double tau_delta) {
  if (tau_delta < 0.0) throw std::invalid_argument("prox_penalty: tau_delta < 0");
  auto shrink = [&](const ScalarField& b) -> ScalarField {
    const double nrm = l2_norm(g, b);
    if (nrm <= tau_delta) return ScalarField::Zero(b.size());
    return (1.0 - tau_delta / nrm) * b;
  };
  return TerminalData{shrink(x.phi_T), shrink(x.phi_eT)};
}

namespace detail {

// Shared plumbing for the HUM functional: adjoint sweeps, control extraction,
// forward returns. Weight rows are N x n, already masked to omega; null means
// the plain indicator weight.
struct HumOps {
  const ProblemSpec* ps;
  const PotentialField* a;
  const Eigen::MatrixXd* w_rows;
  ScalarField mask;

  HumOps(const ProblemSpec& p, const PotentialField& pot, const Eigen::MatrixXd* w)
      : ps(&p), a(&pot), w_rows(w), mask(omega_mask(p)) {
    if (w_rows && (w_rows->rows() != p.n_steps || w_rows->cols() != p.grid.size()))
      throw std::invalid_argument("hum: weight rows shape mismatch");
  }

  ScalarField row_weight(int j) const {
    if (w_rows) return w_rows->row(j).transpose();
    return mask;
  }

  Trajectory adjoint(const TerminalData& xi) const { return adjoint_solve(*ps, *a, xi); }

  double quad(const Trajectory& adj) const {
    double acc = 0.0;
    for (int k = 1; k <= ps->n_steps; ++k) {
      const ScalarField& phi = adj.v[k - 1];
      acc += ps->dt() * ps->grid.cell_volume() *
             row_weight(k - 1).cwiseProduct(phi).dot(phi);
    }
    return 0.5 * acc;
  }

  double linear(const Trajectory& adj) const {
    return ps->c_m * l2_inner(ps->grid, ps->v0, adj.v[0]) +
           ps->epsilon * l2_inner(ps->grid, ps->ue0, adj.ue[0]);
  }

  ControlFunction control_from(const Trajectory& adj) const {
    ControlFunction f = ControlFunction::zero(*ps);
    for (int j = 0; j < ps->n_steps; ++j)
      f.rows[j] = row_weight(j).cwiseProduct(adj.v[j]);
    return f;
  }

  // (c_m v(T), eps ue(T)) of the controlled forward run; exact gradient of
  // the smooth part by transposition.
  TerminalData grad_from(const ControlFunction& f, ScalarField* vT = nullptr,
                         ScalarField* ueT = nullptr) const {
    const Trajectory tr = forward_relaxed_linear(*ps, *a, f);
    if (vT) *vT = tr.v[ps->n_steps];
    if (ueT) *ueT = tr.ue[ps->n_steps];
    return TerminalData{ps->c_m * tr.v[ps->n_steps], ps->epsilon * tr.ue[ps->n_steps]};
  }

  TerminalData gramian_apply(const TerminalData& xi) const {
    ProblemSpec hom = *ps;
    hom.v0 = ScalarField::Zero(ps->grid.size());
    hom.ue0 = ScalarField::Zero(ps->grid.size());
    const ControlFunction f = control_from(adjoint(xi));
    const Trajectory tr = forward_relaxed_linear(hom, *a, f);
    return TerminalData{ps->c_m * tr.v[ps->n_steps], ps->epsilon * tr.ue[ps->n_steps]};
  }
};

inline TerminalData pair_axpy(const TerminalData& x, double c, const TerminalData& y) {
  return TerminalData{x.phi_T + c * y.phi_T, x.phi_eT + c * y.phi_eT};
}

inline double lipschitz_estimate(const HumOps& ops, const HumConfig& cfg) {
  const Grid& g = ops.ps->grid;
  const int n = g.size();
  Rng rng(derive_seed(cfg.seed, "hum-power"));
  TerminalData xi;
  xi.phi_T.resize(n);
  xi.phi_eT.resize(n);
  for (int i = 0; i < n; ++i) {
    xi.phi_T[i] = rng.normal();
    xi.phi_eT[i] = rng.normal();
  }
  const double nrm0 = pair_norm(g, xi);
  xi.phi_T /= nrm0;
  xi.phi_eT /= nrm0;
  double theta = 0.0;
  for (int it = 0; it < cfg.power_iters; ++it) {
    const TerminalData eta = ops.gramian_apply(xi);
    theta = pair_inner(g, eta, xi);
    const double nrm = pair_norm(g, eta);
    if (nrm == 0.0) break;
    xi.phi_T = eta.phi_T / nrm;
    xi.phi_eT = eta.phi_eT / nrm;
  }
  return theta > 0.0 ? cfg.lip_safety * theta : 1.0;
}

}  // namespace detail

// J = 1/2 sum_k dt <w phi^{k-1}, phi^{k-1}>_omega + c_m<v0, phi(0)>
//       + eps<ue0, phi_e(0)> + delta(||phi_T|| + ||phi_eT||)
inline double hum_functional(const ProblemSpec& ps, const PotentialField& a,
                             const Eigen::MatrixXd* w_rows, const HumConfig& cfg,
                             const TerminalData& terminal) {
  const detail::HumOps ops(ps, a, cfg.mode == HumMode::weighted ? w_rows : nullptr);
  if (cfg.mode == HumMode::weighted && !w_rows)
    throw std::invalid_argument("hum_functional: weighted mode needs weight rows");
  const Trajectory adj = ops.adjoint(terminal);
  return ops.quad(adj) + ops.linear(adj) +
         cfg.delta * (l2_norm(ps.grid, terminal.phi_T) + l2_norm(ps.grid, terminal.phi_eT));
}

inline TerminalData hum_smooth_gradient(const ProblemSpec& ps, const PotentialField& a,
                                        const Eigen::MatrixXd* w_rows, const HumConfig& cfg,
                                        const TerminalData& terminal) {
  if (cfg.mode == HumMode::weighted && !w_rows)
    throw std::invalid_argument("hum_smooth_gradient: weighted mode needs weight rows");
  const detail::HumOps ops(ps, a, cfg.mode == HumMode::weighted ? w_rows : nullptr);
  return ops.grad_from(ops.control_from(ops.adjoint(terminal)));
}

// Monotone FISTA with momentum restart on rejected steps; stops when the
// relative J decrease over stop_window iterations drops below stop_tol.
inline ControlResult synthesize_control(const ProblemSpec& ps, const PotentialField& a,
                                        const HumConfig& cfg,
                                        const Eigen::MatrixXd* w_rows = nullptr,
                                        double lipschitz_hint = 0.0,
                                        const TerminalData* start = nullptr) {
  if (cfg.mode == HumMode::weighted && !w_rows)
    throw std::invalid_argument("synthesize_control: weighted mode needs weight rows");
  if (cfg.delta <= 0.0) throw std::invalid_argument("synthesize_control: delta <= 0");
  const detail::HumOps ops(ps, a, cfg.mode == HumMode::weighted ? w_rows : nullptr);
  const Grid& g = ps.grid;
  const int n = g.size();

  const double L =
      lipschitz_hint > 0.0 ? lipschitz_hint : detail::lipschitz_estimate(ops, cfg);

  auto smooth = [&](const TerminalData& xi, double& quad_out, double& lin_out) {
    const Trajectory adj = ops.adjoint(xi);
    quad_out = ops.quad(adj);
    lin_out = ops.linear(adj);
    return quad_out + lin_out;
  };
  auto penalty = [&](const TerminalData& xi) {
    return cfg.delta * (l2_norm(g, xi.phi_T) + l2_norm(g, xi.phi_eT));
  };

  TerminalData x{ScalarField::Zero(n), ScalarField::Zero(n)};
  if (start) {
    if (start->phi_T.size() != n || start->phi_eT.size() != n)
      throw std::invalid_argument("synthesize_control: start data size mismatch");
    x = *start;
  }
  TerminalData x_prev = x, y = x;
  double t = 1.0;
  double q0, l0;
  double J_x = smooth(x, q0, l0) + penalty(x);
  std::vector<double> history{J_x};
  bool converged = false;
  int iters = 0;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    iters = it;
    double quad_y, lin_y;
    const double Js_y = smooth(y, quad_y, lin_y);
    const TerminalData grad = ops.grad_from(ops.control_from(ops.adjoint(y)));

    double step = 1.0 / L;
    TerminalData cand;
    double Js_cand = 0.0;
    for (int bt = 0; bt <= cfg.backtrack_max; ++bt) {
      cand = prox_penalty(g, detail::pair_axpy(y, -step, grad), step * cfg.delta);
      double qc, lc;
      Js_cand = smooth(cand, qc, lc);
      const TerminalData diff = detail::pair_axpy(cand, -1.0, y);
      const double model = Js_y + pair_inner(g, grad, diff) +
                           pair_inner(g, diff, diff) / (2.0 * step);
      if (Js_cand <= model + 1e-12 * (1.0 + std::abs(Js_y))) break;
      step *= 0.5;
    }
    const double J_cand = Js_cand + penalty(cand);

    TerminalData x_new;
    double J_new;
    bool accepted;
    if (J_cand <= J_x) {
      x_new = cand;
      J_new = J_cand;
      accepted = true;
    } else {
      x_new = x;
      J_new = J_x;
      accepted = false;
    }
    // restart momentum when the step was rejected or points against progress
    const bool restart =
        !accepted ||
        pair_inner(g, detail::pair_axpy(y, -1.0, x_new),
                   detail::pair_axpy(x_new, -1.0, x)) > 0.0;
    const double t_new = restart ? 1.0 : 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = restart ? 0.0 : (t - 1.0) / t_new;
    y = detail::pair_axpy(x_new, momentum, detail::pair_axpy(x_new, -1.0, x_prev));
    x_prev = x;
    x = x_new;
    J_x = J_new;
    t = t_new;
    history.push_back(J_new);

    if (static_cast<int>(history.size()) > cfg.stop_window) {
      const double before = history[history.size() - 1 - cfg.stop_window];
      if (before - J_new <= cfg.stop_tol * std::max(std::abs(J_new), 1e-30)) {
        converged = true;
        break;
      }
    }
  }

  ControlResult res;
  res.epsilon = ps.epsilon;
  res.delta = cfg.delta;
  res.mode = cfg.mode;
  res.q = cfg.q;
  res.iterations = iters;
  res.converged = converged;
  res.functional_history = std::move(history);
  res.terminal = x;
  res.control = ops.control_from(ops.adjoint(x));
  ScalarField vT, ueT;
  ops.grad_from(res.control, &vT, &ueT);
  res.terminal_v_norm = l2_norm(g, vT);
  res.terminal_ue_norm = l2_norm(g, ueT);
  res.control_norm_l2 = control_norm_l2(g, res.control);
  res.control_norm_lq = control_norm_lq(g, res.control, cfg.q);
  const double data_norm = l2_norm(g, ps.v0) + ps.epsilon * l2_norm(g, ps.ue0);
  res.bound_ratio = data_norm > 0.0 ? res.control_norm_l2 / data_norm : 0.0;
  return res;
}

struct NonlinearControlResult {
  ControlResult result;
  int outer_iterations = 0;
  bool outer_converged = false;
  double validated_v_norm = 0.0;   // terminal norms of the nonlinear forward
  double validated_ue_norm = 0.0;  // run driven by the synthesized control
};

namespace detail {

// Picard outer loop: freeze the trajectory, linearize the reaction around it,
// synthesize, refresh the trajectory. Stops on a relative L2(Q) fixed point
// or when the linearized potential repeats bitwise (h == 0 stops after one
// synthesis). weight_builder may be empty for plain mode.
inline NonlinearControlResult picard_control(
    const ProblemSpec& ps, const Reaction& r, const HumConfig& cfg, bool use_integral,
    const std::function<Eigen::MatrixXd(const PotentialField&)>& weight_builder,
    const std::vector<ScalarField>* z_start = nullptr) {
  const int N = ps.n_steps;
  const int n = ps.grid.size();
  std::vector<ScalarField> z;
  if (z_start) {
    if (static_cast<int>(z_start->size()) != N + 1)
      throw std::invalid_argument("picard: start trajectory has wrong length");
    z = *z_start;
  } else {
    z.assign(static_cast<std::size_t>(N) + 1, ScalarField::Zero(n));
  }

  NonlinearControlResult out;
  PotentialField a_prev = PotentialField::zero(ps);
  bool have_prev = false;
  Eigen::MatrixXd w_rows;
  TerminalData warm;
  bool have_warm = false;
  // inner solves must out-resolve the outer fixed-point tolerance, or the
  // trajectory residual stalls on leftover minimization progress
  HumConfig inner_cfg = cfg;
  inner_cfg.stop_tol = std::min(cfg.stop_tol, 1e-12);

  for (int it = 1; it <= 50; ++it) {
    const PotentialField a =
        use_integral ? potential_from_integral(ps, r, z) : potential_from_secant(ps, r, z);
    if (have_prev && (a.a - a_prev.a).norm() == 0.0) {
      out.outer_converged = true;
      break;
    }
    const Eigen::MatrixXd* rows = nullptr;
    if (cfg.mode == HumMode::weighted) {
      w_rows = weight_builder(a);
      rows = &w_rows;
    }
    out.result =
        synthesize_control(ps, a, inner_cfg, rows, 0.0, have_warm ? &warm : nullptr);
    warm = out.result.terminal;
    have_warm = true;
    out.outer_iterations = it;
    const Trajectory tr = forward_relaxed_linear(ps, a, out.result.control);

    double diff = 0.0, scale = 0.0;
    for (int k = 0; k <= N; ++k) {
      diff += ps.dt() * ps.grid.cell_volume() * (tr.v[k] - z[k]).squaredNorm();
      scale += ps.dt() * ps.grid.cell_volume() * tr.v[k].squaredNorm();
    }
    z = tr.v;
    a_prev = a;
    have_prev = true;
    if (std::sqrt(diff) <= 1e-8 * std::max(std::sqrt(scale), 1e-30)) {
      out.outer_converged = true;
      break;
    }
  }

  const Trajectory check = forward_relaxed_nonlinear(ps, r, out.result.control);
  out.validated_v_norm = l2_norm(ps.grid, check.v[N]);
  out.validated_ue_norm = l2_norm(ps.grid, check.ue[N]);
  return out;
}

}  // namespace detail

inline NonlinearControlResult nonlinear_control_lipschitz(
    const ProblemSpec& ps, const Reaction& r, const HumConfig& cfg,
    const std::vector<ScalarField>* z_start = nullptr) {
  std::function<Eigen::MatrixXd(const PotentialField&)> builder;
  if (cfg.mode == HumMode::weighted)
    throw std::invalid_argument(
        "nonlinear_control_lipschitz: weighted mode requires the cubic driver");
  return detail::picard_control(ps, r, cfg, /*use_integral=*/false, builder, z_start);
}

inline NonlinearControlResult nonlinear_control_cubic(
    const ProblemSpec& ps, const Reaction& r, const HumConfig& cfg, const WeightParams& wp,
    const std::vector<ScalarField>* z_start = nullptr) {
  const ScalarField mask = omega_mask(ps);
  auto builder = [&ps, &wp, mask](const PotentialField& a) {
    const WeightSet ws =
        finalize_weightset(ps.grid, wp.center, wp.m, ps.T, a.inf_norm(), wp.s0);
    return weight_rows(ws, ps.grid, mask, ps.n_steps);
  };
  return detail::picard_control(ps, r, cfg, /*use_integral=*/true, builder, z_start);
}

}  // namespace humctrl
