#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "humctrl/grid.hpp"
#include "humctrl/model.hpp"
#include "humctrl/operators.hpp"

namespace humctrl {

struct Trajectory {
  std::vector<ScalarField> v;   // phi for adjoint runs
  std::vector<ScalarField> ue;  // phi_e for adjoint runs
  std::vector<ScalarField> ui;  // populated by the bidomain solver only
  double dt = 0.0;
};

// Adjoint terminal pair (phi_T, phi_eT): the HUM optimization variable.
struct TerminalData {
  ScalarField phi_T;
  ScalarField phi_eT;
};

// Piecewise-constant-in-time control: rows[j] is applied on step j+1 and
// pairs with adjoint index j. Support is restricted to omega by the solvers.
struct ControlFunction {
  std::vector<ScalarField> rows;
  double dt = 0.0;

  static ControlFunction zero(const ProblemSpec& ps) {
    ControlFunction f;
    f.dt = ps.dt();
    f.rows.assign(static_cast<std::size_t>(ps.n_steps),
                  ScalarField::Zero(ps.grid.size()));
    return f;
  }
};

inline double control_norm_l2(const Grid& g, const ControlFunction& f) {
  double acc = 0.0;
  for (const auto& row : f.rows) acc += f.dt * g.cell_volume() * row.squaredNorm();
  return std::sqrt(acc);
}

inline double control_norm_lq(const Grid& g, const ControlFunction& f, double q) {
  double acc = 0.0;
  for (const auto& row : f.rows)
    acc += f.dt * g.cell_volume() * row.array().abs().pow(q).sum();
  return std::pow(acc, 1.0 / q);
}

inline double control_distance_l2(const Grid& g, const ControlFunction& a,
                                  const ControlFunction& b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.rows.size(); ++j)
    acc += a.dt * g.cell_volume() * (a.rows[j] - b.rows[j]).squaredNorm();
  return std::sqrt(acc);
}

namespace detail {

constexpr double kSolveTol = 1e-13;

// Assembled discrete system. A is the matrix sum Ai + Ae: the exact discrete
// analog of M = M_i + M_e that the bidomain reformulation algebra needs
// (harmonic face averaging is 1-homogeneous, so proportional tensors keep
// Ai = mu * Ae and the monodomain identities exact).
struct System {
  Grid grid;
  double c_m, mu, eps, T, dt, kappa;
  int n, N;
  SpMat Ae, Ai, A;
  ScalarField mask, v0, ue0;
};

inline System make_system(const ProblemSpec& ps) {
  validate(ps);
  System s;
  s.grid = ps.grid;
  s.c_m = ps.c_m;
  s.mu = ps.mu;
  s.eps = ps.epsilon;
  s.T = ps.T;
  s.dt = ps.dt();
  s.kappa = ps.kappa();
  s.n = ps.grid.size();
  s.N = ps.n_steps;
  s.Ae = assemble_diffusion(ps.grid, ps.M_e).mat;
  s.Ai = assemble_diffusion(ps.grid, ps.M_i).mat;
  s.A = s.Ai + s.Ae;
  s.mask = omega_mask(ps);
  s.v0 = ps.v0;
  s.ue0 = ps.ue0;
  return s;
}

// (c_m/dt I + kappa Ae + diag(a)) v = (c_m/dt) v_prev + f 1_omega
inline ScalarField v_step_linear(const System& s, const Eigen::VectorXd& a_row,
                                 const ScalarField& v_prev, const ScalarField& f_row) {
  OpCombo op(Eigen::VectorXd::Constant(s.n, s.c_m / s.dt) + a_row);
  op.add(s.kappa, s.Ae);
  const ScalarField rhs =
      (s.c_m / s.dt) * v_prev + s.mask.cwiseProduct(f_row);
  return solve_spd(op, rhs, kSolveTol);
}

// (eps/dt I + A) ue = (eps/dt) ue_prev - Ai v; eps = 0 is the elliptic solve
inline ScalarField ue_step(const System& s, const ScalarField& ue_prev,
                           const ScalarField& v_new) {
  OpCombo op(Eigen::VectorXd::Constant(s.n, s.eps / s.dt));
  op.add(1.0, s.A);
  const ScalarField rhs = (s.eps / s.dt) * ue_prev - s.Ai * v_new;
  return solve_spd(op, rhs, kSolveTol);
}

inline ScalarField ue_elliptic(const System& s, const ScalarField& v) {
  OpCombo op(Eigen::VectorXd::Zero(s.n));
  op.add(1.0, s.A);
  return solve_spd(op, ScalarField(-(s.Ai * v)), kSolveTol);
}

// Newton for (c_m/dt)(v - v_prev) + C v + h(v) = rhs_const with C an OpCombo
// base; SPD Jacobian since h' >= 0 for the built-in reactions.
inline ScalarField v_step_newton(const System& s, const Reaction& r,
                                 const OpCombo& diffusion, const ScalarField& v_prev,
                                 const ScalarField& rhs_const, int step_index) {
  ScalarField v = v_prev;
  for (int it = 0; it < 25; ++it) {
    ScalarField h(s.n), hp(s.n);
    for (int i = 0; i < s.n; ++i) {
      h[i] = reaction_eval(r, v[i]);
      hp[i] = reaction_deriv(r, v[i]);
    }
    ScalarField residual = (s.c_m / s.dt) * (v - v_prev) + diffusion.apply(v) + h - rhs_const;
    if (residual.norm() <= 1e-12) return v;
    OpCombo jac = diffusion;
    jac.diag += Eigen::VectorXd::Constant(s.n, s.c_m / s.dt) + hp;
    v -= solve_spd(jac, residual, kSolveTol);
  }
  // one final acceptance check before reporting divergence
  ScalarField h(s.n);
  for (int i = 0; i < s.n; ++i) h[i] = reaction_eval(r, v[i]);
  const double res =
      ((s.c_m / s.dt) * (v - v_prev) + diffusion.apply(v) + h - rhs_const).norm();
  if (res <= 1e-12) return v;
  throw std::runtime_error("newton: no convergence at step " +
                           std::to_string(step_index) + ", residual " +
                           std::to_string(res));
}

}  // namespace detail

inline Trajectory forward_relaxed_linear(const ProblemSpec& ps, const PotentialField& a,
                                         const ControlFunction& f) {
  const detail::System s = detail::make_system(ps);
  Trajectory tr;
  tr.dt = s.dt;
  tr.v.reserve(s.N + 1);
  tr.ue.reserve(s.N + 1);
  tr.v.push_back(s.v0);
  tr.ue.push_back(s.eps == 0.0 ? detail::ue_elliptic(s, s.v0) : s.ue0);
  for (int k = 1; k <= s.N; ++k) {
    tr.v.push_back(detail::v_step_linear(s, a.a.row(k), tr.v[k - 1],
                                         f.rows[static_cast<std::size_t>(k - 1)]));
    tr.ue.push_back(detail::ue_step(s, tr.ue[k - 1], tr.v[k]));
  }
  return tr;
}

inline Trajectory forward_relaxed_nonlinear(const ProblemSpec& ps, const Reaction& r,
                                            const ControlFunction& f) {
  const detail::System s = detail::make_system(ps);
  Trajectory tr;
  tr.dt = s.dt;
  tr.v.push_back(s.v0);
  tr.ue.push_back(s.eps == 0.0 ? detail::ue_elliptic(s, s.v0) : s.ue0);
  OpCombo diffusion(Eigen::VectorXd::Zero(s.n));
  diffusion.add(s.kappa, s.Ae);
  for (int k = 1; k <= s.N; ++k) {
    const ScalarField rhs =
        s.mask.cwiseProduct(f.rows[static_cast<std::size_t>(k - 1)]);
    tr.v.push_back(detail::v_step_newton(s, r, diffusion, tr.v[k - 1], rhs, k));
    tr.ue.push_back(detail::ue_step(s, tr.ue[k - 1], tr.v[k]));
  }
  return tr;
}

// Monodomain limit: identical discrete equations to the relaxed system at
// eps = 0, so it delegates (field-by-field equality is by construction).
inline Trajectory forward_monodomain(const ProblemSpec& ps, const PotentialField& a,
                                     const ControlFunction& f) {
  ProblemSpec limit = ps;
  limit.epsilon = 0.0;
  return forward_relaxed_linear(limit, a, f);
}

inline Trajectory forward_monodomain(const ProblemSpec& ps, const Reaction& r,
                                     const ControlFunction& f) {
  ProblemSpec limit = ps;
  limit.epsilon = 0.0;
  return forward_relaxed_nonlinear(limit, r, f);
}

// Bidomain via the elliptic reformulation, implicit per-step coupling:
//   A ue = (f - g)1_omega - Ai v,   (c_m/dt I + Ai + h) v = ... - Ai ue,
// iterated to a joint fixed point each step (contraction: A > Ai).
inline Trajectory forward_bidomain(const ProblemSpec& ps, const Reaction& r,
                                   const ControlFunction& f, const ControlFunction& g) {
  const detail::System s = detail::make_system(ps);
  Trajectory tr;
  tr.dt = s.dt;
  tr.v.push_back(s.v0);
  tr.ue.push_back(detail::ue_elliptic(s, s.v0));
  tr.ui.push_back(tr.v[0] + tr.ue[0]);
  OpCombo diffusion(Eigen::VectorXd::Zero(s.n));
  diffusion.add(1.0, s.Ai);
  OpCombo elliptic(Eigen::VectorXd::Zero(s.n));
  elliptic.add(1.0, s.A);

  for (int k = 1; k <= s.N; ++k) {
    const ScalarField fk = s.mask.cwiseProduct(f.rows[static_cast<std::size_t>(k - 1)]);
    const ScalarField gk = s.mask.cwiseProduct(g.rows[static_cast<std::size_t>(k - 1)]);
    ScalarField v = tr.v[k - 1];
    ScalarField ue = tr.ue[k - 1];
    bool settled = false;
    for (int it = 0; it < 200 && !settled; ++it) {
      const ScalarField ue_new = solve_spd(elliptic, fk - gk - s.Ai * v, detail::kSolveTol);
      const ScalarField v_new =
          detail::v_step_newton(s, r, diffusion, tr.v[k - 1], fk - s.Ai * ue_new, k);
      settled = (v_new - v).norm() <= 1e-13 * (v_new.norm() + 1e-30) &&
                (ue_new - ue).norm() <= 1e-13 * (ue_new.norm() + 1e-30);
      v = v_new;
      ue = ue_new;
    }
    if (!settled)
      throw std::runtime_error("bidomain: step coupling did not settle at step " +
                               std::to_string(k));
    tr.v.push_back(v);
    tr.ue.push_back(ue);
    tr.ui.push_back(v + ue);
  }
  return tr;
}

// Exact algebraic transpose of the forward scheme (discretize-then-optimize).
// Stepping backward from index N: first the phi_e-step, then the phi-step
// sourced by -Ai pe[k]; the phi-step at index k reads potential row k+1.
inline Trajectory adjoint_solve(const ProblemSpec& ps, const PotentialField& a,
                                const TerminalData& terminal) {
  const detail::System s = detail::make_system(ps);
  Trajectory tr;
  tr.dt = s.dt;
  tr.v.assign(static_cast<std::size_t>(s.N) + 1, ScalarField());
  tr.ue.assign(static_cast<std::size_t>(s.N) + 1, ScalarField());
  tr.v[s.N] = terminal.phi_T;
  tr.ue[s.N] = terminal.phi_eT;
  for (int k = s.N - 1; k >= 0; --k) {
    {
      OpCombo op(Eigen::VectorXd::Constant(s.n, s.eps / s.dt));
      op.add(1.0, s.A);
      tr.ue[k] = solve_spd(op, (s.eps / s.dt) * tr.ue[k + 1], detail::kSolveTol);
    }
    {
      OpCombo op(Eigen::VectorXd::Constant(s.n, s.c_m / s.dt) +
                 a.a.row(k + 1).transpose());
      op.add(s.kappa, s.Ae);
      tr.v[k] = solve_spd(op, (s.c_m / s.dt) * tr.v[k + 1] - s.Ai * tr.ue[k],
                          detail::kSolveTol);
    }
  }
  return tr;
}

// c_m<v(T), phi_T> + eps<ue(T), pe_T> - c_m<v0, phi(0)> - eps<ue0, pe(0)>
//   - sum_k dt <f_k, phi_{k-1}>_omega
// Zero in exact arithmetic by construction of the discrete adjoint.
inline double duality_gap(const ProblemSpec& ps, const ControlFunction& f,
                          const TerminalData& terminal,
                          const PotentialField* a_opt = nullptr) {
  const PotentialField a = a_opt ? *a_opt : PotentialField::zero(ps);
  const Trajectory fwd = forward_relaxed_linear(ps, a, f);
  const Trajectory adj = adjoint_solve(ps, a, terminal);
  const Grid& g = ps.grid;
  const ScalarField mask = omega_mask(ps);
  const int N = ps.n_steps;
  double gap = ps.c_m * l2_inner(g, fwd.v[N], terminal.phi_T) +
               ps.epsilon * l2_inner(g, fwd.ue[N], terminal.phi_eT) -
               ps.c_m * l2_inner(g, ps.v0, adj.v[0]) -
               ps.epsilon * l2_inner(g, ps.ue0, adj.ue[0]);
  for (int k = 1; k <= N; ++k)
    gap -= ps.dt() * l2_inner(g, mask.cwiseProduct(f.rows[static_cast<std::size_t>(k - 1)]),
                              adj.v[k - 1]);
  return gap;
}

}  // namespace humctrl
