#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "humctrl/grid.hpp"
#include "humctrl/model.hpp"

namespace humctrl {

// exp with 1e-300-safe underflow flush: anything that small is treated as an
// exact zero rather than a denormal tail.
inline double flush_exp(double arg) { return arg < -690.0 ? 0.0 : std::exp(arg); }

namespace detail {

// One axis of the auxiliary function: sigma(1 - sigma) with sigma = (x/L)^r,
// mirrored to sigma = ((L-x)/L)^r when the requested peak sits left of L/2 so
// that r >= 1 and the profile stays C^1 up to the boundary. r solves
// sigma(x_c) = 1/2, putting the only interior critical point at x_c.
struct PsiAxis {
  double L = 1.0;
  double r = 1.0;
  bool mirrored = false;

  double sigma(double x) const {
    const double u = mirrored ? (L - x) / L : x / L;
    return std::pow(u, r);
  }

  double value(double x) const {
    const double s = sigma(x);
    return s * (1.0 - s);
  }
};

inline PsiAxis make_psi_axis(double L, double xc) {
  if (!(xc > 0.0) || !(xc < L))
    throw std::invalid_argument("build_psi: center must be strictly interior");
  PsiAxis ax;
  ax.L = L;
  ax.mirrored = xc < 0.5 * L;
  const double frac = ax.mirrored ? (L - xc) / L : xc / L;
  ax.r = frac == 0.5 ? 1.0 : std::log(0.5) / std::log(frac);
  return ax;
}

struct PsiFunc {
  int dim = 1;
  PsiAxis ax[2];

  double value(const std::array<double, 2>& x) const {
    double v = ax[0].value(x[0]);
    if (dim == 2) v *= ax[1].value(x[1]);
    return v;
  }
};

inline PsiFunc make_psi_func(const Grid& g, const std::array<double, 2>& center) {
  PsiFunc f;
  f.dim = g.dim;
  for (int a = 0; a < g.dim; ++a) f.ax[a] = make_psi_axis(g.extents[a], center[a]);
  return f;
}

}  // namespace detail

// Nodal samples of the auxiliary function: positive inside, zero on the
// boundary, single interior critical point at omega0_center.
inline ScalarField build_psi(const Grid& g, const std::array<double, 2>& omega0_center) {
  const detail::PsiFunc f = detail::make_psi_func(g, omega0_center);
  ScalarField psi(g.size());
  for (int i = 0; i < g.size(); ++i) psi[i] = f.value(g.coord(i));
  return psi;
}

struct WeightValues {
  double phi;
  double alpha;
  double phi_star;
  double alpha_star;
};

struct WeightSet {
  detail::PsiFunc psi_func;
  ScalarField psi;     // nodal samples
  double psi_norm = 0.25;  // max of sigma(1-sigma) is exactly 1/4 per axis
  double lambda = 0.0;
  double s = 0.0;
  double m = 2.0;
  double T = 1.0;
};

inline WeightSet make_weightset(const Grid& g, const std::array<double, 2>& omega0_center,
                                double m, double T) {
  if (!(m > 1.0)) throw std::invalid_argument("weights: m must be > 1");
  if (!(T > 0.0)) throw std::invalid_argument("weights: T must be > 0");
  WeightSet ws;
  ws.psi_func = detail::make_psi_func(g, omega0_center);
  ws.psi = build_psi(g, omega0_center);
  ws.psi_norm = std::pow(0.25, g.dim);
  ws.m = m;
  ws.T = T;
  return ws;
}

// phi   = e^{lambda(psi + m |psi|)} / (t(T-t))
// alpha = (e^{lambda(psi + m |psi|)} - e^{2 lambda m |psi|}) / (t(T-t))
// starred variants take psi at its extremes: phi* = min_x phi (psi = 0),
// alpha* = max_x alpha (psi = |psi|).
inline WeightValues eval_weights(const WeightSet& ws, const std::array<double, 2>& x,
                                 double t) {
  if (!(t > 0.0) || !(t < ws.T))
    throw std::domain_error("eval_weights: weights are singular at t in {0, T}");
  const double tf = t * (ws.T - t);
  const double P = ws.psi_norm;
  const double psi = ws.psi_func.value(x);
  const double e_psi = std::exp(ws.lambda * (psi + ws.m * P));
  const double e_top = std::exp(2.0 * ws.lambda * ws.m * P);
  WeightValues w;
  w.phi = e_psi / tf;
  w.alpha = (e_psi - e_top) / tf;
  w.phi_star = std::exp(ws.lambda * ws.m * P) / tf;
  w.alpha_star = (std::exp(ws.lambda * (ws.m + 1.0) * P) - e_top) / tf;
  return w;
}

// Smallest lambda on the geometric grid 0.5 * 1.1^k with 3 alpha* <= 2 alpha
// at every mesh node. The time factor cancels, so the check reduces to
// 3(e^{lambda(m+1)|psi|} - e^{2 lambda m |psi|}) <= 2(e^{lambda(psi + m |psi|)} - e^{2 lambda m |psi|}).
inline double choose_lambda(const WeightSet& draft) {
  const double P = draft.psi_norm;
  const double psi_min = draft.psi.minCoeff();
  // scaled by e^{-lambda(m+1)|psi|} to stay overflow-safe for small m - 1:
  // 3 - e^{lambda(m-1)|psi|} <= 2 e^{lambda(psi_min - |psi|)}
  for (int k = 0; k < 400; ++k) {
    const double lam = 0.5 * std::pow(1.1, k);
    const double lhs = 3.0 - std::exp(lam * (draft.m - 1.0) * P);
    const double rhs = 2.0 * std::exp(lam * (psi_min - P));
    if (lhs <= rhs) return lam;
  }
  throw std::runtime_error("choose_lambda: search grid exhausted");
}

inline double choose_s(double T, double a_inf_norm, double s0) {
  if (!(T > 0.0) || !(a_inf_norm >= 0.0) || !(s0 > 0.0))
    throw std::invalid_argument("choose_s: invalid parameters");
  const double g = 1.0 + std::pow(a_inf_norm, 2.0 / 3.0) + std::pow(a_inf_norm, 2.0 / 5.0);
  return s0 * (T + g * T * T + T * T * T * T);
}

inline WeightSet finalize_weightset(const Grid& g,
                                    const std::array<double, 2>& omega0_center,
                                    double m, double T, double a_inf_norm, double s0) {
  WeightSet ws = make_weightset(g, omega0_center, m, T);
  ws.lambda = choose_lambda(ws);
  ws.s = choose_s(T, a_inf_norm, s0);
  return ws;
}

// Observation weight rows w(x, t_{k-1/2}) = e^{2 s alpha} phi^8 on omega,
// k = 1..n_steps, normalized by the maximum over omega x steps. The
// normalization is a pure gauge: scaling the quadratic form rescales the
// minimizer but leaves the extracted control unchanged.
inline Eigen::MatrixXd weight_rows(const WeightSet& ws, const Grid& g,
                                   const ScalarField& mask, int n_steps) {
  const double dt = ws.T / n_steps;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_steps, g.size());
  for (int k = 1; k <= n_steps; ++k) {
    const double t = (k - 0.5) * dt;
    for (int i = 0; i < g.size(); ++i) {
      if (mask[i] == 0.0) continue;
      const WeightValues wv = eval_weights(ws, g.coord(i), t);
      const double arg = 2.0 * ws.s * wv.alpha + 8.0 * std::log(wv.phi);
      w(k - 1, i) = flush_exp(arg);
    }
  }
  const double wmax = w.maxCoeff();
  if (!(wmax > 0.0))
    throw std::runtime_error("weight_rows: weight underflows everywhere on omega");
  w /= wmax;
  return w;
}

}  // namespace humctrl
