#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "humctrl/grid.hpp"
#include "humctrl/operators.hpp"

namespace humctrl {

// Built-in reaction nonlinearities, one per controllability regime:
// none h = 0, lipschitz h(v) = L tanh(v), cubic h(v) = c3 v^3 + c1 v.
// All satisfy h(0) = 0.
struct Reaction {
  enum class Kind { none, lipschitz, cubic };
  Kind kind = Kind::none;
  double L = 1.0;
  double c3 = 1.0;
  double c1 = 0.0;

  static Reaction none() { return {}; }

  static Reaction lipschitz(double L) {
    if (!(L >= 0.0)) throw std::invalid_argument("reaction: L must be >= 0");
    Reaction r;
    r.kind = Kind::lipschitz;
    r.L = L;
    return r;
  }

  static Reaction cubic(double c3, double c1) {
    if (!(c3 > 0.0)) throw std::invalid_argument("reaction: c3 must be > 0");
    if (!(c1 >= 0.0)) throw std::invalid_argument("reaction: c1 must be >= 0");
    Reaction r;
    r.kind = Kind::cubic;
    r.c3 = c3;
    r.c1 = c1;
    return r;
  }
};

inline double reaction_eval(const Reaction& r, double v) {
  switch (r.kind) {
    case Reaction::Kind::none: return 0.0;
    case Reaction::Kind::lipschitz: return r.L * std::tanh(v);
    case Reaction::Kind::cubic: return r.c3 * v * v * v + r.c1 * v;
  }
  return 0.0;
}

inline double reaction_deriv(const Reaction& r, double v) {
  switch (r.kind) {
    case Reaction::Kind::none: return 0.0;
    case Reaction::Kind::lipschitz: {
      const double t = std::tanh(v);
      return r.L * (1.0 - t * t);
    }
    case Reaction::Kind::cubic: return 3.0 * r.c3 * v * v + r.c1;
  }
  return 0.0;
}

// g(z) = h(z)/z for z != 0, h'(0) at z = 0 (removable singularity)
inline double linearize_secant(const Reaction& r, double z) {
  if (z == 0.0) return reaction_deriv(r, 0.0);
  return reaction_eval(r, z) / z;
}

// a(z) = int_0^1 h'(s z) ds, closed form per kind; equals h(z)/z for z != 0
// by the fundamental theorem of calculus with h(0) = 0.
inline double linearize_integral(const Reaction& r, double z) {
  switch (r.kind) {
    case Reaction::Kind::none: return 0.0;
    case Reaction::Kind::lipschitz:
      return z == 0.0 ? r.L : r.L * std::tanh(z) / z;
    case Reaction::Kind::cubic: return r.c3 * z * z + r.c1;
  }
  return 0.0;
}

// Axis-aligned box, closed on both sides; selects the control nodes omega.
struct Window {
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{1.0, 1.0};

  bool contains(const std::array<double, 2>& x, int dim) const {
    for (int a = 0; a < dim; ++a)
      if (x[a] < lo[a] || x[a] > hi[a]) return false;
    return true;
  }
};

struct ProblemSpec {
  Grid grid;
  double c_m = 1.0;
  double mu = 1.0;
  double epsilon = 0.0;  // epsilon = 0 selects the monodomain limit
  Tensor M_i = Tensor::constant(1.0);
  Tensor M_e = Tensor::constant(1.0);
  Window omega;
  double T = 1.0;
  int n_steps = 2;
  ScalarField v0;
  ScalarField ue0;

  double kappa() const { return mu / (mu + 1.0); }
  double dt() const { return T / n_steps; }
};

inline ScalarField omega_mask(const ProblemSpec& ps) {
  const Grid& g = ps.grid;
  ScalarField mask = ScalarField::Zero(g.size());
  for (int i = 0; i < g.size(); ++i)
    if (ps.omega.contains(g.coord(i), g.dim)) mask[i] = 1.0;
  return mask;
}

inline void validate(const ProblemSpec& ps) {
  if (!(ps.c_m > 0.0)) throw std::invalid_argument("problem: c_m must be > 0");
  if (!(ps.mu > 0.0)) throw std::invalid_argument("problem: mu must be > 0");
  if (!(ps.epsilon >= 0.0)) throw std::invalid_argument("problem: epsilon must be >= 0");
  if (!(ps.T > 0.0)) throw std::invalid_argument("problem: T must be > 0");
  if (ps.n_steps < 2) throw std::invalid_argument("problem: n_steps must be >= 2");
  if (ps.v0.size() != ps.grid.size() || ps.ue0.size() != ps.grid.size())
    throw std::invalid_argument("problem: initial fields must live on the grid");
  for (int a = 0; a < ps.grid.dim; ++a)
    if (!(ps.omega.lo[a] >= 0.0) || !(ps.omega.hi[a] <= ps.grid.extents[a]) ||
        !(ps.omega.lo[a] < ps.omega.hi[a]))
      throw std::invalid_argument("problem: omega must be a nonempty box inside the domain");
  if (omega_mask(ps).sum() == 0.0)
    throw std::invalid_argument("problem: omega contains no grid node");
}

// a(t, x) sampled on the trajectory time grid: row k holds a(t_k, .);
// the implicit step k -> k+1 reads row k+1.
struct PotentialField {
  Eigen::MatrixXd a;  // (n_steps + 1) x n_nodes

  static PotentialField constant(const ProblemSpec& ps, double value) {
    PotentialField p;
    p.a = Eigen::MatrixXd::Constant(ps.n_steps + 1, ps.grid.size(), value);
    return p;
  }

  static PotentialField zero(const ProblemSpec& ps) { return constant(ps, 0.0); }

  double inf_norm() const { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }
};

inline PotentialField potential_from_secant(const ProblemSpec& ps, const Reaction& r,
                                            const std::vector<ScalarField>& z) {
  PotentialField p = PotentialField::zero(ps);
  for (int k = 0; k <= ps.n_steps; ++k)
    for (int i = 0; i < ps.grid.size(); ++i)
      p.a(k, i) = linearize_secant(r, z[static_cast<std::size_t>(k)][i]);
  return p;
}

inline PotentialField potential_from_integral(const ProblemSpec& ps, const Reaction& r,
                                              const std::vector<ScalarField>& z) {
  PotentialField p = PotentialField::zero(ps);
  for (int k = 0; k <= ps.n_steps; ++k)
    for (int i = 0; i < ps.grid.size(); ++i)
      p.a(k, i) = linearize_integral(r, z[static_cast<std::size_t>(k)][i]);
  return p;
}

}  // namespace humctrl
