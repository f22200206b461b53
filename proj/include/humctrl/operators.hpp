#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "humctrl/grid.hpp"

namespace humctrl {

using SpMat = Eigen::SparseMatrix<double>;

// Conductivity coefficient field. Diagonal anisotropy only: kx drives
// x-direction fluxes, ky y-direction ones (ky ignored in 1D). Full tensors
// with cross terms are out of scope (they break the SPD stencil).
struct Tensor {
  std::function<double(double, double)> kx;
  std::function<double(double, double)> ky;

  static Tensor constant(double c) {
    auto f = [c](double, double) { return c; };
    return {f, f};
  }

  static Tensor isotropic(std::function<double(double, double)> f) {
    return {f, f};
  }

  static Tensor diagonal(std::function<double(double, double)> fx,
                         std::function<double(double, double)> fy) {
    return {std::move(fx), std::move(fy)};
  }

  Tensor scaled(double s) const {
    auto fx = kx, fy = ky;
    return {[s, fx](double x, double y) { return s * fx(x, y); },
            [s, fy](double x, double y) { return s * fy(x, y); }};
  }
};

struct DiffusionOperator {
  Grid grid;
  SpMat mat;  // -div(M grad .) with homogeneous Dirichlet data
};

namespace detail {

inline double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

inline double coeff_at(const std::function<double(double, double)>& k, double x,
                       double y) {
  double v = k(x, y);
  if (!(v > 0.0))
    throw std::invalid_argument("assemble_diffusion: tensor must be strictly positive");
  return v;
}

}  // namespace detail

// Finite differences with harmonic averaging of nodal tensor values at cell
// interfaces; at boundary interfaces the outer value is taken at the boundary
// midpoint. Symmetric by construction (each face contributes one flux).
inline DiffusionOperator assemble_diffusion(const Grid& g, const Tensor& tensor) {
  const int n = g.size();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * (g.dim == 1 ? 3 : 5));
  const int nx = g.n_cells[0];
  const int ny = g.dim == 2 ? g.n_cells[1] : 1;
  const double hx = g.spacing[0];
  const double hy = g.dim == 2 ? g.spacing[1] : 1.0;

  auto face = [&](const std::function<double(double, double)>& k, double xa,
                  double ya, double xb, double yb, bool boundary) {
    double inner = detail::coeff_at(k, xa, ya);
    double outer = boundary ? detail::coeff_at(k, 0.5 * (xa + xb), 0.5 * (ya + yb))
                            : detail::coeff_at(k, xb, yb);
    return detail::harmonic(inner, outer);
  };

  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int i = g.index(ix, iy);
      const double x = (ix + 1) * hx;
      const double y = g.dim == 2 ? (iy + 1) * hy : 0.0;
      double diag = 0.0;

      const double kw = face(tensor.kx, x, y, x - hx, y, ix == 0);
      diag += kw / (hx * hx);
      if (ix > 0) trip.emplace_back(i, g.index(ix - 1, iy), -kw / (hx * hx));
      const double ke = face(tensor.kx, x, y, x + hx, y, ix == nx - 1);
      diag += ke / (hx * hx);
      if (ix < nx - 1) trip.emplace_back(i, g.index(ix + 1, iy), -ke / (hx * hx));

      if (g.dim == 2) {
        const double ks = face(tensor.ky, x, y, x, y - hy, iy == 0);
        diag += ks / (hy * hy);
        if (iy > 0) trip.emplace_back(i, g.index(ix, iy - 1), -ks / (hy * hy));
        const double kn = face(tensor.ky, x, y, x, y + hy, iy == ny - 1);
        diag += kn / (hy * hy);
        if (iy < ny - 1) trip.emplace_back(i, g.index(ix, iy + 1), -kn / (hy * hy));
      }
      trip.emplace_back(i, i, diag);
    }
  }

  DiffusionOperator op;
  op.grid = g;
  op.mat.resize(n, n);
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.mat.makeCompressed();
  return op;
}

// Linear combination diag(d) + sum_i c_i * A_i, the operator shape of every
// implicit step in the toolkit (sigma*I + A, c_m/dt*I + kappa*A_e + diag(a), ...).
struct OpCombo {
  Eigen::VectorXd diag;
  std::vector<std::pair<double, const SpMat*>> terms;

  OpCombo(double sigma, const DiffusionOperator& a)
      : diag(Eigen::VectorXd::Constant(a.mat.rows(), sigma)) {
    terms.emplace_back(1.0, &a.mat);
  }

  explicit OpCombo(Eigen::VectorXd d) : diag(std::move(d)) {}

  OpCombo& add(double c, const SpMat& m) {
    terms.emplace_back(c, &m);
    return *this;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = diag.cwiseProduct(x);
    for (const auto& [c, m] : terms) y.noalias() += c * (*m * x);
    return y;
  }

  Eigen::VectorXd jacobi() const {
    Eigen::VectorXd d = diag;
    for (const auto& [c, m] : terms) d += c * m->diagonal();
    return d;
  }
};

// Preconditioned conjugate gradient (Jacobi). Relative residual tolerance;
// rhs = 0 short-circuits to the exact zero solution.
inline ScalarField solve_spd(const OpCombo& op, const Eigen::VectorXd& rhs,
                             double tol = 1e-13) {
  if (!(tol > 0.0)) throw std::invalid_argument("solve_spd: tol must be positive");
  const int n = static_cast<int>(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) return Eigen::VectorXd::Zero(n);

  const Eigen::VectorXd minv = op.jacobi().cwiseInverse();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = rhs;
  Eigen::VectorXd z = minv.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  const int max_iters = 10 * n + 200;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd q = op.apply(p);
    const double alpha = rz / p.dot(q);
    x += alpha * p;
    r -= alpha * q;
    if (r.norm() <= tol * bnorm) return x;
    z = minv.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  throw std::runtime_error("solve_spd: iteration limit exceeded, residual " +
                           std::to_string(r.norm() / bnorm));
}

}  // namespace humctrl
