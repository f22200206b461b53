#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>

namespace humctrl {

using ScalarField = Eigen::VectorXd;

// Uniform interior-node grid on a 1D interval or 2D box with homogeneous
// Dirichlet boundary. Nodes exclude the boundary: along an axis of extent L
// with n interior nodes the spacing is L/(n+1) and node i sits at (i+1)*h.
struct Grid {
  int dim = 1;
  std::array<double, 2> extents{1.0, 1.0};
  std::array<int, 2> n_cells{3, 1};  // interior node count per axis
  std::array<double, 2> spacing{0.0, 0.0};

  int size() const { return dim == 1 ? n_cells[0] : n_cells[0] * n_cells[1]; }

  double cell_volume() const {
    return dim == 1 ? spacing[0] : spacing[0] * spacing[1];
  }

  // lexicographic: idx = ix + nx*iy
  int index(int ix, int iy = 0) const { return ix + n_cells[0] * iy; }

  std::array<double, 2> coord(int idx) const {
    int ix = idx % n_cells[0];
    int iy = idx / n_cells[0];
    return {(ix + 1) * spacing[0], dim == 2 ? (iy + 1) * spacing[1] : 0.0};
  }
};

inline Grid build_grid(int dim, const std::array<double, 2>& extents,
                       const std::array<int, 2>& n_cells) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("grid: dim must be 1 or 2");
  Grid g;
  g.dim = dim;
  g.extents = extents;
  g.n_cells = n_cells;
  if (dim == 1) {
    g.n_cells[1] = 1;
    g.extents[1] = 1.0;
  }
  for (int a = 0; a < dim; ++a) {
    if (!(extents[a] > 0.0))
      throw std::invalid_argument("grid: extents must be positive");
    if (n_cells[a] < 3)
      throw std::invalid_argument("grid: at least 3 interior nodes per axis");
    g.spacing[a] = extents[a] / (n_cells[a] + 1);
  }
  g.spacing[1] = (dim == 2) ? g.spacing[1] : 0.0;
  return g;
}

// L2(Omega) pairing on nodal fields: nodal sum times cell volume.
inline double l2_inner(const Grid& g, const ScalarField& u, const ScalarField& v) {
  return g.cell_volume() * u.dot(v);
}

inline double l2_norm(const Grid& g, const ScalarField& u) {
  return std::sqrt(g.cell_volume()) * u.norm();
}

}  // namespace humctrl
