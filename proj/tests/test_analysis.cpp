#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "humctrl/analysis.hpp"
#include "humctrl/rng.hpp"

using namespace humctrl;

namespace {

ProblemSpec make_ps(int n, int n_steps, double T, double eps, double c_m = 1.0,
                    double mu = 1.0, double mi = 1.0, double me = 1.0,
                    double win_lo = 0.25, double win_hi = 0.75) {
  ProblemSpec ps;
  ps.grid = build_grid(1, {1.0, 0.0}, {n, 0});
  ps.c_m = c_m;
  ps.mu = mu;
  ps.epsilon = eps;
  ps.M_i = Tensor::constant(mi);
  ps.M_e = Tensor::constant(me);
  ps.omega = Window{{win_lo, 0.0}, {win_hi, 1.0}};
  ps.T = T;
  ps.n_steps = n_steps;
  ps.v0 = ScalarField::Zero(n);
  ps.ue0 = ScalarField::Zero(n);
  return ps;
}

// Dense pencil reference: assemble both operators column-by-column in the
// Euclidean basis, then reduce through the spectral decomposition of the
// observation operator. The usual Cholesky-based generalized eigensolver is
// deliberately avoided: it silently corrupts the top eigenvalue once the
// pencil denominator gets as ill-conditioned as these Gramians do.
double dense_pencil_oracle(const ProblemSpec& ps, const PotentialField& a) {
  const detail::PencilOps pencil(ps, a);
  const int n = ps.grid.size();
  const int dim = 2 * n;
  REQUIRE(dim <= 150);
  Eigen::MatrixXd Ad(dim, dim), Bd(dim, dim);
  for (int j = 0; j < dim; ++j) {
    TerminalData e{ScalarField::Zero(n), ScalarField::Zero(n)};
    if (j < n)
      e.phi_T[j] = 1.0;
    else
      e.phi_eT[j - n] = 1.0;
    const TerminalData Ae = pencil.apply_A(e);
    const TerminalData Be = pencil.apply_B(e);
    Ad.col(j) << Ae.phi_T, Ae.phi_eT;
    Bd.col(j) << Be.phi_T, Be.phi_eT;
  }
  Ad = 0.5 * (Ad + Ad.transpose()).eval();
  Bd = 0.5 * (Bd + Bd.transpose()).eval();
  const double sigma = 1e-12 * ps.grid.cell_volume() * Ad.trace() / dim;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(Ad);
  const Eigen::VectorXd scale =
      (ea.eigenvalues().array() + sigma).cwiseInverse().cwiseSqrt();
  const Eigen::MatrixXd reduced = scale.asDiagonal() *
                                  ea.eigenvectors().transpose() * Bd *
                                  ea.eigenvectors() * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(reduced);
  return ec.eigenvalues().maxCoeff();
}

}  // namespace

TEST_CASE("observability estimate matches the dense pencil", "[analysis]") {
  SECTION("observe everywhere") {
    ProblemSpec ps = make_ps(6, 5, 0.7, 0.37, 1.3, 0.8, 0.7, 1.1, 0.0, 1.0);
    const PotentialField a = PotentialField::zero(ps);
    const double oracle = dense_pencil_oracle(ps, a);
    const double est = estimate_observability_constant(ps, a);
    INFO("oracle " << oracle << " estimate " << est);
    REQUIRE(oracle == Catch::Approx(0.458263112915).epsilon(1e-6));
    REQUIRE(std::abs(est - oracle) <= 1e-6 * oracle);
  }

  SECTION("short horizon, interior window") {
    ProblemSpec ps = make_ps(6, 8, 0.25, 0.37, 1.3, 0.8, 0.7, 1.1, 0.15, 0.9);
    const PotentialField a = PotentialField::zero(ps);
    const double oracle = dense_pencil_oracle(ps, a);
    const double est = estimate_observability_constant(ps, a);
    INFO("oracle " << oracle << " estimate " << est);
    REQUIRE(oracle == Catch::Approx(4.867944490118).epsilon(1e-6));
    REQUIRE(std::abs(est - oracle) <= 1e-6 * oracle);
  }

  SECTION("2d, observe everywhere") {
    ProblemSpec ps;
    ps.grid = build_grid(2, {1.0, 1.0}, {4, 3});
    ps.c_m = 1.1;
    ps.mu = 1.4;
    ps.epsilon = 0.2;
    ps.M_i = Tensor::constant(0.9);
    ps.M_e = Tensor::constant(0.6);
    ps.omega = Window{{0.0, 0.0}, {1.0, 1.0}};
    ps.T = 0.4;
    ps.n_steps = 5;
    ps.v0 = ScalarField::Zero(12);
    ps.ue0 = ScalarField::Zero(12);
    const PotentialField a = PotentialField::zero(ps);
    const double oracle = dense_pencil_oracle(ps, a);
    const double est = estimate_observability_constant(ps, a);
    INFO("oracle " << oracle << " estimate " << est);
    REQUIRE(std::abs(est - oracle) <= 1e-6 * oracle);
  }
}

TEST_CASE("observability constant grows as the window shrinks", "[analysis]") {
  std::vector<std::pair<double, double>> windows = {
      {0.15, 0.85}, {0.3, 0.7}, {0.42, 0.58}};
  double prev = 0.0;
  for (const auto& [lo, hi] : windows) {
    ProblemSpec ps = make_ps(10, 8, 0.5, 0.2, 1.0, 0.9, 1.0, 1.0, lo, hi);
    const double c = estimate_observability_constant(ps, PotentialField::zero(ps));
    INFO("window [" << lo << "," << hi << "] c_obs " << c);
    REQUIRE(c >= prev * (1.0 - 1e-10));
    prev = c;
  }
}

TEST_CASE("observability constant stays flat in epsilon", "[analysis]") {
  const std::vector<double> eps = {1.0, 1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<double> logc, loginv;
  for (double e : eps) {
    ProblemSpec ps = make_ps(12, 12, 0.5, e, 1.0, 1.0);
    const double c = estimate_observability_constant(ps, PotentialField::zero(ps));
    REQUIRE(c > 0.0);
    logc.push_back(std::log(c));
    loginv.push_back(std::log(1.0 / e));
    INFO("eps " << e << " c_obs " << c);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int m = static_cast<int>(eps.size());
  for (int i = 0; i < m; ++i) {
    sx += loginv[i];
    sy += logc[i];
    sxx += loginv[i] * loginv[i];
    sxy += loginv[i] * logc[i];
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  INFO("slope of log c_obs vs log(1/eps): " << slope);
  REQUIRE(slope <= 0.1);
}

TEST_CASE("certificates are exactly zero on zero data", "[analysis]") {
  ProblemSpec ps = make_ps(10, 12, 0.6, 0.5);
  const PotentialField a = PotentialField::constant(ps, 0.3);
  const WeightSet ws = finalize_weightset(ps.grid, {0.5, 0.5}, 2.0, ps.T,
                                          a.inf_norm(), 1.0);
  TerminalData zero{ScalarField::Zero(10), ScalarField::Zero(10)};

  const CarlemanCertificate cc = carleman_certificate(ps, a, ws, zero);
  for (const CertificateValue& v : {cc.variant_M, cc.variant_Mi}) {
    REQUIRE(v.lhs == 0.0);
    REQUIRE(v.rhs == 0.0);
    REQUIRE(v.ratio == 0.0);
    REQUIRE(v.degenerate);
  }
  const CertificateValue ec = energy_certificate(ps, ws, zero);
  REQUIRE(ec.lhs == 0.0);
  REQUIRE(ec.rhs == 0.0);
  REQUIRE(ec.degenerate);
}

TEST_CASE("certificates are finite and positive on random data", "[analysis]") {
  ProblemSpec ps = make_ps(10, 12, 0.6, 0.5);
  const PotentialField a = PotentialField::constant(ps, 0.3);
  const WeightSet ws = finalize_weightset(ps.grid, {0.5, 0.5}, 2.0, ps.T,
                                          a.inf_norm(), 1.0);
  Rng rng(derive_seed(99, "cert"));
  TerminalData xi{ScalarField(10), ScalarField(10)};
  for (int i = 0; i < 10; ++i) {
    xi.phi_T[i] = rng.normal();
    xi.phi_eT[i] = rng.normal();
  }

  const CarlemanCertificate cc = carleman_certificate(ps, a, ws, xi);
  for (const CertificateValue& v : {cc.variant_M, cc.variant_Mi}) {
    INFO("lhs " << v.lhs << " rhs " << v.rhs << " ratio " << v.ratio);
    REQUIRE(v.lhs > 0.0);
    REQUIRE(v.rhs > 0.0);
    REQUIRE(v.ratio > 0.0);
    REQUIRE(std::isfinite(v.ratio));
    REQUIRE_FALSE(v.degenerate);
  }
  const CertificateValue ec = energy_certificate(ps, ws, xi);
  INFO("energy lhs " << ec.lhs << " rhs " << ec.rhs << " ratio " << ec.ratio);
  REQUIRE(ec.lhs > 0.0);
  REQUIRE(ec.rhs > 0.0);
  REQUIRE(std::isfinite(ec.ratio));
  REQUIRE_FALSE(ec.degenerate);
}

TEST_CASE("sweep validates its epsilon list", "[analysis]") {
  ProblemSpec ps = make_ps(8, 6, 0.5, 1.0);
  const PotentialField a = PotentialField::zero(ps);
  HumConfig cfg;
  REQUIRE_THROWS_AS(epsilon_sweep(ps, a, cfg, {}), std::invalid_argument);
  REQUIRE_THROWS_AS(epsilon_sweep(ps, a, cfg, {1.0, 1.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(epsilon_sweep(ps, a, cfg, {0.5, 0.6}), std::invalid_argument);
  REQUIRE_THROWS_AS(epsilon_sweep(ps, a, cfg, {1.0, -0.1}), std::invalid_argument);
}

TEST_CASE("sweep reports one row per epsilon and is deterministic", "[analysis]") {
  ProblemSpec ps = make_ps(10, 10, 0.5, 1.0, 2.0);
  for (int i = 0; i < 10; ++i)
    ps.v0[i] = std::sin(M_PI * ps.grid.coord(i)[0]);
  const PotentialField a = PotentialField::zero(ps);
  HumConfig cfg;
  cfg.max_iters = 20000;  // the 1e-2 and 0 rows need ~4.5k on this instance
  const std::vector<double> eps = {1.0, 1e-2, 0.0};

  const SweepReport r1 = epsilon_sweep(ps, a, cfg, eps, WeightParams{}, 31);
  REQUIRE(r1.rows.size() == 3);
  REQUIRE_FALSE(r1.any_failed);
  for (const SweepRow& row : r1.rows) {
    INFO("eps " << row.epsilon << " |f| " << row.control_norm << " c_obs "
                << row.c_obs << " carleman " << row.carleman_ratio_M);
    REQUIRE(row.converged);
    REQUIRE(row.control_norm > 0.0);
    REQUIRE(row.c_obs > 0.0);
  }
  REQUIRE(r1.rows.back().epsilon == 0.0);
  REQUIRE(r1.rows.back().dist_to_limit == 0.0);
  REQUIRE(r1.rows.front().dist_to_limit > 0.0);

  const std::string csv1 = sweep_csv(r1);
  REQUIRE(csv1.rfind("epsilon,control_norm,bound_ratio,term_v,term_ue,c_obs,"
                     "carleman_ratio_M,carleman_ratio_Mi,dist_to_limit,converged\n",
                     0) == 0);

  const SweepReport r2 = epsilon_sweep(ps, a, cfg, eps, WeightParams{}, 31);
  REQUIRE(sweep_csv(r2) == csv1);
  REQUIRE(sweep_json(r2).dump(2) == sweep_json(r1).dump(2));

  const SweepReport r3 = epsilon_sweep(ps, a, cfg, eps, WeightParams{}, 31, 3);
  REQUIRE(sweep_csv(r3) == csv1);
  REQUIRE(sweep_json(r3).dump(2) == sweep_json(r1).dump(2));

  const nlohmann::ordered_json j = sweep_json(r1);
  REQUIRE(j["note"] == kDiagnosticsNote);
  REQUIRE(j["rows"].size() == 3);
}
