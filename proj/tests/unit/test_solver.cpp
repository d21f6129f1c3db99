#include <doctest.h>

#include <cmath>
#include <vector>

#include "superlab/rng.hpp"
#include "superlab/solver.hpp"

using namespace superlab;
using namespace superlab::solver;

namespace {

const grid::TriadicCube kUnit{0, {0.0, 0.0}};

field::FieldParams small_field() {
  field::FieldParams p;
  p.gamma = 0.25;
  p.c_star = 1.0;
  p.nu = 1.0;
  p.seed = 21;
  p.scale_min = -2;
  p.scale_max = 0;
  return p;
}

// torsion function of the unit square at its center, double sine series
double torsion_center() {
  double s = 0.0;
  for (int m = 1; m < 4000; m += 2)
    for (int n = 1; n < 4000; n += 2) {
      const double sign = (((m - 1) / 2 + (n - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
      s += sign / (static_cast<double>(m) * n * (static_cast<double>(m) * m + static_cast<double>(n) * n));
    }
  return 16.0 / std::pow(M_PI, 4) * s;
}

}  // namespace

TEST_CASE("coefficient grids") {
  const auto c = constant_coefficients(kUnit, 2, 1.5, 0.3);
  CHECK(c.n == 9);
  CHECK(c.kappa.size() == 100);
  CHECK_NOTHROW(c.validate());
  const auto s = scaled(c, 2.0);
  CHECK(s.nu == 3.0);
  CHECK(s.kappa_at(3, 4) == doctest::Approx(0.6));
  CHECK(negated_kappa(c).kappa_at(0, 0) == -0.3);
  CHECK_THROWS(constant_coefficients(kUnit, 2, -1.0).validate());
  const auto lam = laminate_coefficients(kUnit, 2, 1.0, 2.0);
  CHECK(lam.nu_at(0, 0) != lam.nu_at(1, 0));
  CHECK(lam.nu_at(0, 0) == lam.nu_at(0, 5));
}

TEST_CASE("grid adequacy rejects unresolved fields") {
  field::FieldParams p = small_field();
  CHECK_NOTHROW(check_grid_adequacy(p, kUnit, 5));
  p.scale_min = -6;
  CHECK_THROWS(check_grid_adequacy(p, kUnit, 3));
}

TEST_CASE("linear boundary data reproduces the linear function") {
  const auto c = constant_coefficients(kUnit, 3, 1.3);
  const auto res = solve_dirichlet(c, nullptr, nullptr, [](Vec2 x) { return 2.0 * x[0] - 0.5 * x[1] + 1.0; });
  CHECK(res.report.converged);
  double err = 0.0;
  for (int j = 0; j < res.u.n(); ++j)
    for (int i = 0; i < res.u.n(); ++i) {
      const Vec2 x = res.u.cell_center(i, j);
      err = std::max(err, std::abs(res.u(i, j) - (2.0 * x[0] - 0.5 * x[1] + 1.0)));
    }
  CHECK(err < 1e-9);
}

TEST_CASE("constant shift of kappa leaves the solution unchanged") {
  const auto base = field_coefficients(small_field(), kUnit, 4, 0);
  auto shifted = base;
  for (double& k : shifted.kappa) k += 3.7;
  const auto h = [](Vec2 x) { return std::sin(3.0 * x[0]) + x[1] * x[1]; };
  SolveOptions opt;
  opt.tol = 1e-12;
  const auto a = solve_dirichlet(base, nullptr, nullptr, h, opt);
  const auto b = solve_dirichlet(shifted, nullptr, nullptr, h, opt);
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.u.values().size(); ++k) {
    diff = std::max(diff, std::abs(a.u.values()[k] - b.u.values()[k]));
    scale = std::max(scale, std::abs(a.u.values()[k]));
  }
  CHECK(diff <= 1e-10 * scale);
}

TEST_CASE("divergence source matches the series torsion value") {
  const auto c = constant_coefficients(kUnit, 5, 1.0);
  const auto g1 = grid::sample(kUnit, 5, [](Vec2 x) { return x[0]; });
  SolveOptions opt;
  opt.direct = true;
  const auto res = solve_dirichlet(c, &g1, nullptr, [](Vec2) { return 0.0; }, opt);
  const int mid = res.u.n() / 2;
  CHECK(res.u(mid, mid) == doctest::Approx(torsion_center()).epsilon(1e-3));

  // iterative and direct paths agree
  const auto c4 = constant_coefficients(kUnit, 4, 1.0, 0.0);
  const auto g4 = grid::sample(kUnit, 4, [](Vec2 x) { return x[0]; });
  SolveOptions it;
  it.tol = 1e-12;
  const auto a = solve_dirichlet(c4, &g4, nullptr, [](Vec2) { return 0.0; }, it);
  const auto b = solve_dirichlet(c4, &g4, nullptr, [](Vec2) { return 0.0; }, opt);
  CHECK(a.report.converged);
  CHECK(a.report.relative_residual <= 1e-12);
  for (std::size_t k = 0; k < a.u.values().size(); ++k) CHECK(a.u.values()[k] == doctest::Approx(b.u.values()[k]).epsilon(1e-9));
}

TEST_CASE("constant coefficients are optimal for the block problem") {
  const double nu = 1.7;
  const auto c = constant_coefficients(kUnit, 3, nu);
  const Vec4 P{0.3, -1.1, 0.8, 0.25};
  const auto r = solve_block_minimization(c, P);
  const double p2 = P[0] * P[0] + P[1] * P[1], q2 = P[2] * P[2] + P[3] * P[3];
  CHECK(r.energy == doctest::Approx(0.5 * (nu * p2 + q2 / nu)).epsilon(1e-10));
  double amp = 0.0;
  for (double v : r.u.values()) amp = std::max(amp, std::abs(v));
  for (double v : r.psi.values()) amp = std::max(amp, std::abs(v));
  CHECK(amp < 1e-9);
}

TEST_CASE("block energy homogeneity") {
  const auto c = field_coefficients(small_field(), kUnit, 4, 0);
  const double lam = 2.5;
  const Vec4 P{1.0, 0.4, -0.3, 0.7};
  const Vec4 Q{std::sqrt(lam) * P[0], std::sqrt(lam) * P[1], P[2] / std::sqrt(lam), P[3] / std::sqrt(lam)};
  const BlockFactor fa(scaled(c, lam)), fb(c);
  CHECK(fa.solve(P).energy == doctest::Approx(fb.solve(Q).energy).epsilon(1e-9));
  // factorized and iterative paths agree
  SolveOptions opt;
  opt.tol = 1e-12;
  CHECK(solve_block_minimization(c, P, opt).energy == doctest::Approx(fb.solve(P).energy).epsilon(1e-8));
}

TEST_CASE("laminate block energy across the stripes") {
  const auto c = laminate_coefficients(kUnit, 5, 1.0, 2.0);
  const BlockFactor f(c);
  const double e = f.solve({1.0, 0.0, 0.0, 0.0}).energy;
  CHECK(std::abs(e / (0.5 * 4.0 / 3.0) - 1.0) <= 0.02);
}

TEST_CASE("parallel and serial stencil application agree bitwise") {
  const auto c = field_coefficients(small_field(), kUnit, 4, 0);
  const auto S = dirichlet_operator(c);
  const std::size_t N = static_cast<std::size_t>(S.n) * S.n;
  std::vector<double> x(N), y1(N), y2(N);
  const rng::Stream st(3);
  for (std::size_t k = 0; k < N; ++k) x[k] = st.normal(k);
  S.apply(x.data(), y1.data(), true);
  S.apply_serial(x.data(), y2.data());
  CHECK(y1 == y2);
}

TEST_CASE("fast Poisson inverts the unit stiffness operator") {
  const auto c = constant_coefficients(kUnit, 3, 1.0);
  const auto S = nu_operator(c);
  const FastPoisson fp(S.n);
  const std::size_t N = static_cast<std::size_t>(S.n) * S.n;
  std::vector<double> x(N), y(N), z(N);
  const rng::Stream st(8);
  for (std::size_t k = 0; k < N; ++k) x[k] = st.normal(k);
  S.apply(x.data(), y.data());
  fp.solve(y.data(), z.data());
  for (std::size_t k = 0; k < N; ++k) CHECK(z[k] == doctest::Approx(x[k]).epsilon(1e-9));
}
