#include <doctest.h>

#include <cmath>

#include "superlab/coarsegrain.hpp"
#include "superlab/rng.hpp"

using namespace superlab;
using namespace superlab::coarsegrain;

namespace {

const grid::TriadicCube kUnit{0, {0.0, 0.0}};

solver::CoefficientGrid random_field(std::uint64_t seed, int r) {
  field::FieldParams p;
  p.gamma = 0.25;
  p.c_star = 1.0;
  p.nu = 0.5;
  p.seed = seed;
  p.scale_min = 2 - r;
  p.scale_max = 1;
  return solver::field_coefficients(p, kUnit, r, 1);
}

}  // namespace

TEST_CASE("constant fields") {
  const auto c = solver::constant_coefficients(kUnit, 3, 1.7);
  const Mat4d A = compute_block_matrix(c);
  Mat4d D = Mat4d::Zero();
  D.diagonal() << 1.7, 1.7, 1.0 / 1.7, 1.0 / 1.7;
  CHECK((A - D).norm() <= 1e-8);

  const auto k1 = solver::constant_coefficients(kUnit, 3, 1.0, 1.0);
  const CGMatrices m = coarse_grain(k1);
  CHECK((m.A - pointwise_block(1.0, 1.0)).norm() <= 1e-8);
  CHECK((m.A.topLeftCorner<2, 2>() - 2.0 * Mat2d::Identity()).norm() <= 1e-8);
  Mat2d J;
  J << 0.0, 1.0, -1.0, 0.0;
  CHECK((m.k - J).norm() <= 1e-8);
  CHECK((m.s - Mat2d::Identity()).norm() <= 1e-8);
  CHECK((m.s_star - Mat2d::Identity()).norm() <= 1e-8);
  CHECK((m.b - 2.0 * Mat2d::Identity()).norm() <= 1e-8);
}

TEST_CASE("extraction round trip") {
  Mat4d D = Mat4d::Zero();
  D.diagonal() << 0.8, 0.8, 1.25, 1.25;
  const auto m = extract_cg_matrices(D);
  CHECK((m.s - 0.8 * Mat2d::Identity()).norm() <= 1e-14);
  CHECK((m.s_star - 0.8 * Mat2d::Identity()).norm() <= 1e-14);
  CHECK(m.k.norm() <= 1e-14);
  CHECK((m.b - 0.8 * Mat2d::Identity()).norm() <= 1e-14);

  const Mat4d A = compute_block_matrix(random_field(4, 3));
  const Mat4d back = assemble_block(extract_cg_matrices(A));
  CHECK((back - A).norm() <= 1e-10 * A.norm());
}

TEST_CASE("J formulas") {
  const auto two = coarse_grain(solver::constant_coefficients(kUnit, 2, 2.0));
  CHECK(std::abs(compute_J(two, Vec2d(1.0, 0.0), Vec2d(2.0, 0.0))) <= 1e-8);

  const auto m = coarse_grain(random_field(7, 3));
  const rng::Stream st(5);
  for (int t = 0; t < 10; ++t) {
    const Vec2d p(st.normal(4 * t), st.normal(4 * t + 1)), q(st.normal(4 * t + 2), st.normal(4 * t + 3));
    const double j = compute_J(m, p, q);
    CHECK(j >= -1e-12);
    CHECK(compute_J_block(m.A, p, q) == doctest::Approx(j).epsilon(1e-10));
    CHECK(compute_J_split(m, p, q) == doctest::Approx(j).epsilon(1e-10));
  }
  // q = (s_* - k) p zeroes every square when s = s_*
  const auto c = coarse_grain(solver::constant_coefficients(kUnit, 2, 1.3, 0.6));
  const Vec2d p(0.4, -1.2);
  CHECK(std::abs(compute_J(c, p, (c.s_star - c.k) * p)) <= 1e-10);
}

TEST_CASE("J equals the maximizer energy") {
  // independent iterative block solve with P = (p, -q); J = energy - p.q
  const auto c = random_field(9, 3);
  const auto m = coarse_grain(c);
  solver::SolveOptions opt;
  opt.tol = 1e-12;
  const Vec2d p(0.7, -0.3), q(0.2, 0.9);
  const double energy = solver::solve_block_minimization(c, {p[0], p[1], -q[0], -q[1]}, opt).energy;
  CHECK(energy - p.dot(q) == doctest::Approx(compute_J(m, p, q)).epsilon(1e-4));
}

TEST_CASE("structural invariants on random fields") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = random_field(seed, 3);
    const auto tab = multiscale_table(c, 2);
    const auto& parent = tab.at(0)[0];
    const auto inv = check_invariants(parent);
    CHECK(inv.ok(1e-6));
    const double scale = parent.A.norm();
    CHECK(min_eigenvalue(subadditivity_defect(parent, tab.at(-1))) >= -1e-6 * scale);
    CHECK(min_eigenvalue(subadditivity_defect_dual(parent, tab.at(-1))) >= -1e-6 * scale);
    const auto neg = coarse_grain(solver::negated_kappa(c));
    CHECK((neg.s - parent.s).norm() <= 1e-8 * parent.s.norm());
    CHECK((neg.k + parent.k).norm() <= 1e-8 * parent.s.norm());
    const auto sc = coarse_grain(solver::scaled(c, 3.0));
    CHECK((sc.s - 3.0 * parent.s).norm() <= 1e-8 * 3.0 * parent.s.norm());
  }
}

TEST_CASE("subadditivity defect of constant and laminate fields") {
  const auto c = solver::constant_coefficients(kUnit, 3, 1.2, 0.4);
  const auto tab = multiscale_table(c, 2);
  CHECK(subadditivity_defect(tab.at(0)[0], tab.at(-1)).norm() <= 1e-8);

  const auto lam = solver::laminate_coefficients(kUnit, 4, 1.0, 2.0, 3);
  const auto lt = multiscale_table(lam, 2);
  const Mat4d D = subadditivity_defect(lt.at(0)[0], lt.at(-1));
  CHECK(min_eigenvalue(D) >= -1e-8 * D.norm());
  Vec4d e1 = Vec4d::Zero();
  e1[0] = 1.0;
  CHECK(e1.dot(D * e1) > 1e-6);
}

TEST_CASE("ellipticity constants") {
  const auto c = solver::constant_coefficients(kUnit, 3, 0.9);
  const auto ec = ellipticity_constants(multiscale_table(c, 1), 0.5, 1.0);
  CHECK(ec.lambda == doctest::Approx(0.9).epsilon(1e-8));
  CHECK(ec.Lambda == doctest::Approx(0.9).epsilon(1e-8));

  const auto t = multiscale_table(random_field(3, 4), 1);
  const auto a = ellipticity_constants(t, 0.1, 1.0), b = ellipticity_constants(t, 0.5, 1.0);
  CHECK(a.lambda <= b.lambda * (1.0 + 1e-12));
  CHECK(b.Lambda <= a.Lambda * (1.0 + 1e-12));
  CHECK(a.lambda <= a.Lambda);
  const auto& top = t.at(t.m)[0];
  const double lo = 1.0 / Eigen::JacobiSVD<Mat2d>(top.s_star.inverse()).singularValues()[0];
  const double hi = Eigen::JacobiSVD<Mat2d>(top.b).singularValues()[0];
  CHECK(b.lambda <= lo * (1.0 + 1e-9));
  CHECK(lo <= hi);
  CHECK(hi <= b.Lambda * (1.0 + 1e-9));
}

TEST_CASE("homogenization error") {
  const auto c = solver::constant_coefficients(kUnit, 3, 1.4);
  const auto tab = multiscale_table(c, 1);
  for (const auto& lvl : tab.cubes)
    for (const auto& cube : lvl) CHECK(max_bold_J(cube.A, 1.4) <= 1e-12);
  // E is a square root of J values, so rounding in J enters at its square root
  CHECK(homog_error(tab, 1.4, 0.5, 2.0, 2.0, 0).value <= 1e-6);
  const auto f = random_field(11, 3);
  const auto a = homog_error(multiscale_table(f, 1), 0.8, 0.5, 2.0, 2.0, 0);
  const auto b = homog_error_direct(f, 1, 0.8, 0.5, 2.0, 2.0, 0);
  CHECK(a.value == doctest::Approx(b.value).epsilon(1e-6));
}
