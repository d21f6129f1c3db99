#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "superlab/rng.hpp"
#include "superlab/sde.hpp"

using namespace superlab;
using namespace superlab::sde;

namespace {

field::FieldParams quenched(int lo, int hi, std::uint64_t seed = 5) {
  field::FieldParams p;
  p.gamma = 0.25;
  p.c_star = 1.0;
  p.nu = 1.0;
  p.seed = seed;
  p.scale_min = lo;
  p.scale_max = hi;
  return p;
}

field::FieldParams brownian(double nu) {
  field::FieldParams p;
  p.c_star = 0.0;
  p.nu = nu;
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

TEST_CASE("cached drift is bit-identical to direct evaluation") {
  const auto p = quenched(-2, 2);
  const QuenchedDrift f(p, {0.5, -0.5}, 20.0);
  const rng::Stream st(99);
  int mismatches = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec2 x{40.0 * st.uniform(2 * i) - 19.5, 40.0 * st.uniform(2 * i + 1) - 20.5};
    const Vec2 a = f(x), b = field::eval_drift(p, x, p.scale_max);
    mismatches += (a[0] != b[0] || a[1] != b[1]);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("configuration checks") {
  SimConfig cfg;
  cfg.field = quenched(-1, 1);
  cfg.horizon = 1.0;
  cfg.checkpoints = {0.5, 1.0};
  const double sup = estimate_sup_drift(cfg);
  cfg.dt = 1.0;
  CHECK_THROWS(resolve_dt(cfg, sup));
  CHECK_THROWS(simulate_ensemble(cfg));
  cfg.dt = 0.0;
  CHECK_NOTHROW(validate(cfg));
  CHECK(resolve_dt(cfg, sup) * sup <= pow3(-1) / 10.0 * (1.0 + 1e-12));
  cfg.checkpoints = {0.0, 1.0};
  CHECK_THROWS(validate(cfg));
  cfg.checkpoints = {0.5, 2.0};
  CHECK_THROWS(validate(cfg));
}

TEST_CASE("Brownian baseline") {
  SimConfig cfg;
  cfg.field = brownian(0.7);
  cfg.n_traj = 4000;
  cfg.horizon = 1.0;
  cfg.dt = 0.01;
  cfg.checkpoints = {0.1, 0.2, 0.5, 1.0};
  const auto ens = simulate_ensemble(cfg);
  CHECK(ens.n_invalid == 0);
  const auto m = quenched_moments(ens, 300);
  for (std::size_t i = 0; i < m.times.size(); ++i) {
    CHECK(m.reference[i] == doctest::Approx(4.0 * 0.7 * m.times[i]));
    CHECK(std::abs(m.second_moment[i] - 4.0 * 0.7 * m.times[i]) <= 3.0 * m.second_moment_ci[i].se);
    CHECK(m.variance[i] == doctest::Approx(m.second_moment[i] - m.mean_x[i] * m.mean_x[i] - m.mean_y[i] * m.mean_y[i]));
  }
}

TEST_CASE("constant drift override") {
  SimConfig cfg;
  cfg.field = brownian(0.5);
  cfg.constant_drift = Vec2{1.5, -0.5};
  cfg.n_traj = 4000;
  cfg.horizon = 2.0;
  cfg.dt = 0.01;
  cfg.checkpoints = {1.0, 2.0};
  const auto m = quenched_moments(simulate_ensemble(cfg), 300);
  for (std::size_t i = 0; i < m.times.size(); ++i) {
    const double t = m.times[i], sd = std::sqrt(2.0 * 0.5 * t / cfg.n_traj);
    CHECK(std::abs(m.mean_x[i] - 1.5 * t) <= 4.0 * sd);
    CHECK(std::abs(m.mean_y[i] + 0.5 * t) <= 4.0 * sd);
    const double target = 2.5 * t * t + 4.0 * 0.5 * t;
    CHECK(std::abs(m.second_moment[i] - target) <= 4.0 * m.second_moment_ci[i].se);
  }
}

TEST_CASE("ensembles are reproducible and independent of threading") {
  SimConfig cfg;
  cfg.field = quenched(-1, 1);
  cfg.n_traj = 200;
  cfg.horizon = 0.5;
  cfg.checkpoints = {0.25, 0.5};
  cfg.exit_levels = {0, 1};
  const auto a = simulate_ensemble(cfg);
  cfg.parallel = false;
  const auto b = simulate_ensemble(cfg);
  CHECK(a.positions == b.positions);
  CHECK(a.exit_times == b.exit_times);
  for (std::size_t t = 0; t < a.valid.size(); ++t) CHECK(a.exit_time(t, 0) <= a.exit_time(t, 1));
}

TEST_CASE("fit exponent") {
  std::vector<double> t, v;
  for (int i = 0; i < 12; ++i) {
    t.push_back(0.01 * std::pow(10.0, i / 4.0));
    v.push_back(2.0 * std::pow(t.back(), 1.3));
  }
  CHECK(fit_exponent(t, v).slope == doctest::Approx(1.3).epsilon(1e-10));
  CHECK_THROWS(fit_exponent({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}));
}

TEST_CASE("exit time PDE") {
  const grid::TriadicCube cube{0, {0.0, 0.0}};
  solver::SolveOptions opt;
  opt.direct = true;
  const auto w1 = expected_exit_time_via_pde(solver::constant_coefficients(cube, 5, 1.0), opt);
  CHECK(center_value(w1) == doctest::Approx(torsion_center()).epsilon(1e-3));

  const auto f = solver::field_coefficients(quenched(-1, 0), cube, 4, 0);
  auto f2 = solver::scaled(f, 1.0);
  f2.nu *= 2.0;
  for (double& k : f2.kappa) k *= 2.0;
  const auto a = expected_exit_time_via_pde(f, opt), b = expected_exit_time_via_pde(f2, opt);
  for (std::size_t k = 0; k < a.values().size(); ++k) CHECK(b.values()[k] == doctest::Approx(0.5 * a.values()[k]).epsilon(1e-9));

  auto shifted = f;
  for (double& k : shifted.kappa) k += 2.0;
  const auto c = expected_exit_time_via_pde(shifted, opt);
  for (std::size_t k = 0; k < a.values().size(); ++k) CHECK(c.values()[k] == doctest::Approx(a.values()[k]).epsilon(1e-9));
}

TEST_CASE("Feynman-Kac cross-check") {
  const grid::TriadicCube cube{0, {0.0, 0.0}};
  SimConfig cfg;
  cfg.field = brownian(1.0);
  cfg.n_traj = 3000;
  cfg.horizon = 2.0;
  cfg.exit_levels = {0};
  solver::SolveOptions opt;
  opt.direct = true;
  const auto x = exit_time_crosscheck(solver::constant_coefficients(cube, 4, 1.0), cfg, opt);
  CHECK(!x.inconclusive);
  CHECK(x.exited_fraction == 1.0);
  CHECK(x.pass(3.0));

  cfg.horizon = 0.01;
  const auto s = exit_time_crosscheck(solver::constant_coefficients(cube, 4, 1.0), cfg, opt);
  CHECK(s.inconclusive);
  CHECK(!s.pass(3.0));
}

TEST_CASE("exit tails") {
  SimConfig cfg;
  cfg.field = brownian(1.0);
  cfg.n_traj = 5000;
  cfg.horizon = 1.0;
  cfg.exit_levels = {0};
  const auto ens = simulate_ensemble(cfg);
  std::vector<double> tg;
  for (int i = 0; i < 31; ++i) tg.push_back(0.003 * std::pow(100.0, i / 30.0));
  const auto r = tail_shape_check(ens, 0, tg);
  CHECK(r.monotone);
  for (std::size_t i = 1; i < r.exit_prob.size(); ++i) CHECK(r.exit_prob[i] >= r.exit_prob[i - 1]);
  CHECK(r.c_fit > 0.0);
  CHECK(r.pass());
  CHECK(tail_functional(cfg.field, 0, 0.5) == doctest::Approx(1.0 / 0.5));
}

TEST_CASE("regularity sweep") {
  RegularityOptions opt;
  opt.resolution_exp = 3;
  opt.depth = 1;
  const auto flat = regularity_sweep(0.1, 0.0, {1.0, 0.1}, 0.75, opt);
  // linear solution: seminorm of the window is that of x1 at exponent alpha, for every nu
  CHECK(flat.seminorm[0] == doctest::Approx(flat.seminorm[1]).epsilon(1e-8));
  CHECK(flat.growth() == doctest::Approx(1.0).epsilon(1e-8));
  opt.constant_kappa = true;
  const auto ck = regularity_sweep(0.1, 1.0, {1.0, 0.1}, 0.75, opt);
  for (std::size_t i = 0; i < 2; ++i) CHECK(ck.seminorm[i] == doctest::Approx(flat.seminorm[i]).epsilon(1e-8));
  CHECK(!flat.alpha_admissible);
  CHECK(regularity_sweep(0.01, 0.0, {1.0}, 0.5, opt).alpha_admissible);
}

TEST_CASE("writers") {
  SimConfig cfg;
  cfg.field = brownian(1.0);
  cfg.n_traj = 200;
  cfg.horizon = 1.0;
  cfg.checkpoints = {0.5, 1.0};
  const auto ens = simulate_ensemble(cfg);
  const auto dir = std::filesystem::temp_directory_path();
  write_moments_csv(quenched_moments(ens, 50), (dir / "superlab_m.csv").string());
  std::ifstream in(dir / "superlab_m.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,mean_x,mean_y,second_moment,variance,ci_lo,ci_hi,reference_2dR2");
  write_sidecar(ens, {0.5, 1.0}, (dir / "superlab_m.json").string());
  CHECK(std::filesystem::file_size(dir / "superlab_m.json") > 0);
  std::filesystem::remove(dir / "superlab_m.csv");
  std::filesystem::remove(dir / "superlab_m.json");
}
