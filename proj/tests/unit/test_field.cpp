#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "superlab/field.hpp"
#include "superlab/rng.hpp"

using namespace superlab;
using namespace superlab::field;

namespace {

FieldParams params(int lo, int hi, std::uint64_t seed = 3) {
  FieldParams p;
  p.gamma = 0.25;
  p.c_star = 1.0;
  p.seed = seed;
  p.scale_min = lo;
  p.scale_max = hi;
  return p;
}

}  // namespace

TEST_CASE("field parameter invariants") {
  FieldParams p = params(-2, 1);
  CHECK_NOTHROW(validate(p));
  p.gamma = 0.5;
  CHECK_THROWS_AS(validate(p), InputError);
  p.gamma = 0.25;
  p.c_star = 1.5;
  CHECK_THROWS_AS(validate(p), InputError);
  p.c_star = 1.0;
  p.scale_min = 2;
  CHECK_THROWS(validate(p));
}

TEST_CASE("mollifier profile support and smoothness") {
  CHECK(MollifierKernel::profile(0.0) == doctest::Approx(1.0));
  CHECK(MollifierKernel::profile(0.5) == 0.0);
  CHECK(MollifierKernel::profile(0.7) == 0.0);
  // radial profile (1 - 2r^2)^3: first derivative in r vanishes at the edge
  const double r0 = std::sqrt(0.5), h = 1e-4;
  const double d = (MollifierKernel::profile((r0 - h) * (r0 - h)) - MollifierKernel::profile(r0 * r0)) / h;
  CHECK(std::abs(d) < 1e-6);
}

TEST_CASE("empty scale range gives zero") {
  const FieldParams p = params(0, 2);
  const auto s = eval_stream_range(p, {0.3, -0.7}, 3, 2);
  CHECK(s.kappa == 0.0);
  CHECK(s.grad[0] == 0.0);
  CHECK(s.grad[1] == 0.0);
}

TEST_CASE("evaluation is bit-identical across threads") {
  const FieldParams p = params(-3, 2);
  const Vec2 x{0.123, -4.56};
  const auto ref = eval_stream(p, x, 2);
  std::vector<StreamSample> out(4);
  std::vector<std::thread> pool;
  for (int i = 0; i < 4; ++i) pool.emplace_back([&, i] { out[i] = eval_stream(p, x, 2); });
  for (auto& t : pool) t.join();
  for (const auto& s : out) {
    CHECK(s.kappa == ref.kappa);
    CHECK(s.grad == ref.grad);
    CHECK(s.hess == ref.hess);
  }
}

TEST_CASE("drift is divergence free") {
  const FieldParams p = params(-1, 1);
  const rng::Stream st(17);
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec2 x{10.0 * st.uniform(2 * i) - 5.0, 10.0 * st.uniform(2 * i + 1) - 5.0};
    const double div = (eval_drift(p, {x[0] + h, x[1]}, 1)[0] - eval_drift(p, {x[0] - h, x[1]}, 1)[0] +
                        eval_drift(p, {x[0], x[1] + h}, 1)[1] - eval_drift(p, {x[0], x[1] - h}, 1)[1]) /
                       (2.0 * h);
    worst = std::max(worst, std::abs(div));
  }
  // the profile is C^{1,1}: stencils straddling a support edge lose one order in h
  CHECK(worst < 1e-5);
}

TEST_CASE("drift is the rotated gradient of the stream function") {
  const FieldParams p = params(-1, 1);
  const Vec2 x{0.4, 0.9};
  const auto s = eval_stream(p, x, 1);
  const Vec2 f = eval_drift(p, x, 1);
  CHECK(f[0] == doctest::Approx(-s.grad[1]));
  CHECK(f[1] == doctest::Approx(s.grad[0]));
  const double h = 1e-5;
  const double dk = (eval_stream(p, {x[0] + h, x[1]}, 1).kappa - eval_stream(p, {x[0] - h, x[1]}, 1).kappa) / (2 * h);
  CHECK(dk == doctest::Approx(s.grad[0]).epsilon(1e-6));
}

TEST_CASE("negated Gaussians flip the drift") {
  FieldParams p = params(-2, 1);
  FieldParams q = p;
  q.negate = true;
  for (Vec2 x : {Vec2{0.1, 0.2}, Vec2{-3.0, 7.5}, Vec2{11.0, -0.4}}) {
    const Vec2 a = eval_drift(p, x, 1), b = eval_drift(q, x, 1);
    CHECK(a[0] == -b[0]);
    CHECK(a[1] == -b[1]);
  }
}

TEST_CASE("single scale obeys the scaling law") {
  const int n = 2;
  FieldParams p = params(n, n);
  for (Vec2 x : {Vec2{0.5, 1.5}, Vec2{-7.0, 3.3}}) {
    const auto s = eval_scale(p, x, n);
    FieldParams p0 = p;
    p0.gamma = 0.0;
    const auto s0 = eval_scale(p0, x, n);
    // same lattice slice, amplitude 3^{gamma n}; the drift carries one extra 3^{-n}
    CHECK(s.kappa == doctest::Approx(pow3(p.gamma * n) * s0.kappa));
    const Vec2 f = drift_of(s), f0 = drift_of(s0);
    CHECK(f[0] == doctest::Approx(pow3(p.gamma * n) * f0[0]));
    CHECK(std::abs(f0[0]) <= 10.0 * pow3(-n));
  }
}

TEST_CASE("single-scale variance matches c_* log 3") {
  const int n = 1, seeds = 10000;
  const Vec2 x{0.37, -0.81};
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < seeds; ++s) {
    FieldParams p = params(n, n, 1000 + s);
    const double v = pow3(-p.gamma * n) * eval_scale(p, x, n).kappa;
    sum += v * v;
    sum2 += v * v * v * v;
  }
  const double mean = sum / seeds, se = std::sqrt((sum2 / seeds - mean * mean) / seeds);
  CHECK(std::abs(mean - kLog3) <= 3.0 * se);
}

TEST_CASE("coefficient audit lists only nearby sites") {
  const FieldParams p = params(0, 1);
  const auto sites = coefficient_sites(p, {0.2, 0.2}, 1);
  CHECK(!sites.empty());
  CHECK(sites.size() <= 9);
  for (const auto& s : sites) CHECK(s.scale == 1);
}

TEST_CASE("moment report") {
  FieldParams p = params(-2, 0);
  MomentOptions opt;
  opt.cube_level = 0;
  opt.increment_from = -1;
  opt.bootstrap_resamples = 200;
  const auto r = field_moment_report(p, 0, 200, 5, opt);
  double ref = 0.0;
  for (int n = -2; n <= 0; ++n) ref += kLog3 * pow3(2.0 * p.gamma * n);
  CHECK(std::abs(r.l2_second_moment.estimate - ref) <= 4.0 * r.l2_second_moment.se);
  CHECK(r.increment_reference == doctest::Approx(kLog3));
  for (std::size_t i = 1; i < r.tail_prob.size(); ++i) CHECK(r.tail_prob[i] <= r.tail_prob[i - 1]);

  p.c_star = 0.0;
  const auto z = field_moment_report(p, 0, 100, 3, opt);
  CHECK(z.point_second_moment.estimate == 0.0);
  CHECK(z.l2_second_moment.estimate == 0.0);
}
