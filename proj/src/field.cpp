#include "superlab/field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "superlab/rng.hpp"

namespace superlab::field {

void validate(const FieldParams& p) {
  if (!(p.gamma > 0.0 && p.gamma <= 0.25)) throw InputError("gamma must lie in (0, 1/4]");
  if (!(p.c_star >= 0.0 && p.c_star <= 1.0)) throw InputError("c_star must lie in [0, 1]");
  if (!(p.nu > 0.0) || !std::isfinite(p.nu)) throw InputError("nu must be positive");
  if (p.scale_min > p.scale_max) throw InputError("scale_min must not exceed scale_max");
}

double MollifierKernel::profile(double r2) {
  if (r2 >= kRadius2) return 0.0;
  const double t = 1.0 - r2 / kRadius2;
  return t * t * t;
}

double MollifierKernel::integral_sq() { return M_PI * kRadius2 / 7.0; }

double MollifierKernel::sigma(double c_star) { return std::sqrt(c_star * kLog3 / integral_sq()); }

double MollifierKernel::lattice_sum_sq(Vec2 y) {
  double s = 0.0;
  for (long long a = static_cast<long long>(std::floor(y[0])) - 1; a <= static_cast<long long>(std::floor(y[0])) + 2; ++a)
    for (long long b = static_cast<long long>(std::floor(y[1])) - 1; b <= static_cast<long long>(std::floor(y[1])) + 2; ++b) {
      const double dx = y[0] - static_cast<double>(a), dy = y[1] - static_cast<double>(b);
      const double v = profile(dx * dx + dy * dy);
      s += v * v;
    }
  return s;
}

double lattice_gaussian(std::uint64_t seed, int n, long long z1, long long z2) {
  const auto sn = rng::as_word(n);
  return rng::box_muller(rng::hash({seed, sn, rng::as_word(z1), rng::as_word(z2), 0}),
                         rng::hash({seed, sn, rng::as_word(z1), rng::as_word(z2), 1}));
}

Vec2 lattice_shift(std::uint64_t seed, int n) {
  const auto sn = rng::as_word(n);
  return {rng::to_unit(rng::hash({seed, sn, 0x5ULL, 0})), rng::to_unit(rng::hash({seed, sn, 0x5ULL, 1}))};
}

namespace {

constexpr double kRadius = 0.70710678118654752440;

template <class F>
void for_sites(const FieldParams& p, Vec2 x, int n, F&& visit) {
  const double scale = pow3(-static_cast<double>(n));
  const Vec2 u = lattice_shift(p.seed, n);
  const double y0 = x[0] * scale - u[0];
  const double y1 = x[1] * scale - u[1];
  const auto a0 = static_cast<long long>(std::ceil(y0 - kRadius));
  const auto a1 = static_cast<long long>(std::floor(y0 + kRadius));
  const auto b0 = static_cast<long long>(std::ceil(y1 - kRadius));
  const auto b1 = static_cast<long long>(std::floor(y1 + kRadius));
  for (long long a = a0; a <= a1; ++a)
    for (long long b = b0; b <= b1; ++b) {
      const double d0 = y0 - static_cast<double>(a);
      const double d1 = y1 - static_cast<double>(b);
      const double r2 = d0 * d0 + d1 * d1;
      if (r2 < MollifierKernel::kRadius2) visit(a, b, d0, d1, r2);
    }
}

}  // namespace

StreamSample eval_scale(const FieldParams& p, Vec2 x, int n) {
  StreamSample out;
  if (p.c_star == 0.0) return out;
  double k = 0.0, g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
  for_sites(p, x, n, [&](long long a, long long b, double d0, double d1, double r2) {
    double g = lattice_gaussian(p.seed, n, a, b);
    if (p.negate) g = -g;
    const double t = 1.0 - 2.0 * r2;
    const double t2 = t * t;
    k += g * t2 * t;
    g0 += g * (-12.0 * t2 * d0);
    g1 += g * (-12.0 * t2 * d1);
    h00 += g * (-12.0 * t2 + 96.0 * t * d0 * d0);
    h01 += g * (96.0 * t * d0 * d1);
    h11 += g * (-12.0 * t2 + 96.0 * t * d1 * d1);
  });
  const double sigma = MollifierKernel::sigma(p.c_star);
  const double amp = sigma * pow3(p.gamma * n);
  const double c1 = amp * pow3(-static_cast<double>(n));
  const double c2 = amp * pow3(-2.0 * n);
  out.kappa = amp * k;
  out.grad = {c1 * g0, c1 * g1};
  out.hess = {c2 * h00, c2 * h01, c2 * h01, c2 * h11};
  return out;
}

StreamSample eval_stream_range(const FieldParams& p, Vec2 x, int lo, int hi) {
  if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw InputError("non-finite evaluation point");
  StreamSample out;
  for (int n = lo; n <= hi; ++n) {
    const StreamSample s = eval_scale(p, x, n);
    out.kappa += s.kappa;
    for (int i = 0; i < 2; ++i) out.grad[i] += s.grad[i];
    for (int i = 0; i < 4; ++i) out.hess[i] += s.hess[i];
  }
  return out;
}

StreamSample eval_stream(const FieldParams& p, Vec2 x, int m) {
  if (m < p.scale_min || m > p.scale_max) throw ScaleRangeError("scale index outside [scale_min, scale_max]");
  return eval_stream_range(p, x, p.scale_min, m);
}

Vec2 drift_of(const StreamSample& s) { return {-s.grad[1], s.grad[0]}; }

Vec2 eval_drift(const FieldParams& p, Vec2 x, int m) { return drift_of(eval_stream(p, x, m)); }

std::vector<LatticeSite> coefficient_sites(const FieldParams& p, Vec2 x, int n) {
  std::vector<LatticeSite> sites;
  for_sites(p, x, n, [&](long long a, long long b, double, double, double) { sites.push_back({n, a, b}); });
  return sites;
}

double regularity_bundle(const FieldParams& p, int n, int samples_per_side) {
  double kmax = 0.0, gmax = 0.0, hmax = 0.0;
  const double scale = pow3(static_cast<double>(n));
  const double norm = pow3(-p.gamma * n);
  for (int i = 0; i < samples_per_side; ++i)
    for (int j = 0; j < samples_per_side; ++j) {
      const double y0 = -0.5 + (i + 0.5) / samples_per_side;
      const double y1 = -0.5 + (j + 0.5) / samples_per_side;
      const StreamSample s = eval_scale(p, {y0 * scale, y1 * scale}, n);
      const double g0 = s.grad[0] * scale * norm, g1 = s.grad[1] * scale * norm;
      const double a = s.hess[0] * scale * scale * norm, b = s.hess[1] * scale * scale * norm;
      const double c = s.hess[3] * scale * scale * norm;
      const double hn = 0.5 * std::abs(a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
      kmax = std::max(kmax, std::abs(s.kappa * norm));
      gmax = std::max(gmax, std::hypot(g0, g1));
      hmax = std::max(hmax, hn);
    }
  return kmax + std::sqrt(2.0) * gmax + 2.0 * hmax;
}

MomentReport field_moment_report(const FieldParams& p, int m, int n_seeds, int n_points,
                                 const MomentOptions& opt) {
  validate(p);
  if (n_seeds < 100) throw InputError("field_moment_report needs at least 100 seeds");
  if (n_points < 1) throw InputError("n_points must be positive");
  if (m < p.scale_min || m > p.scale_max) throw ScaleRangeError("scale index outside [scale_min, scale_max]");
  MomentReport rep;
  rep.m = m;
  rep.n_seeds = n_seeds;
  rep.cube_level = opt.cube_level;
  rep.increment_from = opt.increment_from < p.scale_min ? p.scale_min - 1 : opt.increment_from;
  const int lo = rep.increment_from + 1;
  for (int k = lo; k <= m; ++k) rep.increment_reference += p.c_star * kLog3 * pow3(2.0 * p.gamma * k);

  std::vector<double> point(n_seeds), l2(n_seeds), inc(n_seeds), bundle(n_seeds);
  const double side = pow3(static_cast<double>(opt.cube_level));
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n_seeds; ++s) {
    FieldParams q = p;
    q.seed = rng::hash({p.seed, static_cast<std::uint64_t>(s), 0xf1e1dULL});
    const double k0 = eval_stream(q, {0.0, 0.0}, m).kappa;
    point[s] = k0 * k0;
    double a = 0.0, b = 0.0;
    for (int i = 0; i < n_points; ++i)
      for (int j = 0; j < n_points; ++j) {
        const Vec2 x{side * (-0.5 + (i + 0.5) / n_points), side * (-0.5 + (j + 0.5) / n_points)};
        const double full = eval_stream(q, x, m).kappa;
        const double part = eval_stream_range(q, x, lo, m).kappa;
        a += full * full;
        b += part * part;
      }
    l2[s] = a / (n_points * n_points);
    inc[s] = b / (n_points * n_points);
    bundle[s] = regularity_bundle(q, p.scale_min, opt.bundle_samples);
  }
  rep.point_second_moment = stats::bootstrap_mean(point, opt.bootstrap_resamples, p.seed ^ 0x11);
  rep.l2_second_moment = stats::bootstrap_mean(l2, opt.bootstrap_resamples, p.seed ^ 0x12);
  rep.increment_second_moment = stats::bootstrap_mean(inc, opt.bootstrap_resamples, p.seed ^ 0x13);

  std::vector<double> sorted = bundle;
  std::sort(sorted.begin(), sorted.end());
  auto tail = [&](double t) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
  };
  for (double t : {1.0, 2.0, 3.0}) {
    rep.tail_t.push_back(t);
    rep.tail_prob.push_back(tail(t));
  }
  double num = 0.0, den = 0.0;
  for (double q : {0.5, 0.75, 0.9, 0.95, 0.99}) {
    const double t = sorted[static_cast<std::size_t>(q * (sorted.size() - 1))];
    const double pr = tail(t);
    if (t >= 1.0 && pr > 0.0 && pr < 1.0) {
      num += -t * t * std::log(pr);
      den += t * t * t * t;
    }
  }
  rep.c_j2 = num > 0.0 ? den / num : std::numeric_limits<double>::infinity();
  return rep;
}

void dump_csv(const FieldParams& p, int m, Vec2 center, double side, int n, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "x,y,kappa,f1,f2\n" << std::setprecision(17);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 x{center[0] + side * (-0.5 + (i + 0.5) / n), center[1] + side * (-0.5 + (j + 0.5) / n)};
      const StreamSample s = eval_stream(p, x, m);
      const Vec2 f = drift_of(s);
      out << x[0] << ',' << x[1] << ',' << s.kappa << ',' << f[0] << ',' << f[1] << '\n';
    }
}

}  // namespace superlab::field
