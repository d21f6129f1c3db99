#include "superlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "superlab/rg.hpp"
#include "superlab/rng.hpp"

namespace superlab::sde {

namespace {

constexpr double kRadius = 0.70710678118654752440;
constexpr int kMaxTableWidth = 2048;
constexpr double kInf = std::numeric_limits<double>::infinity();

template <class F>
void parallel_for(int count, bool parallel, F&& body) {
  std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic, 16) if (parallel)
  for (int i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(superlab_sde_error)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

int largest_level(const SimConfig& cfg) {
  if (!cfg.exit_levels.empty()) return cfg.exit_levels.back();
  return cfg.field.scale_max + 1;
}

}  // namespace

QuenchedDrift::QuenchedDrift(const field::FieldParams& p, Vec2 center, double half_width) : p_(p) {
  field::validate(p);
  if (p.c_star == 0.0) return;
  const double sigma = field::MollifierKernel::sigma(p.c_star);
  for (int n = p.scale_min; n <= p.scale_max; ++n) {
    Scale s;
    s.n = n;
    s.inv_side = pow3(-static_cast<double>(n));
    s.shift = field::lattice_shift(p.seed, n);
    const double amp = sigma * pow3(p.gamma * n);
    s.c1 = amp * pow3(-static_cast<double>(n));
    const double lo0 = (center[0] - half_width) * s.inv_side - s.shift[0] - 1.0;
    const double lo1 = (center[1] - half_width) * s.inv_side - s.shift[1] - 1.0;
    const double span = 2.0 * half_width * s.inv_side + 3.0;
    s.w = static_cast<int>(std::min<double>(kMaxTableWidth, std::ceil(span)));
    s.a0 = static_cast<long long>(std::floor(lo0));
    s.b0 = static_cast<long long>(std::floor(lo1));
    if (static_cast<double>(s.w) < span) {
      const double mid = 0.5 * static_cast<double>(kMaxTableWidth);
      s.a0 = static_cast<long long>(std::floor(center[0] * s.inv_side - s.shift[0] - mid));
      s.b0 = static_cast<long long>(std::floor(center[1] * s.inv_side - s.shift[1] - mid));
    }
    s.g.resize(static_cast<std::size_t>(s.w) * s.w);
    for (int j = 0; j < s.w; ++j)
      for (int i = 0; i < s.w; ++i) {
        double g = field::lattice_gaussian(p.seed, n, s.a0 + i, s.b0 + j);
        if (p.negate) g = -g;
        s.g[static_cast<std::size_t>(j) * s.w + i] = g;
      }
    scales_.push_back(std::move(s));
  }
}

double QuenchedDrift::gaussian(const Scale& s, long long a, long long b) const {
  const long long i = a - s.a0, j = b - s.b0;
  if (i >= 0 && j >= 0 && i < s.w && j < s.w) return s.g[static_cast<std::size_t>(j * s.w + i)];
  const double g = field::lattice_gaussian(p_.seed, s.n, a, b);
  return p_.negate ? -g : g;
}

Vec2 QuenchedDrift::operator()(Vec2 x) const {
  double grad0 = 0.0, grad1 = 0.0;
  for (const Scale& s : scales_) {
    const double y0 = x[0] * s.inv_side - s.shift[0];
    const double y1 = x[1] * s.inv_side - s.shift[1];
    const auto a0 = static_cast<long long>(std::ceil(y0 - kRadius));
    const auto a1 = static_cast<long long>(std::floor(y0 + kRadius));
    const auto b0 = static_cast<long long>(std::ceil(y1 - kRadius));
    const auto b1 = static_cast<long long>(std::floor(y1 + kRadius));
    double g0 = 0.0, g1 = 0.0;
    for (long long a = a0; a <= a1; ++a)
      for (long long b = b0; b <= b1; ++b) {
        const double d0 = y0 - static_cast<double>(a);
        const double d1 = y1 - static_cast<double>(b);
        const double r2 = d0 * d0 + d1 * d1;
        if (r2 < field::MollifierKernel::kRadius2) {
          const double g = gaussian(s, a, b);
          const double t = 1.0 - 2.0 * r2;
          const double t2 = t * t;
          g0 += g * (-12.0 * t2 * d0);
          g1 += g * (-12.0 * t2 * d1);
        }
      }
    grad0 += s.c1 * g0;
    grad1 += s.c1 * g1;
  }
  return {-grad1, grad0};
}

double estimate_sup_drift(const SimConfig& cfg) {
  if (cfg.constant_drift) return std::hypot((*cfg.constant_drift)[0], (*cfg.constant_drift)[1]);
  if (cfg.field.c_star == 0.0) return 0.0;
  const int k = cfg.sup_samples_per_side;
  if (k < 2) throw InputError("sup_samples_per_side must be >= 2");
  const double side = pow3(largest_level(cfg));
  const QuenchedDrift f(cfg.field, cfg.x0, 0.5 * side);
  double best = 0.0;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i) {
      const Vec2 x{cfg.x0[0] + side * ((i + 0.5) / k - 0.5), cfg.x0[1] + side * ((j + 0.5) / k - 0.5)};
      const Vec2 v = f(x);
      best = std::max(best, std::hypot(v[0], v[1]));
    }
  return best;
}

double resolve_dt(const SimConfig& cfg, double sup_drift) {
  const double limit = pow3(cfg.field.scale_min) / 10.0;
  if (cfg.dt > 0.0) {
    if (cfg.dt * sup_drift > limit)
      throw InputError("time step violates the drift rule: dt * sup|f| = " + std::to_string(cfg.dt * sup_drift) +
                       " > 3^{n_min}/10 = " + std::to_string(limit));
    return cfg.dt;
  }
  if (sup_drift > 0.0) return std::min(cfg.horizon, limit / sup_drift);
  double dt = cfg.horizon / 1000.0;
  if (!cfg.exit_levels.empty()) dt = std::min(dt, pow3(2.0 * cfg.exit_levels.front()) / (1e4 * cfg.field.nu));
  return dt;
}

void validate(const SimConfig& cfg) {
  field::validate(cfg.field);
  if (!(cfg.field.nu > 0.0)) throw InputError("simulation needs nu > 0");
  if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon)) throw InputError("horizon must be positive and finite");
  if (cfg.dt < 0.0 || !std::isfinite(cfg.dt)) throw InputError("dt must be nonnegative and finite");
  if (cfg.n_traj < 1) throw InputError("n_traj must be >= 1");
  if (!std::isfinite(cfg.x0[0]) || !std::isfinite(cfg.x0[1])) throw InputError("non-finite start point");
  for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
    const double t = cfg.checkpoints[i];
    if (!(t > 0.0 && t <= cfg.horizon)) throw InputError("checkpoints must lie in (0, horizon]");
    if (i > 0 && !(t > cfg.checkpoints[i - 1])) throw InputError("checkpoints must be strictly increasing");
  }
  for (std::size_t i = 1; i < cfg.exit_levels.size(); ++i)
    if (cfg.exit_levels[i] <= cfg.exit_levels[i - 1]) throw InputError("exit levels must be strictly increasing");
  if (cfg.constant_drift && (!std::isfinite((*cfg.constant_drift)[0]) || !std::isfinite((*cfg.constant_drift)[1])))
    throw InputError("non-finite constant drift");
}

TrajectoryEnsemble simulate_ensemble(const SimConfig& cfg) {
  validate(cfg);
  TrajectoryEnsemble ens;
  ens.config = cfg;
  ens.sup_drift = estimate_sup_drift(cfg);
  ens.dt = resolve_dt(cfg, ens.sup_drift);
  const std::size_t nt = static_cast<std::size_t>(cfg.n_traj), ncp = cfg.checkpoints.size(), nl = cfg.exit_levels.size();
  ens.positions.assign(nt * ncp * 2, 0.0);
  ens.exit_times.assign(nt * nl, kInf);
  ens.valid.assign(nt, 1);

  std::vector<double> half(nl);
  for (std::size_t l = 0; l < nl; ++l) half[l] = 0.5 * pow3(cfg.exit_levels[l]);
  const double table_half = nl ? 1.5 * half.back() : 1.5 * pow3(cfg.field.scale_max);
  std::optional<QuenchedDrift> drift;
  if (!cfg.constant_drift && cfg.field.c_star > 0.0) drift.emplace(cfg.field, cfg.x0, table_half);
  const double nu = cfg.field.nu;
  const double dt = ens.dt;

  parallel_for(cfg.n_traj, cfg.parallel, [&](int traj) {
    const auto ti = static_cast<std::size_t>(traj);
    const rng::Stream noise(rng::hash({cfg.bm_seed_base, static_cast<std::uint64_t>(traj), 0xb41ULL}));
    const rng::Stream bridge(rng::hash({cfg.bm_seed_base, static_cast<std::uint64_t>(traj), 0xb1dULL}));
    double* pos = ens.positions.data() + ti * ncp * 2;
    double* exits = ens.exit_times.data() + ti * nl;
    double x0 = cfg.x0[0], x1 = cfg.x0[1];
    double t = 0.0;
    std::size_t cp = 0, open = nl;
    for (std::uint64_t k = 0;; ++k) {
      double h = dt;
      bool hit = false;
      if (cp < ncp && t + h >= cfg.checkpoints[cp] - 1e-9 * dt) {
        h = cfg.checkpoints[cp] - t;
        hit = true;
      }
      if (t + h > cfg.horizon) h = cfg.horizon - t;
      Vec2 f{0.0, 0.0};
      if (cfg.constant_drift) f = *cfg.constant_drift;
      else if (drift) f = (*drift)({x0, x1});
      double g0, g1;
      rng::box_muller_pair(noise.bits(2 * k), noise.bits(2 * k + 1), g0, g1);
      const double sd = std::sqrt(2.0 * nu * h);
      const double y0 = x0 + f[0] * h + sd * g0;
      const double y1 = x1 + f[1] * h + sd * g1;
      if (!std::isfinite(y0) || !std::isfinite(y1)) {
        ens.valid[ti] = 0;
        for (std::size_t c = 0; c < ncp; ++c) pos[2 * c] = pos[2 * c + 1] = std::nan("");
        return;
      }
      if (open > 0) {
        const double r0 = x0 - cfg.x0[0], r1 = x1 - cfg.x0[1];
        const double s0 = y0 - cfg.x0[0], s1 = y1 - cfg.x0[1];
        for (std::size_t l = 0; l < nl; ++l) {
          if (exits[l] < kInf) continue;
          const double L = half[l];
          if (std::abs(s0) > L || std::abs(s1) > L) {
            double theta = 1.0;
            if (s0 > L) theta = std::min(theta, (L - r0) / (s0 - r0));
            if (s0 < -L) theta = std::min(theta, (-L - r0) / (s0 - r0));
            if (s1 > L) theta = std::min(theta, (L - r1) / (s1 - r1));
            if (s1 < -L) theta = std::min(theta, (-L - r1) / (s1 - r1));
            exits[l] = t + std::clamp(theta, 0.0, 1.0) * h;
          } else if (cfg.bridge_correction) {
            const double var = nu * h;
            const double reach = 6.0 * std::sqrt(2.0 * var);
            double stay = 1.0;
            const double da[4] = {L - r0, L + r0, L - r1, L + r1};
            const double db[4] = {L - s0, L + s0, L - s1, L + s1};
            for (int side = 0; side < 4; ++side)
              if (da[side] < reach && db[side] < reach) stay *= 1.0 - std::exp(-da[side] * db[side] / var);
            if (stay < 1.0 && bridge.uniform(k * nl + l) < 1.0 - stay) exits[l] = t + 0.5 * h;
          }
        }
        for (std::size_t l = nl; l-- > 1;) exits[l - 1] = std::min(exits[l - 1], exits[l]);
        open = static_cast<std::size_t>(std::count(exits, exits + nl, kInf));
      }
      x0 = y0;
      x1 = y1;
      t += h;
      if (hit) {
        pos[2 * cp] = x0;
        pos[2 * cp + 1] = x1;
        ++cp;
      }
      if (t >= cfg.horizon * (1.0 - 1e-15) || (cp == ncp && open == 0)) break;
    }
  });
  ens.n_invalid = static_cast<int>(std::count(ens.valid.begin(), ens.valid.end(), 0));
  return ens;
}

MomentReport quenched_moments(const TrajectoryEnsemble& ens, int resamples, std::uint64_t seed) {
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < ens.valid.size(); ++i)
    if (ens.valid[i]) ok.push_back(i);
  if (ok.empty()) throw InputError("empty ensemble");
  if (ok.size() < 100) throw InputError("quenched moments need at least 100 valid trajectories");
  MomentReport r;
  r.n_traj = static_cast<int>(ok.size());
  const std::size_t n = ok.size();
  for (std::size_t c = 0; c < ens.n_checkpoints(); ++c) {
    const double t = ens.config.checkpoints[c];
    std::vector<double> px(n), py(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 x{ens.position(ok[i], c)[0] - ens.config.x0[0], ens.position(ok[i], c)[1] - ens.config.x0[1]};
      px[i] = x[0];
      py[i] = x[1];
      q[i] = x[0] * x[0] + x[1] * x[1];
    }
    const auto var_of = [&](const std::vector<std::size_t>& idx) {
      double mx = 0.0, my = 0.0, s2 = 0.0;
      for (std::size_t i : idx) {
        mx += px[i];
        my += py[i];
        s2 += q[i];
      }
      const double m = static_cast<double>(idx.size());
      mx /= m;
      my /= m;
      return s2 / m - (mx * mx + my * my);
    };
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    double mx = stats::mean(px), my = stats::mean(py), s2 = stats::mean(q);
    double m4 = 0.0, m6 = 0.0;
    for (double v : q) {
      m4 += v * v;
      m6 += v * v * v;
    }
    m4 /= static_cast<double>(n);
    m6 /= static_cast<double>(n);
    const std::uint64_t bs = rng::hash({seed, static_cast<std::uint64_t>(c)});
    r.times.push_back(t);
    r.mean_x.push_back(mx);
    r.mean_y.push_back(my);
    r.second_moment.push_back(s2);
    r.variance.push_back(s2 - (mx * mx + my * my));
    r.variance_ci.push_back(stats::bootstrap(n, var_of, resamples, bs));
    r.second_moment_ci.push_back(stats::bootstrap_mean(q, resamples, bs));
    r.reference.push_back(reference_second_moment(ens.config.field, t));
    r.moment4_root.push_back(std::pow(m4, 0.25));
    r.moment6_root.push_back(std::cbrt(std::sqrt(m6)));
  }
  return r;
}

stats::LineFit fit_exponent(const std::vector<double>& times, const std::vector<double>& variances) {
  if (times.size() != variances.size()) throw InputError("times and variances differ in length");
  if (times.size() < 5) throw InputError("exponent fit needs at least 5 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0)) throw InputError("nonpositive time in exponent fit");
    if (!(variances[i] > 0.0)) throw InputError("nonpositive variance in exponent fit");
    lx.push_back(std::log(times[i]));
    ly.push_back(std::log(variances[i]));
  }
  const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
  if (*hi / *lo < 100.0 * (1.0 - 1e-12)) throw InputError("exponent fit needs at least two decades of time");
  return stats::ols(lx, ly);
}

double reference_second_moment(const field::FieldParams& p, double t) {
  if (t < 0.0) throw InputError("negative time");
  if (t == 0.0) return 0.0;
  if (p.c_star == 0.0) return 4.0 * p.nu * t;
  const double R = rg::length_time_maps(rg::from_field(p)).R(t);
  return 4.0 * R * R;
}

double time_for_length(const field::FieldParams& p, double r) {
  if (!(r > 0.0)) throw InputError("length must be positive");
  const auto maps = rg::length_time_maps(rg::from_field(p));
  double lo = 1e-300, hi = 1.0;
  while (maps.R(hi) < r) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    (maps.R(mid) < r ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

FitWindow superdiffusive_window(const field::FieldParams& p, int confinement_level) {
  const auto c = rg::crossover_scales(rg::from_field(p));
  FitWindow w;
  w.t_lo = 10.0 * c.t_star;
  w.t_hi = time_for_length(p, pow3(confinement_level) / 3.0);
  return w;
}

grid::GridFunction expected_exit_time_via_pde(const solver::CoefficientGrid& c, const solver::SolveOptions& opt) {
  c.validate();
  const double cx = c.cube.center[0];
  const auto g1 = grid::sample(c.cube, c.r, [cx](Vec2 x) { return x[0] - cx; });
  return solver::solve_dirichlet(c, &g1, nullptr, [](Vec2) { return 0.0; }, opt).u;
}

double center_value(const grid::GridFunction& w) {
  if (w.n() % 2 == 0) throw InputError("center value needs an odd grid");
  return w(w.n() / 2, w.n() / 2);
}

ExitCrosscheck exit_time_crosscheck(const TrajectoryEnsemble& ens, std::size_t level, double pde_value) {
  if (level >= ens.n_levels()) throw InputError("level index outside the monitored set");
  ExitCrosscheck r;
  r.pde_value = pde_value;
  std::vector<double> tau;
  std::size_t exited = 0;
  for (std::size_t i = 0; i < ens.valid.size(); ++i) {
    if (!ens.valid[i]) continue;
    const double e = ens.exit_time(i, level);
    if (e < kInf) {
      ++exited;
      tau.push_back(e);
    } else {
      tau.push_back(ens.config.horizon);
    }
  }
  if (tau.empty()) throw InputError("empty ensemble");
  r.exited_fraction = static_cast<double>(exited) / static_cast<double>(tau.size());
  r.inconclusive = r.exited_fraction < 0.25;
  r.mc_mean = stats::mean(tau);
  r.mc_se = tau.size() > 1 ? std::sqrt(stats::sample_variance(tau) / static_cast<double>(tau.size())) : 0.0;
  r.z = r.mc_se > 0.0 ? (r.mc_mean - r.pde_value) / r.mc_se : 0.0;
  return r;
}

ExitCrosscheck exit_time_crosscheck(const solver::CoefficientGrid& c, const SimConfig& cfg,
                                    const solver::SolveOptions& opt) {
  if (cfg.exit_levels.empty() || cfg.exit_levels.front() != c.cube.level)
    throw InputError("first monitored level must be the cube of the coefficient grid");
  if (cfg.x0 != c.cube.center) throw InputError("trajectories must start at the cube center");
  const double w = center_value(expected_exit_time_via_pde(c, opt));
  return exit_time_crosscheck(simulate_ensemble(cfg), 0, w);
}

double tail_functional(const field::FieldParams& p, int level, double t) {
  if (!(t > 0.0)) throw InputError("tail functional needs t > 0");
  double best = kInf;
  if (p.nu > 0.0) best = pow3(2.0 * level) / (p.nu * t);
  if (p.c_star > 0.0)
    best = std::min(best, std::sqrt(p.gamma / p.c_star) *
                              std::pow(pow3(level * (2.0 - p.gamma)) / t, 1.0 / (1.0 - p.gamma)));
  return best;
}

TailReport tail_shape_check(const TrajectoryEnsemble& ens, std::size_t level_index, const std::vector<double>& t_grid) {
  if (level_index >= ens.n_levels()) throw InputError("level index outside the monitored set");
  if (t_grid.size() < 3) throw InputError("tail check needs at least 3 times");
  TailReport r;
  r.level = ens.config.exit_levels[level_index];
  std::vector<double> tau;
  for (std::size_t i = 0; i < ens.valid.size(); ++i)
    if (ens.valid[i]) tau.push_back(ens.exit_time(i, level_index));
  std::sort(tau.begin(), tau.end());
  const double n = static_cast<double>(tau.size());
  std::vector<double> counts;
  for (double t : t_grid) {
    const auto c = static_cast<double>(std::upper_bound(tau.begin(), tau.end(), t) - tau.begin());
    r.t.push_back(t);
    counts.push_back(c);
    r.exit_prob.push_back(c / n);
    r.functional.push_back(tail_functional(ens.config.field, r.level, t));
  }
  r.monotone = std::is_sorted(r.exit_prob.begin(), r.exit_prob.end());
  double lo = kInf, hi = 0.0;
  for (std::size_t i = 0; i < r.t.size(); ++i)
    if (counts[i] >= 10.0 && r.exit_prob[i] <= 0.5) {
      lo = std::min(lo, r.t[i]);
      hi = std::max(hi, r.t[i]);
    }
  if (!(hi > 0.0)) throw InputError("insufficient exit events for the tail check");
  if (hi / lo > 10.0) {
    const double mid = std::sqrt(lo * hi);
    lo = mid / std::sqrt(10.0);
    hi = mid * std::sqrt(10.0);
  }
  r.t_lo = lo;
  r.t_hi = hi;
  std::vector<double> xs, ys;
  r.c_dominance = kInf;
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    if (r.t[i] < lo * (1 - 1e-12) || r.t[i] > hi * (1 + 1e-12) || counts[i] < 1.0) continue;
    xs.push_back(r.functional[i]);
    ys.push_back(std::log(r.exit_prob[i]));
    r.c_dominance = std::min(r.c_dominance, -ys.back() / xs.back());
  }
  r.points_in_decade = static_cast<int>(xs.size());
  if (xs.size() >= 3) {
    const auto fit = stats::ols(xs, ys);
    r.c_fit = -fit.slope;
    r.c_fit_se = fit.slope_se;
  }
  if (!std::isfinite(r.c_dominance)) r.c_dominance = 0.0;
  return r;
}

double RegularityReport::growth() const {
  if (seminorm.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(seminorm.begin(), seminorm.end());
  return *hi / *lo;
}

RegularityReport regularity_sweep(double gamma, double c_star, const std::vector<double>& nu_list, double alpha,
                                  const RegularityOptions& opt) {
  if (nu_list.empty()) throw InputError("regularity sweep needs at least one nu");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in (0, 1]");
  RegularityReport rep;
  rep.alpha = alpha;
  rep.alpha_admissible = alpha <= 1.0 - 3.0 * std::sqrt(gamma);
  const grid::TriadicCube cube{opt.cube_level, {0.0, 0.0}};
  const Vec2 e = opt.direction;
  field::FieldParams fp;
  fp.gamma = gamma;
  fp.c_star = c_star;
  fp.seed = opt.seed;
  fp.scale_max = opt.cube_level;
  fp.scale_min = opt.cube_level - opt.depth;
  const double unresolved = c_star * rg::k_gamma(gamma) * pow3(2.0 * gamma * (fp.scale_min - 1));
  for (double nu : nu_list) {
    fp.nu = nu;
    auto c = solver::field_coefficients(fp, cube, opt.resolution_exp, opt.cube_level);
    if (opt.subgrid_closure) c.nu = std::sqrt(nu * nu + unresolved);
    if (opt.constant_kappa) {
      double s = 0.0;
      for (double v : c.kappa) s += v;
      std::fill(c.kappa.begin(), c.kappa.end(), s / static_cast<double>(c.kappa.size()));
    }
    const auto u = solver::solve_dirichlet(c, nullptr, nullptr, [e](Vec2 x) { return e[0] * x[0] + e[1] * x[1]; },
                                           opt.solve).u;
    const int n = u.n(), i0 = n / 4, i1 = n - n / 4;
    rep.nu.push_back(nu);
    rep.nu_effective.push_back(c.nu);
    rep.seminorm.push_back(grid::holder_seminorm_window(u, alpha, i0, i1, i0, i1));
  }
  return rep;
}

void write_moments_csv(const MomentReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << std::setprecision(12);
  os << "t,mean_x,mean_y,second_moment,variance,ci_lo,ci_hi,reference_2dR2\n";
  for (std::size_t i = 0; i < r.times.size(); ++i)
    os << r.times[i] << ',' << r.mean_x[i] << ',' << r.mean_y[i] << ',' << r.second_moment[i] << ',' << r.variance[i]
       << ',' << r.variance_ci[i].lo << ',' << r.variance_ci[i].hi << ',' << r.reference[i] << '\n';
}

void write_exit_csv(const std::vector<TailReport>& tails, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << std::setprecision(12);
  os << "level,t,empirical_survival,exit_prob,functional\n";
  for (const auto& r : tails)
    for (std::size_t i = 0; i < r.t.size(); ++i)
      os << r.level << ',' << r.t[i] << ',' << 1.0 - r.exit_prob[i] << ',' << r.exit_prob[i] << ','
         << r.functional[i] << '\n';
}

void write_sidecar(const TrajectoryEnsemble& ens, const FitWindow& window, const std::string& path) {
  const auto& c = ens.config;
  nlohmann::ordered_json j;
  j["field_seed"] = c.field.seed;
  j["bm_seed_base"] = c.bm_seed_base;
  j["params"] = {{"gamma", c.field.gamma}, {"c_star", c.field.c_star}, {"nu", c.field.nu},
                 {"scale_min", c.field.scale_min}, {"scale_max", c.field.scale_max}};
  j["x0"] = {c.x0[0], c.x0[1]};
  j["n_traj"] = c.n_traj;
  j["horizon"] = c.horizon;
  j["dt"] = ens.dt;
  j["sup_drift"] = ens.sup_drift;
  j["exit_levels"] = c.exit_levels;
  j["bridge_correction"] = c.bridge_correction;
  j["n_invalid"] = ens.n_invalid;
  j["window"] = {{"t_lo", window.t_lo}, {"t_hi", window.t_hi}};
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

}  // namespace superlab::sde
