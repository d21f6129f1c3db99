#include "superlab/rg.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>

#include "superlab/rng.hpp"
#include "superlab/solver.hpp"

namespace superlab::rg {

using coarsegrain::Mat2d;
using coarsegrain::Mat4d;

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 0.5)) throw InputError("gamma must lie in (0, 1/2]");
}

void check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string(what) + " must be positive and finite");
}

long floor_or_clamp(double v) {
  if (v >= static_cast<double>(std::numeric_limits<long>::max())) return std::numeric_limits<long>::max();
  if (v <= static_cast<double>(std::numeric_limits<long>::min())) return std::numeric_limits<long>::min();
  return static_cast<long>(std::floor(v));
}

// (2 gamma)^{-1} log3(nu^2 gamma^power / (2 log3 c_*))
long crossover_floor(const RGParams& p, int power) {
  if (p.c_star == 0.0) return std::numeric_limits<long>::max();
  if (p.nu == 0.0) return std::numeric_limits<long>::min();
  const double arg = p.nu * p.nu * std::pow(p.gamma, power) / (2.0 * kLog3 * p.c_star);
  return floor_or_clamp(std::log(arg) / kLog3 / (2.0 * p.gamma));
}

template <class F>
void parallel_for(int count, bool parallel, F&& body) {
  std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(superlab_rg_error)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

// the 8 signed permutation matrices of the plane
std::vector<Mat2d> hyperoctahedral_group() {
  std::vector<Mat2d> g;
  for (int swap = 0; swap < 2; ++swap)
    for (int s1 : {1, -1})
      for (int s2 : {1, -1}) {
        Mat2d R = Mat2d::Zero();
        if (swap == 0) {
          R(0, 0) = s1;
          R(1, 1) = s2;
        } else {
          R(0, 1) = s1;
          R(1, 0) = s2;
        }
        g.push_back(R);
      }
  return g;
}

Mat4d mean_of(const std::vector<Mat4d>& samples, const std::vector<std::size_t>& idx) {
  Mat4d S = Mat4d::Zero();
  for (std::size_t i : idx) S += samples[i];
  return S / static_cast<double>(idx.size());
}

double half_trace(const Mat2d& m) { return 0.5 * m.trace(); }

}  // namespace

void validate(const RGParams& p) {
  check_gamma(p.gamma);
  if (!(p.c_star >= 0.0 && p.c_star <= 1.0)) throw InputError("c_star must lie in [0, 1]");
  if (!(p.nu >= 0.0) || !std::isfinite(p.nu)) throw InputError("nu must be nonnegative and finite");
}

RGParams from_field(const field::FieldParams& p) { return {p.gamma, p.c_star, p.nu}; }

double k_gamma(double gamma) {
  check_gamma(gamma);
  return 2.0 * kLog3 / (1.0 - pow3(-2.0 * gamma));
}

double geometric_partial_sum(double gamma, int n, int m) {
  check_gamma(gamma);
  double s = 0.0;
  for (int j = n + 1; j <= m; ++j) s += pow3(2.0 * gamma * j);
  return 2.0 * kLog3 * s;
}

double closed_form_diffusivity(const RGParams& p, double m) {
  validate(p);
  return std::sqrt(p.nu * p.nu + p.c_star / p.gamma * pow3(2.0 * p.gamma * m));
}

double LengthTimeMaps::R(double t) const {
  check_positive(t, "t");
  const double g = p.gamma;
  return std::pow(std::pow(p.nu * t, 2.0 - g) + p.c_star / g * t * t, 1.0 / (2.0 * (2.0 - g)));
}

double LengthTimeMaps::nu_eff(double r) const {
  check_positive(r, "r");
  return std::sqrt(p.nu * p.nu + p.c_star / p.gamma * std::pow(r, 2.0 * p.gamma));
}

double LengthTimeMaps::T(double r) const { return r * r / nu_eff(r); }

LengthTimeMaps length_time_maps(const RGParams& p) {
  validate(p);
  if (p.nu == 0.0 && p.c_star == 0.0) throw InputError("nu and c_star both zero");
  return {p};
}

double max_inversion_defect(const RGParams& p, double t_lo, double t_hi, int points) {
  const auto maps = length_time_maps(p);
  check_positive(t_lo, "t_lo");
  if (!(t_hi > t_lo) || points < 2) throw InputError("inversion sweep needs t_hi > t_lo and >= 2 points");
  double worst = 0.0;
  const double a = std::log(t_lo), b = std::log(t_hi);
  for (int i = 0; i < points; ++i) {
    const double t = std::exp(a + (b - a) * i / (points - 1));
    worst = std::max(worst, std::abs(maps.T(maps.R(t)) / t - 1.0));
  }
  return worst;
}

Crossover crossover_scales(const RGParams& p) {
  validate(p);
  Crossover c;
  c.m_star = crossover_floor(p, 1);
  c.m_star_star = crossover_floor(p, 3);
  c.t_star = p.c_star == 0.0 ? std::numeric_limits<double>::infinity()
                             : std::pow(p.gamma * std::pow(p.nu, 2.0 - p.gamma) / p.c_star, 1.0 / p.gamma);
  return c;
}

long crossover_scan(const RGParams& p, int power, long lo, long hi) {
  validate(p);
  long best = lo - 1;
  for (long m = lo; m <= hi; ++m) {
    const double rhs = 2.0 * kLog3 * p.c_star * std::pow(p.gamma, -power) * pow3(2.0 * p.gamma * m);
    if (p.nu * p.nu >= rhs) best = m;
  }
  return best;
}

RecursionLadder integrate_recursion(const RGParams& p, int m_lo, int m_hi) {
  validate(p);
  if (m_lo >= m_hi) throw InputError("integrate_recursion needs m_lo < m_hi");
  RecursionLadder r;
  double s2 = p.nu * p.nu + p.c_star * k_gamma(p.gamma) * pow3(2.0 * p.gamma * m_lo);
  for (int m = m_lo; m <= m_hi; ++m) {
    if (m > m_lo) s2 += 2.0 * p.c_star * kLog3 * pow3(2.0 * p.gamma * m);
    r.m.push_back(m);
    r.s2.push_back(s2);
    r.s.push_back(std::sqrt(s2));
  }
  return r;
}

Mat4d symmetrize(const Mat4d& A) {
  Mat4d out = Mat4d::Zero();
  for (const Mat2d& R : hyperoctahedral_group()) {
    Mat4d big = Mat4d::Zero();
    big.block<2, 2>(0, 0) = R;
    big.block<2, 2>(2, 2) = R;
    out += big.transpose() * A * big;
  }
  return out / 8.0;
}

DiffusivityLadder measure_diffusivity_ladder(const field::FieldParams& p, const std::vector<int>& scales, int n_seeds,
                                             int resolution_exp, const LadderOptions& opt) {
  field::validate(p);
  if (n_seeds < 8) throw InputError("diffusivity ladder needs at least 8 seeds");
  if (scales.empty()) throw InputError("diffusivity ladder needs at least one scale");
  if (resolution_exp < 3) throw InputError("ladder resolution must be at least 27 cells per side");
  if (opt.translates < 1) throw InputError("translates must be >= 1");
  const int depth = opt.depth >= 0 ? opt.depth : resolution_exp - 2;
  const RGParams rp = from_field(p);

  DiffusivityLadder out;
  out.params = p;
  out.translates = opt.translates;
  const int per_seed = opt.translates * opt.translates;
  const int n_scales = static_cast<int>(scales.size());
  const int jobs = n_scales * n_seeds * per_seed;

  std::vector<field::FieldParams> fp(scales.size(), p);
  for (std::size_t k = 0; k < scales.size(); ++k) {
    fp[k].scale_max = scales[k];
    fp[k].scale_min = scales[k] - depth;
    solver::check_grid_adequacy(fp[k], {scales[k], {0.0, 0.0}}, resolution_exp);
  }

  std::vector<Mat4d> blocks(static_cast<std::size_t>(jobs));
  coarsegrain::BlockOptions bopt = opt.block;
  if (opt.parallel) bopt.parallel = false;
  parallel_for(jobs, opt.parallel, [&](int job) {
    const int k = job / (n_seeds * per_seed);
    const int s = (job / per_seed) % n_seeds;
    const int t = job % per_seed;
    const int m = scales[static_cast<std::size_t>(k)];
    field::FieldParams f = fp[static_cast<std::size_t>(k)];
    f.seed = rng::hash({p.seed, static_cast<std::uint64_t>(s), 0x1add3eULL});
    const double side = pow3(m);
    const double off = 0.5 * (opt.translates - 1);
    const grid::TriadicCube cube{m, {(t % opt.translates - off) * side, (t / opt.translates - off) * side}};
    const auto c = solver::field_coefficients(f, cube, resolution_exp, m);
    blocks[static_cast<std::size_t>(job)] = coarsegrain::compute_block_matrix(c, bopt);
  });

  for (int k = 0; k < n_scales; ++k) {
    LadderEntry e;
    e.m = scales[static_cast<std::size_t>(k)];
    e.scale_min = fp[static_cast<std::size_t>(k)].scale_min;
    e.n_seeds = n_seeds;
    e.resolution = static_cast<int>(ipow3(resolution_exp));
    e.closed_form = closed_form_diffusivity(rp, e.m);
    for (int s = 0; s < n_seeds; ++s) {
      Mat4d S = Mat4d::Zero();
      for (int t = 0; t < per_seed; ++t) S += blocks[static_cast<std::size_t>((k * n_seeds + s) * per_seed + t)];
      e.samples.push_back(S / per_seed);
    }
    const auto& smp = e.samples;
    const std::uint64_t bs = rng::hash({opt.bootstrap_seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(e.m))});
    const auto sym_stat = [&](bool star) {
      return [&smp, star](const std::vector<std::size_t>& idx) {
        const auto cg = coarsegrain::extract_cg_matrices(symmetrize(mean_of(smp, idx)));
        return half_trace(star ? cg.s_star : cg.s);
      };
    };
    e.s_bar = stats::bootstrap(smp.size(), sym_stat(false), opt.bootstrap_resamples, bs);
    e.s_bar_star = stats::bootstrap(smp.size(), sym_stat(true), opt.bootstrap_resamples, bs);
    e.k_bar = stats::bootstrap(
        smp.size(),
        [&smp](const std::vector<std::size_t>& idx) {
          const auto cg = coarsegrain::extract_cg_matrices(mean_of(smp, idx));
          return 0.5 * (cg.k(0, 1) - cg.k(1, 0));
        },
        opt.bootstrap_resamples, bs);
    std::vector<std::size_t> all(smp.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    e.b_bar = half_trace(coarsegrain::extract_cg_matrices(symmetrize(mean_of(smp, all))).b);
    out.entries.push_back(std::move(e));
  }
  return out;
}

void write_ladder_csv(const DiffusivityLadder& ladder, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << std::setprecision(10);
  os << "m,s_measured,ci_lo,ci_hi,s_closed_form,n_seeds,resolution,s_star_measured,s_star_ci_lo,s_star_ci_hi,b_measured,"
        "k_antisym,k_antisym_se,scale_min\n";
  for (const auto& e : ladder.entries)
    os << e.m << ',' << e.s_bar.estimate << ',' << e.s_bar.lo << ',' << e.s_bar.hi << ',' << e.closed_form << ','
       << e.n_seeds << ',' << e.resolution << ',' << e.s_bar_star.estimate << ',' << e.s_bar_star.lo << ','
       << e.s_bar_star.hi << ',' << e.b_bar << ',' << e.k_bar.estimate << ',' << e.k_bar.se << ',' << e.scale_min
       << '\n';
}

void write_recursion_csv(const RGParams& p, const RecursionLadder& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << std::setprecision(14);
  os << "m,s_recursion,s_closed_form,ratio\n";
  for (std::size_t i = 0; i < r.m.size(); ++i) {
    const double cf = closed_form_diffusivity(p, r.m[i]);
    os << r.m[i] << ',' << r.s[i] << ',' << cf << ',' << r.s[i] / cf << '\n';
  }
}

}  // namespace superlab::rg
