#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "superlab/coarsegrain.hpp"
#include "superlab/field.hpp"
#include "superlab/stats.hpp"

namespace superlab::rg {

struct RGParams {
  double gamma = 0.25;
  double c_star = 1.0;
  double nu = 1.0;
};

// gamma in (0, 1/2], c_star in [0, 1], nu >= 0
void validate(const RGParams& p);
RGParams from_field(const field::FieldParams& p);

double k_gamma(double gamma);
// 2 log3 sum_{j=n+1}^m 3^{2 gamma j}
double geometric_partial_sum(double gamma, int n, int m);
double closed_form_diffusivity(const RGParams& p, double m);

struct LengthTimeMaps {
  RGParams p;
  double R(double t) const;       // ((nu t)^{2-gamma} + c_* t^2 / gamma)^{1/(2(2-gamma))}
  double nu_eff(double r) const;  // (nu^2 + c_* r^{2 gamma} / gamma)^{1/2}
  double T(double r) const;       // r^2 / nu_eff(r)
};
LengthTimeMaps length_time_maps(const RGParams& p);
// max |T(R(t))/t - 1| over log-spaced t in [t_lo, t_hi]
double max_inversion_defect(const RGParams& p, double t_lo, double t_hi, int points);

struct Crossover {
  long m_star = 0;
  long m_star_star = 0;
  double t_star = 0.0;
};
Crossover crossover_scales(const RGParams& p);
// largest m with nu^2 >= 2 log3 c_* gamma^{-power} 3^{2 gamma m}, by direct scan over [lo, hi]
long crossover_scan(const RGParams& p, int power, long lo, long hi);

struct RecursionLadder {
  std::vector<int> m;
  std::vector<double> s;
  std::vector<double> s2;
};
RecursionLadder integrate_recursion(const RGParams& p, int m_lo, int m_hi);

struct LadderOptions {
  int depth = -1;             // scales m - depth..m; default r - 2 (grid adequacy)
  int translates = 1;         // cubes per side per seed (1: single cube)
  int bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 0xb007ULL;
  coarsegrain::BlockOptions block;
  bool parallel = true;
};

struct LadderEntry {
  int m = 0;
  int scale_min = 0;
  stats::Interval s_bar;       // scalar s of the symmetrized annealed block matrix
  stats::Interval s_bar_star;  // scalar s_* of the same
  stats::Interval k_bar;       // antisymmetric part of k from the unsymmetrized annealed matrix
  double b_bar = 0.0;
  double closed_form = 0.0;
  int n_seeds = 0;
  int resolution = 0;
  std::vector<coarsegrain::Mat4d> samples;
};

struct DiffusivityLadder {
  field::FieldParams params;
  std::vector<LadderEntry> entries;
  int translates = 1;
};

// hyperoctahedral average of diag(R,R)^t A diag(R,R)
coarsegrain::Mat4d symmetrize(const coarsegrain::Mat4d& A);

DiffusivityLadder measure_diffusivity_ladder(const field::FieldParams& p, const std::vector<int>& scales, int n_seeds,
                                             int resolution_exp, const LadderOptions& opt = {});

void write_ladder_csv(const DiffusivityLadder& ladder, const std::string& path);
void write_recursion_csv(const RGParams& p, const RecursionLadder& r, const std::string& path);

}  // namespace superlab::rg
