#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "superlab/common.hpp"
#include "superlab/stats.hpp"

namespace superlab::field {

struct FieldParams {
  double gamma = 0.25;
  double c_star = 1.0;
  double nu = 1.0;
  std::uint64_t seed = 1;
  int scale_min = 0;
  int scale_max = 0;
  bool negate = false;  // seed-complement mode: every lattice Gaussian flipped
};

void validate(const FieldParams& p);

// Radial bump (1 - 2r^2)^3 on r < sqrt(2)/2.
struct MollifierKernel {
  static constexpr double kRadius2 = 0.5;
  static double profile(double r2);
  static double integral_sq();  // integral of profile^2 over R^2
  static double sigma(double c_star);
  static double lattice_sum_sq(Vec2 y);  // sum_z profile(|y - z|)^2
};

struct StreamSample {
  double kappa = 0.0;
  Vec2 grad{0.0, 0.0};
  Mat2 hess{0.0, 0.0, 0.0, 0.0};
};

struct LatticeSite {
  int scale;
  long long z1, z2;
  bool operator==(const LatticeSite&) const = default;
  auto operator<=>(const LatticeSite&) const = default;
};

double lattice_gaussian(std::uint64_t seed, int n, long long z1, long long z2);
Vec2 lattice_shift(std::uint64_t seed, int n);

// Single-scale contribution 3^{gamma n} k0^{(n)}(3^{-n} x) with chain-rule derivatives.
StreamSample eval_scale(const FieldParams& p, Vec2 x, int n);
// Sum over scales lo..hi; empty range gives zero.
StreamSample eval_stream_range(const FieldParams& p, Vec2 x, int lo, int hi);
StreamSample eval_stream(const FieldParams& p, Vec2 x, int m);
Vec2 eval_drift(const FieldParams& p, Vec2 x, int m);
Vec2 drift_of(const StreamSample& s);

// Coefficient audit: lattice sites whose Gaussians enter the value at x on scale n.
std::vector<LatticeSite> coefficient_sites(const FieldParams& p, Vec2 x, int n);

// Bundle ||k||_inf + sqrt(2)||grad k||_inf + 2||hess k||_inf over the unit square, sampled.
double regularity_bundle(const FieldParams& p, int n, int samples_per_side);

struct MomentReport {
  int m = 0;
  int n_seeds = 0;
  int cube_level = 0;
  int increment_from = 0;
  stats::Interval point_second_moment;       // E[kappa_m(0)^2]
  stats::Interval l2_second_moment;          // E[avg over cube of kappa_m^2]
  stats::Interval increment_second_moment;   // E[avg over cube of (kappa_m - kappa_n)^2]
  double increment_reference = 0.0;          // c_* log3 sum_{k=n+1}^m 3^{2 gamma k}
  std::vector<double> tail_t;
  std::vector<double> tail_prob;
  double c_j2 = 0.0;
};

struct MomentOptions {
  int cube_level = 2;
  int increment_from = -1;
  int bundle_samples = 9;
  int bootstrap_resamples = 1000;
};

// n_points: quadrature points per side of the averaging cube.
MomentReport field_moment_report(const FieldParams& p, int m, int n_seeds, int n_points,
                                 const MomentOptions& opt = {});

void dump_csv(const FieldParams& p, int m, Vec2 center, double side, int n, const std::string& path);

}  // namespace superlab::field
