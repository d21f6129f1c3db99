#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "superlab/field.hpp"
#include "superlab/grid.hpp"
#include "superlab/solver.hpp"
#include "superlab/stats.hpp"

namespace superlab::sde {

// Drift of the stream field with the lattice Gaussians of every scale cached on a window;
// values agree bit for bit with field::eval_drift.
class QuenchedDrift {
 public:
  QuenchedDrift(const field::FieldParams& p, Vec2 center, double half_width);
  Vec2 operator()(Vec2 x) const;
  const field::FieldParams& params() const { return p_; }

 private:
  struct Scale {
    int n = 0;
    double inv_side = 1.0;
    Vec2 shift{0.0, 0.0};
    double c1 = 0.0;
    long long a0 = 0, b0 = 0;
    int w = 0;
    std::vector<double> g;
  };
  double gaussian(const Scale& s, long long a, long long b) const;
  field::FieldParams p_;
  std::vector<Scale> scales_;
};

struct SimConfig {
  field::FieldParams field;  // c_star = 0: Brownian motion with diffusivity nu
  Vec2 x0{0.0, 0.0};
  double horizon = 1.0;
  double dt = 0.0;  // 0: largest step allowed by the drift rule; without drift min(horizon/1000, 3^{2l}/(1e4 nu))
  int n_traj = 1000;
  std::vector<double> checkpoints;
  std::uint64_t bm_seed_base = 1;
  std::optional<Vec2> constant_drift;  // replaces the field drift
  std::vector<int> exit_levels;        // monitored cubes x0 + []_l, ascending
  bool bridge_correction = true;       // Brownian-bridge crossing test between steps
  int sup_samples_per_side = 96;
  bool parallel = true;
};

// max |f| over a regular sample of x0 + []_L, L the largest monitored level (else scale_max + 1)
double estimate_sup_drift(const SimConfig& cfg);
// dt actually used; throws if the drift rule dt sup|f| <= 3^{n_min}/10 fails
double resolve_dt(const SimConfig& cfg, double sup_drift);
void validate(const SimConfig& cfg);

struct TrajectoryEnsemble {
  SimConfig config;
  double dt = 0.0;
  double sup_drift = 0.0;
  int n_invalid = 0;
  std::vector<char> valid;
  std::vector<double> positions;   // [traj][checkpoint][2]
  std::vector<double> exit_times;  // [traj][level], +inf if no exit before the horizon
  std::size_t n_checkpoints() const { return config.checkpoints.size(); }
  std::size_t n_levels() const { return config.exit_levels.size(); }
  Vec2 position(std::size_t traj, std::size_t cp) const {
    const std::size_t k = 2 * (traj * n_checkpoints() + cp);
    return {positions[k], positions[k + 1]};
  }
  double exit_time(std::size_t traj, std::size_t level) const { return exit_times[traj * n_levels() + level]; }
};

TrajectoryEnsemble simulate_ensemble(const SimConfig& cfg);

struct MomentReport {
  std::vector<double> times;
  std::vector<double> mean_x, mean_y;
  std::vector<double> second_moment;
  std::vector<double> variance;
  std::vector<stats::Interval> variance_ci;
  std::vector<stats::Interval> second_moment_ci;
  std::vector<double> reference;  // 2 d R(t)^2
  std::vector<double> moment4_root, moment6_root;  // (E|X|^p)^{1/p}
  int n_traj = 0;
};

MomentReport quenched_moments(const TrajectoryEnsemble& ens, int resamples = 1000, std::uint64_t seed = 0x5de0ULL);

stats::LineFit fit_exponent(const std::vector<double>& times, const std::vector<double>& variances);

// 2 d R(t)^2; 4 nu t without drift
double reference_second_moment(const field::FieldParams& p, double t);

struct FitWindow {
  double t_lo = 0.0;
  double t_hi = 0.0;
};
// [10 t_*, time at which R reaches a third of the side of x0 + []_level]
FitWindow superdiffusive_window(const field::FieldParams& p, int confinement_level);
double time_for_length(const field::FieldParams& p, double r);

// w = E[exit time]: -div(a grad w) = 1 in the cube, w = 0 on its boundary
grid::GridFunction expected_exit_time_via_pde(const solver::CoefficientGrid& c, const solver::SolveOptions& opt = {});
double center_value(const grid::GridFunction& w);

struct ExitCrosscheck {
  double mc_mean = 0.0;
  double mc_se = 0.0;
  double pde_value = 0.0;
  double z = 0.0;
  double exited_fraction = 0.0;
  bool inconclusive = false;
  bool pass(double z_max = 3.0) const { return !inconclusive && std::abs(z) <= z_max; }
};
// cfg monitors the cube of c as its first exit level, started at the cube center
ExitCrosscheck exit_time_crosscheck(const solver::CoefficientGrid& c, const SimConfig& cfg,
                                    const solver::SolveOptions& opt = {});
ExitCrosscheck exit_time_crosscheck(const TrajectoryEnsemble& ens, std::size_t level, double pde_value);

struct TailReport {
  int level = 0;
  std::vector<double> t;
  std::vector<double> exit_prob;   // P[tau <= t]
  std::vector<double> functional;  // bound exponent at t
  double t_lo = 0.0, t_hi = 0.0;   // central decade
  double c_fit = 0.0;              // -slope of log P against the functional
  double c_fit_se = 0.0;
  double c_dominance = 0.0;        // min over the decade of -log P / functional
  bool monotone = false;
  int points_in_decade = 0;
  bool pass() const { return monotone && c_fit > 0.0 && c_dominance > 0.0 && points_in_decade >= 3; }
};

double tail_functional(const field::FieldParams& p, int level, double t);
TailReport tail_shape_check(const TrajectoryEnsemble& ens, std::size_t level_index, const std::vector<double>& t_grid);

struct RegularityOptions {
  int cube_level = 0;
  int resolution_exp = 5;
  int depth = 3;  // field scales cube_level - depth..cube_level
  std::uint64_t seed = 1;
  Vec2 direction{1.0, 0.0};
  bool constant_kappa = false;  // replace the field by its mean value
  bool subgrid_closure = false;  // nu -> (nu^2 + c_* K_gamma 3^{2 gamma (n_min - 1)})^{1/2} for the unresolved scales
  solver::SolveOptions solve = direct_solve();
  static solver::SolveOptions direct_solve() {
    solver::SolveOptions o;
    o.direct = true;
    return o;
  }
};

struct RegularityReport {
  std::vector<double> nu;
  std::vector<double> nu_effective;
  std::vector<double> seminorm;
  double alpha = 0.0;
  bool alpha_admissible = false;  // alpha <= 1 - 3 gamma^{1/2}
  double growth() const;          // max / min over the sweep
};

RegularityReport regularity_sweep(double gamma, double c_star, const std::vector<double>& nu_list, double alpha,
                                  const RegularityOptions& opt = {});

void write_moments_csv(const MomentReport& r, const std::string& path);
void write_exit_csv(const std::vector<TailReport>& tails, const std::string& path);
void write_sidecar(const TrajectoryEnsemble& ens, const FitWindow& window, const std::string& path);

}  // namespace superlab::sde
