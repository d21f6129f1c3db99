#include "superlab/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "superlab/coarsegrain.hpp"
#include "superlab/common.hpp"
#include "superlab/field.hpp"
#include "superlab/grid.hpp"
#include "superlab/rg.hpp"
#include "superlab/rng.hpp"
#include "superlab/sde.hpp"
#include "superlab/solver.hpp"

namespace superlab::cli {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, Json>& defaults_table() {
  static const std::map<std::string, Json> table = [] {
    std::map<std::string, Json> t;
    t["field-moments"] = Json{{"gamma", 0.25},
                              {"c_star", 1.0},
                              {"nu", 1.0},
                              {"seed", 1},
                              {"scale_min", -3},
                              {"m", 0},
                              {"n_seeds", 200},
                              {"n_points", 9},
                              {"cube_level", 0},
                              {"increment_from", -2},
                              {"bootstrap_resamples", 1000},
                              {"sigma_tolerance", 3.0}};
    t["cg-properties"] = Json{{"suites", Json::array({"constant", "battery", "laminate", "besov"})},
                              {"gamma", 0.25},
                              {"c_star", 1.0},
                              {"nu", 0.5},
                              {"seed", 1},
                              {"n_fields", 50},
                              {"resolution_exps", Json::array({3, 4})},
                              {"constant_nu", 1.5},
                              {"constant_kappa", 0.7},
                              {"constant_resolution_exp", 4},
                              {"laminate_nu", Json::array({1.0, 2.0})},
                              {"laminate_resolution_exp", 5},
                              {"besov_samples", 20}};
    t["diffusivity-ladder"] = Json{{"gamma", 0.25},
                                   {"c_star", 0.5},
                                   {"nu", 0.5},
                                   {"seed", 1},
                                   {"scales", Json::array({0, 1, 2, 3, 4})},
                                   {"n_seeds", 32},
                                   {"resolution_exp", 5},
                                   {"translates", 1},
                                   {"bootstrap_resamples", 1000},
                                   {"tolerance", 0.2}};
    t["recursion-vs-closed-form"] = Json{{"gamma", 0.25},
                                         {"c_star", 1.0},
                                         {"nu", 1.0},
                                         {"seed", 1},
                                         {"m_lo", -20},
                                         {"m_hi", 20},
                                         {"gamma_sweep", Json::array({0.01, 0.05, 0.1, 0.25})}};
    t["variance-scaling"] = Json{{"gamma", 0.25},
                                 {"c_star", 1.0},
                                 {"nu", 1.4},
                                 {"seed", 1},
                                 {"scale_min", 0},
                                 {"confinement_level", 5},
                                 {"n_traj", 10000},
                                 {"bm_seed", 7},
                                 {"dt", 0.0},
                                 {"decades", 3.0},
                                 {"points_per_decade", 7},
                                 {"t_min", 0.01},
                                 {"bootstrap_resamples", 1000},
                                 {"slope_tolerance", 0.12},
                                 {"brownian_slope_tolerance", 0.03},
                                 {"ratio_band", Json::array({0.5, 2.0})},
                                 {"moment_band", 4.0}};
    t["exit-tails"] = Json{{"gamma", 0.25},
                           {"c_star", 1.0},
                           {"nu", 1.0},
                           {"seed", 1},
                           {"scale_min", -2},
                           {"level", 0},
                           {"n_traj", 10000},
                           {"bm_seed", 11},
                           {"horizon", 2.0},
                           {"dt", 0.0},
                           {"t_min", 0.003},
                           {"t_max", 0.3},
                           {"t_points", 41}};
    t["feynman-kac"] = Json{{"gamma", 0.25},
                            {"c_star", 1.0},
                            {"nu", 1.0},
                            {"seed", 1},
                            {"scale_min", -2},
                            {"level", 0},
                            {"resolution_exp", 5},
                            {"n_traj", 10000},
                            {"bm_seed", 13},
                            {"horizon", 2.0},
                            {"dt", 0.0},
                            {"z_max", 3.0}};
    t["regularity-sweep"] = Json{{"gamma", 0.1},
                                 {"c_star", 1.0},
                                 {"nu_list", Json::array({1.0, 0.3, 0.1, 0.03})},
                                 {"alpha", 0.75},
                                 {"seed", 1},
                                 {"cube_level", 0},
                                 {"resolution_exp", 5},
                                 {"depth", 3},
                                 {"subgrid_closure", false},
                                 {"growth_max", 3.0}};
    return t;
  }();
  return table;
}

// ------------------------------------------------------------------ config validation

std::string type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// coerce v to the type of the default d, or throw
Json coerce(const Json& d, const Json& v, const std::string& where) {
  const auto bad = [&] {
    return ConfigError(where + ": expected " + type_name(d) + ", got " + type_name(v));
  };
  if (d.is_boolean()) {
    if (!v.is_boolean()) throw bad();
    return v;
  }
  if (d.is_number_integer()) {
    if (v.is_number_integer()) return v;
    if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>() && std::isfinite(v.get<double>()))
      return Json(static_cast<long long>(v.get<double>()));
    throw bad();
  }
  if (d.is_number()) {
    if (!v.is_number()) throw bad();
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(where + ": non-finite value");
    return Json(x);
  }
  if (d.is_string()) {
    if (!v.is_string()) throw bad();
    return v;
  }
  if (d.is_array()) {
    if (!v.is_array()) throw bad();
    if (d.empty()) return v;
    Json out = Json::array();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(coerce(d[0], v[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }
  throw bad();
}

double num(const Json& p, const char* k) { return p.at(k).get<double>(); }
int integer(const Json& p, const char* k) { return p.at(k).get<int>(); }
std::uint64_t seed_of(const Json& p) { return p.at("seed").get<std::uint64_t>(); }

template <class T>
std::vector<T> list(const Json& p, const char* k) {
  return p.at(k).get<std::vector<T>>();
}

field::FieldParams field_of(const Json& p, int scale_min, int scale_max) {
  field::FieldParams f;
  f.gamma = num(p, "gamma");
  f.c_star = num(p, "c_star");
  if (p.contains("nu")) f.nu = num(p, "nu");
  f.seed = seed_of(p);
  f.scale_min = scale_min;
  f.scale_max = scale_max;
  return f;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void check_field(const Json& p, const std::string& exp) {
  field::FieldParams f;
  f.gamma = num(p, "gamma");
  f.c_star = num(p, "c_star");
  f.nu = p.contains("nu") ? num(p, "nu") : 1.0;
  try {
    field::validate(f);
  } catch (const std::exception& e) {
    throw ConfigError(exp + ".params: " + e.what());
  }
}

void check_params(const std::string& exp, const Json& p) {
  if (p.at("seed").is_number_integer() && p.at("seed").get<long long>() < 0 && !p.at("seed").is_number_unsigned())
    throw ConfigError(exp + ".params.seed: must be nonnegative");
  if (exp != "regularity-sweep") check_field(p, exp);
  if (exp == "field-moments") {
    require(integer(p, "m") >= integer(p, "scale_min"), "field-moments.params.m: must be >= scale_min");
    require(integer(p, "n_seeds") >= 100, "field-moments.params.n_seeds: must be >= 100");
    require(integer(p, "n_points") >= 1, "field-moments.params.n_points: must be >= 1");
    require(integer(p, "bootstrap_resamples") >= 10, "field-moments.params.bootstrap_resamples: must be >= 10");
  } else if (exp == "cg-properties") {
    const std::vector<std::string> known{"constant", "battery", "laminate", "besov"};
    for (const auto& s : list<std::string>(p, "suites"))
      require(std::find(known.begin(), known.end(), s) != known.end(), "cg-properties.params.suites: unknown suite " + s);
    for (int r : list<int>(p, "resolution_exps"))
      require(r >= 3 && r <= 5, "cg-properties.params.resolution_exps: entries must lie in [3, 5]");
    require(integer(p, "n_fields") >= 1, "cg-properties.params.n_fields: must be >= 1");
    require(num(p, "constant_nu") > 0.0, "cg-properties.params.constant_nu: must be positive");
    require(list<double>(p, "laminate_nu").size() == 2, "cg-properties.params.laminate_nu: needs two values");
    for (double v : list<double>(p, "laminate_nu")) require(v > 0.0, "cg-properties.params.laminate_nu: must be positive");
    require(integer(p, "constant_resolution_exp") >= 2, "cg-properties.params.constant_resolution_exp: must be >= 2");
    require(integer(p, "laminate_resolution_exp") >= 2, "cg-properties.params.laminate_resolution_exp: must be >= 2");
    require(integer(p, "besov_samples") >= 1, "cg-properties.params.besov_samples: must be >= 1");
  } else if (exp == "diffusivity-ladder") {
    require(!p.at("scales").empty(), "diffusivity-ladder.params.scales: must be nonempty");
    require(integer(p, "n_seeds") >= 8, "diffusivity-ladder.params.n_seeds: must be >= 8");
    require(integer(p, "resolution_exp") >= 3 && integer(p, "resolution_exp") <= 6,
            "diffusivity-ladder.params.resolution_exp: must lie in [3, 6]");
    require(integer(p, "translates") >= 1, "diffusivity-ladder.params.translates: must be >= 1");
    require(num(p, "nu") > 0.0, "diffusivity-ladder.params.nu: must be positive");
  } else if (exp == "recursion-vs-closed-form") {
    require(integer(p, "m_lo") < integer(p, "m_hi"), "recursion-vs-closed-form.params.m_lo: must be < m_hi");
    for (double g : list<double>(p, "gamma_sweep"))
      require(g > 0.0 && g <= 0.25, "recursion-vs-closed-form.params.gamma_sweep: entries must lie in (0, 1/4]");
  } else if (exp == "variance-scaling") {
    require(num(p, "nu") > 0.0, "variance-scaling.params.nu: must be positive");
    require(integer(p, "n_traj") >= 100, "variance-scaling.params.n_traj: must be >= 100");
    require(num(p, "decades") >= 2.0, "variance-scaling.params.decades: must be >= 2");
    require(integer(p, "points_per_decade") >= 2, "variance-scaling.params.points_per_decade: must be >= 2");
    require(integer(p, "confinement_level") > integer(p, "scale_min"),
            "variance-scaling.params.confinement_level: must exceed scale_min");
    require(num(p, "t_min") > 0.0, "variance-scaling.params.t_min: must be positive");
    require(num(p, "dt") >= 0.0, "variance-scaling.params.dt: must be nonnegative");
    require(list<double>(p, "ratio_band").size() == 2, "variance-scaling.params.ratio_band: needs two values");
  } else if (exp == "exit-tails" || exp == "feynman-kac") {
    require(num(p, "nu") > 0.0, exp + ".params.nu: must be positive");
    require(integer(p, "n_traj") >= 100, exp + ".params.n_traj: must be >= 100");
    require(integer(p, "level") >= integer(p, "scale_min"), exp + ".params.level: must be >= scale_min");
    require(num(p, "horizon") > 0.0, exp + ".params.horizon: must be positive");
    require(num(p, "dt") >= 0.0, exp + ".params.dt: must be nonnegative");
    if (exp == "exit-tails") {
      require(num(p, "t_min") > 0.0 && num(p, "t_max") > num(p, "t_min"), "exit-tails.params.t_min: need 0 < t_min < t_max");
      require(integer(p, "t_points") >= 3, "exit-tails.params.t_points: must be >= 3");
    } else {
      require(integer(p, "resolution_exp") >= 2, "feynman-kac.params.resolution_exp: must be >= 2");
      field::FieldParams f = field_of(p, integer(p, "scale_min"), integer(p, "level"));
      if (f.c_star > 0.0) {
        try {
          solver::check_grid_adequacy(f, {integer(p, "level"), {0.0, 0.0}}, integer(p, "resolution_exp"));
        } catch (const std::exception& e) {
          throw ConfigError(std::string("feynman-kac.params: ") + e.what());
        }
      }
    }
  } else if (exp == "regularity-sweep") {
    check_field(Json{{"gamma", num(p, "gamma")}, {"c_star", num(p, "c_star")}}, exp);
    require(!p.at("nu_list").empty(), "regularity-sweep.params.nu_list: must be nonempty");
    for (double v : list<double>(p, "nu_list")) require(v > 0.0, "regularity-sweep.params.nu_list: entries must be positive");
    require(num(p, "alpha") > 0.0 && num(p, "alpha") <= 1.0, "regularity-sweep.params.alpha: must lie in (0, 1]");
    require(integer(p, "depth") >= 0, "regularity-sweep.params.depth: must be >= 0");
    require(integer(p, "resolution_exp") >= 2, "regularity-sweep.params.resolution_exp: must be >= 2");
  }
}

// ------------------------------------------------------------------ artifacts

class Artifacts {
 public:
  Artifacts(const std::string& dir, const ExperimentConfig& cfg) : dir_(dir), cfg_(cfg) {}
  std::string path(const std::string& name) {
    const std::string p = (fs::path(dir_) / name).string();
    if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
    return p;
  }
  // prefixes '#' metadata lines to a CSV written by a module
  void stamp(const std::string& name) {
    const std::string p = (fs::path(dir_) / name).string();
    std::ifstream in(p);
    std::stringstream body;
    body << in.rdbuf();
    in.close();
    std::ofstream out(p);
    out << "# superlab " << kToolVersion << " experiment=" << cfg_.experiment << '\n';
    out << "# params=" << cfg_.params.dump() << '\n';
    out << body.str();
  }
  void cleanup() const {
    std::error_code ec;
    for (const auto& n : names_) fs::remove(fs::path(dir_) / n, ec);
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::string dir_;
  const ExperimentConfig& cfg_;
  std::vector<std::string> names_;
};

Check make_check(std::string name, bool pass, double measured, double tol, std::string detail = {}) {
  return {std::move(name), pass, measured, tol, std::move(detail)};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::ofstream open_out(const std::string& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p);
  os << std::setprecision(12);
  return os;
}

// ------------------------------------------------------------------ experiments

void run_field_moments(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  const int m = integer(p, "m");
  const auto f = field_of(p, integer(p, "scale_min"), m);
  field::MomentOptions opt;
  opt.cube_level = integer(p, "cube_level");
  opt.increment_from = integer(p, "increment_from");
  opt.bootstrap_resamples = integer(p, "bootstrap_resamples");
  const auto rep = field::field_moment_report(f, m, integer(p, "n_seeds"), integer(p, "n_points"), opt);
  double full = 0.0;
  for (int n = f.scale_min; n <= m; ++n) full += f.c_star * kLog3 * pow3(2.0 * f.gamma * n);
  const double k = num(p, "sigma_tolerance");
  const auto add = [&](const char* name, const stats::Interval& est, double ref) {
    const double tol = k * est.se + 1e-12 * std::abs(ref);
    checks.push_back(make_check(name, std::abs(est.estimate - ref) <= tol, est.estimate, tol, "reference " + fmt(ref)));
  };
  add("point_second_moment", rep.point_second_moment, full);
  add("cube_average_second_moment", rep.l2_second_moment, full);
  add("increment_second_moment", rep.increment_second_moment, rep.increment_reference);
  auto os = open_out(art.path("field_moments.csv"));
  os << "quantity,estimate,ci_lo,ci_hi,se,reference\n";
  const auto row = [&](const char* q, const stats::Interval& i, double ref) {
    os << q << ',' << i.estimate << ',' << i.lo << ',' << i.hi << ',' << i.se << ',' << ref << '\n';
  };
  row("point_second_moment", rep.point_second_moment, full);
  row("cube_average_second_moment", rep.l2_second_moment, full);
  row("increment_second_moment", rep.increment_second_moment, rep.increment_reference);
  os.close();
  art.stamp("field_moments.csv");
  auto ts = open_out(art.path("field_tail.csv"));
  ts << "t,tail_prob\n";
  for (std::size_t i = 0; i < rep.tail_t.size(); ++i) ts << rep.tail_t[i] << ',' << rep.tail_prob[i] << '\n';
  ts << "# c_j2=" << rep.c_j2 << '\n';
}

// smooth random sample: three random plane waves
grid::GridFunction smooth_sample(std::uint64_t seed, int r) {
  const rng::Stream st(rng::hash({seed, 0x5300ULL}));
  double amp[3], k1[3], k2[3], ph[3];
  for (int i = 0; i < 3; ++i) {
    amp[i] = st.normal(4 * i);
    k1[i] = std::floor(4.0 * st.uniform(4 * i + 1)) - 2.0 + 0.5;
    k2[i] = std::floor(4.0 * st.uniform(4 * i + 2)) - 2.0 + 0.5;
    ph[i] = 2.0 * M_PI * st.uniform(4 * i + 3);
  }
  return grid::sample(grid::TriadicCube{0, {0.0, 0.0}}, r, [&](Vec2 x) {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += amp[i] * std::sin(2.0 * M_PI * (k1[i] * x[0] + k2[i] * x[1]) + ph[i]);
    return v;
  });
}

// (|U|^{-1} h^4 sum_{x != y} |f(x) - f(y)|^p / |x - y|^{2 + s p})^{1/p}
double gagliardo(const grid::GridFunction& f, double s, double p) {
  const int n = f.n();
  const double h = f.h();
  std::vector<double> kernel(static_cast<std::size_t>(n) * n);
  for (int dj = 0; dj < n; ++dj)
    for (int di = 0; di < n; ++di)
      kernel[static_cast<std::size_t>(dj) * n + di] =
          (di == 0 && dj == 0) ? 0.0 : std::pow(h * std::hypot(double(di), double(dj)), -(2.0 + s * p));
  const long N = static_cast<long>(n) * n;
  double total = 0.0;
#pragma omp parallel for reduction(+ : total) schedule(static)
  for (long a = 0; a < N; ++a) {
    const int ai = static_cast<int>(a % n), aj = static_cast<int>(a / n);
    double acc = 0.0;
    for (int bj = 0; bj < n; ++bj) {
      const double* krow = &kernel[static_cast<std::size_t>(std::abs(aj - bj)) * n];
      for (int bi = 0; bi < n; ++bi) {
        const double d = std::abs(f(ai, aj) - f(bi, bj));
        acc += (p == 2.0 ? d * d : std::pow(d, p)) * krow[std::abs(ai - bi)];
      }
    }
    total += acc;
  }
  const double side = f.cube().side();
  return std::pow(total * h * h * h * h / (side * side), 1.0 / p);
}

// cube averages summed cell by cell at every level
double neg_besov_direct(const grid::GridFunction& f, double s, double p, double q) {
  const int m = f.cube().level, r = f.r(), N = f.n();
  double total = 0.0;
  for (int l = 0; l <= r; ++l) {
    const int w = static_cast<int>(ipow3(r - l)), cubes = static_cast<int>(ipow3(l));
    double acc = 0.0;
    for (int J = 0; J < cubes; ++J)
      for (int I = 0; I < cubes; ++I) {
        double sum = 0.0;
        for (int j = J * w; j < (J + 1) * w; ++j)
          for (int i = I * w; i < (I + 1) * w; ++i) sum += f(i, j);
        acc += std::pow(std::abs(sum / (static_cast<double>(w) * w)), p);
      }
    (void)N;
    total += pow3(s * q * (m - l)) * std::pow(acc / (static_cast<double>(cubes) * cubes), q / p);
  }
  return std::pow(total, 1.0 / q);
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

void run_cg_properties(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  namespace cg = coarsegrain;
  const auto suites = list<std::string>(p, "suites");
  const auto has = [&](const char* s) { return std::find(suites.begin(), suites.end(), s) != suites.end(); };
  auto os = open_out(art.path("cg_properties.csv"));
  os << "suite,case,quantity,value\n";

  if (has("constant")) {
    const double nu = num(p, "constant_nu"), k0 = num(p, "constant_kappa");
    const int r = integer(p, "constant_resolution_exp");
    const auto c = solver::constant_coefficients({0, {0.0, 0.0}}, r, nu, k0);
    const cg::Mat4d A = cg::compute_block_matrix(c);
    const cg::Mat4d ref = cg::pointwise_block(nu, k0);
    const double err = (A - ref).norm() / ref.norm();
    checks.push_back(make_check("constant_field_block_matrix", err <= 1e-6, err, 1e-6));
    const auto two = cg::coarse_grain(solver::constant_coefficients({0, {0.0, 0.0}}, r, 2.0, 0.0));
    const double J = cg::compute_J(two, cg::Vec2d(1.0, 0.0), cg::Vec2d(2.0, 0.0));
    checks.push_back(make_check("constant_field_J_zero", std::abs(J) <= 1e-8, std::abs(J), 1e-8, "a = 2I, p = e1, q = 2 e1"));
    os << "constant,0,block_rel_error," << err << "\nconstant,0,J," << J << '\n';
  }

  if (has("battery")) {
    const auto res = list<int>(p, "resolution_exps");
    const int nf = integer(p, "n_fields");
    double worst_loewner = INFINITY, worst_sym = INFINITY, worst_defect = INFINITY, worst_adj = 0.0, worst_hom = 0.0,
           worst_J = 0.0, worst_bid = 0.0;
    std::vector<double> defect(nf), loewner(nf), sym(nf), adj(nf), hom(nf), jerr(nf), bid(nf);
    for (int i = 0; i < nf; ++i) {
      const int r = res[static_cast<std::size_t>(i) % res.size()];
      field::FieldParams f = field_of(p, 2 - r, 1);
      f.seed = rng::hash({seed_of(p), static_cast<std::uint64_t>(i), 0xba77ULL});
      const auto c = solver::field_coefficients(f, {0, {0.0, 0.0}}, r, 1);
      const auto tab = cg::multiscale_table(c, 2);
      const auto& parent = tab.at(0)[0];
      const auto& children = tab.at(-1);
      const double scale = parent.A.norm();
      defect[i] = std::min(cg::min_eigenvalue(cg::subadditivity_defect(parent, children)),
                           cg::min_eigenvalue(cg::subadditivity_defect_dual(parent, children))) /
                  scale;
      double lo = INFINITY, sy = INFINITY, bi = 0.0;
      for (const auto& lvl : tab.cubes)
        for (const auto& cube : lvl) {
          const auto inv = cg::check_invariants(cube);
          lo = std::min({lo, inv.loewner_sstar_s / inv.scale, inv.loewner_s_b / inv.scale});
          sy = std::min({sy, inv.sym_part_plus / inv.scale, inv.sym_part_minus / inv.scale});
          bi = std::max(bi, inv.b_identity);
        }
      loewner[i] = lo;
      sym[i] = sy;
      bid[i] = bi;
      const auto neg = cg::coarse_grain(solver::negated_kappa(c));
      adj[i] = std::max((neg.s - parent.s).norm() / parent.s.norm(), (neg.k + parent.k).norm() / parent.s.norm());
      const double lam = 2.5;
      const auto sc = cg::coarse_grain(solver::scaled(c, lam));
      hom[i] = std::max({(sc.s - lam * parent.s).norm() / (lam * parent.s.norm()),
                         (sc.s_star - lam * parent.s_star).norm() / (lam * parent.s_star.norm()),
                         (sc.k - lam * parent.k).norm() / (lam * parent.s.norm())});
      const rng::Stream st(rng::hash({seed_of(p), static_cast<std::uint64_t>(i), 0x9fULL}));
      double je = 0.0;
      for (int t = 0; t < 8; ++t) {
        const cg::Vec2d pv(st.normal(4 * t), st.normal(4 * t + 1)), qv(st.normal(4 * t + 2), st.normal(4 * t + 3));
        const double j0 = cg::compute_J(parent, pv, qv);
        const double mag = std::max(1.0, std::abs(j0));
        je = std::max({je, std::abs(cg::compute_J_block(parent.A, pv, qv) - j0) / mag,
                       std::abs(cg::compute_J_split(parent, pv, qv) - j0) / mag});
      }
      jerr[i] = je;
      worst_defect = std::min(worst_defect, defect[i]);
      worst_loewner = std::min(worst_loewner, loewner[i]);
      worst_sym = std::min(worst_sym, sym[i]);
      worst_adj = std::max(worst_adj, adj[i]);
      worst_hom = std::max(worst_hom, hom[i]);
      worst_J = std::max(worst_J, jerr[i]);
      worst_bid = std::max(worst_bid, bid[i]);
      os << "battery," << i << ",subadditivity_min_eig_rel," << defect[i] << '\n'
         << "battery," << i << ",loewner_min_eig_rel," << loewner[i] << '\n'
         << "battery," << i << ",sym_part_min_eig_rel," << sym[i] << '\n'
         << "battery," << i << ",adjoint_rel_error," << adj[i] << '\n'
         << "battery," << i << ",homogeneity_rel_error," << hom[i] << '\n'
         << "battery," << i << ",J_form_rel_error," << jerr[i] << '\n';
    }
    const std::string n = std::to_string(nf) + " fields";
    checks.push_back(make_check("loewner_chain", worst_loewner >= -1e-6, worst_loewner, -1e-6, n));
    checks.push_back(make_check("symmetric_part_bound", worst_sym >= -1e-6, worst_sym, -1e-6, n));
    checks.push_back(make_check("subadditivity_defect", worst_defect >= -1e-6, worst_defect, -1e-6, n));
    checks.push_back(make_check("adjoint_redundancy", worst_adj <= 1e-8, worst_adj, 1e-8, n));
    checks.push_back(make_check("homogeneity", worst_hom <= 1e-8, worst_hom, 1e-8, n));
    checks.push_back(make_check("J_quadratic_form_consistency", worst_J <= 1e-10, worst_J, 1e-10, n));
    checks.push_back(make_check("b_identity", worst_bid <= 1e-8, worst_bid, 1e-8, n));
  }

  if (has("laminate")) {
    const auto nus = list<double>(p, "laminate_nu");
    const auto c = solver::laminate_coefficients({0, {0.0, 0.0}}, integer(p, "laminate_resolution_exp"), nus[0], nus[1], 1);
    const auto m = cg::coarse_grain(c);
    const double harmonic = 2.0 / (1.0 / nus[0] + 1.0 / nus[1]), arithmetic = 0.5 * (nus[0] + nus[1]);
    const double across = m.s_star(0, 0), along = m.s_star(1, 1);
    const double offd = std::abs(m.s_star(0, 1)) / along;
    checks.push_back(make_check("laminate_across", rel(across, harmonic) <= 0.02, across, 0.02, "reference " + fmt(harmonic)));
    checks.push_back(make_check("laminate_along", rel(along, arithmetic) <= 0.02, along, 0.02, "reference " + fmt(arithmetic)));
    checks.push_back(make_check("laminate_axes", offd <= 1e-6, offd, 1e-6));
    os << "laminate,0,s_star_across," << across << "\nlaminate,0,s_star_along," << along << '\n';
  }

  if (has("besov")) {
    const int ns = integer(p, "besov_samples");
    const grid::GridFunction cst(grid::TriadicCube{0, {0.0, 0.0}}, 4, 3.7);
    double const_val = 0.0;
    for (double s : {0.25, 0.5, 1.0})
      for (double q : {1.0, 2.0, 3.0}) const_val = std::max(const_val, grid::besov_seminorm(cst, s, 2.0, q));
    checks.push_back(make_check("besov_constants_vanish", const_val == 0.0, const_val, 0.0));
    double hom = 0.0, lo = INFINITY, hi = 0.0, neg = 0.0;
    for (int i = 0; i < ns; ++i) {
      const auto f = smooth_sample(rng::hash({seed_of(p), static_cast<std::uint64_t>(i)}), 4);
      grid::GridFunction g = f;
      for (double& v : g.values()) v *= -2.75;
      hom = std::max({hom, rel(grid::besov_seminorm(g, 0.5, 2.0, 2.0), 2.75 * grid::besov_seminorm(f, 0.5, 2.0, 2.0)),
                      rel(grid::neg_besov_seminorm(g, 0.5, 2.0, 2.0), 2.75 * grid::neg_besov_seminorm(f, 0.5, 2.0, 2.0))});
      const double ratio = grid::besov_seminorm(f, 0.5, 2.0, 2.0) / gagliardo(f, 0.5, 2.0);
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      os << "besov," << i << ",besov_over_double_sum," << ratio << '\n';
      const auto small = smooth_sample(rng::hash({seed_of(p), static_cast<std::uint64_t>(i), 27}), 3);
      for (double s : {0.5, 1.0})
        for (double pp : {1.0, 2.0})
          for (double q : {1.0, 2.0}) neg = std::max(neg, rel(grid::neg_besov_seminorm(small, s, pp, q), neg_besov_direct(small, s, pp, q)));
    }
    checks.push_back(make_check("besov_homogeneity", hom <= 1e-12, hom, 1e-12));
    checks.push_back(make_check("besov_double_sum_ratio_min", lo >= 1.0 / 16.0, lo, 1.0 / 16.0));
    checks.push_back(make_check("besov_double_sum_ratio_max", hi <= 16.0, hi, 16.0));
    checks.push_back(make_check("neg_besov_direct_sum", neg <= 1e-12, neg, 1e-12));
  }
  os.close();
  art.stamp("cg_properties.csv");
}

void run_ladder(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  const auto f = field_of(p, 0, 0);
  rg::LadderOptions opt;
  opt.translates = integer(p, "translates");
  opt.bootstrap_resamples = integer(p, "bootstrap_resamples");
  const auto ladder = rg::measure_diffusivity_ladder(f, list<int>(p, "scales"), integer(p, "n_seeds"),
                                                     integer(p, "resolution_exp"), opt);
  const double tol = num(p, "tolerance");
  const auto rp = rg::from_field(f);
  const auto cross = rg::crossover_scales(rp);
  for (std::size_t i = 0; i < ladder.entries.size(); ++i) {
    const auto& e = ladder.entries[i];
    const std::string m = std::to_string(e.m);
    const double dev = std::abs(e.s_bar.estimate / e.closed_form - 1.0);
    checks.push_back(make_check("ladder_ratio_m" + m, dev <= tol, e.s_bar.estimate / e.closed_form, tol,
                                "s " + fmt(e.s_bar.estimate) + " [" + fmt(e.s_bar.lo) + ", " + fmt(e.s_bar.hi) +
                                    "], closed form " + fmt(e.closed_form) + ", s_* " + fmt(e.s_bar_star.estimate)));
    const double kt = 3.0 * e.k_bar.se + 1e-12;
    checks.push_back(make_check("annealed_k_m" + m, std::abs(e.k_bar.estimate) <= kt, e.k_bar.estimate, kt));
    if (f.c_star == 0.0)
      checks.push_back(make_check("brownian_ladder_m" + m, rel(e.s_bar.estimate, f.nu) <= 1e-8, e.s_bar.estimate, 1e-8));
    if (e.m <= cross.m_star_star) {
      const double w = 0.5 * (e.s_bar.hi - e.s_bar.lo);
      const bool ok = e.s_bar.estimate >= f.nu - w && e.s_bar.estimate <= f.nu * (1.0 + f.gamma * f.gamma) + w;
      checks.push_back(make_check("base_case_m" + m, ok, e.s_bar.estimate, f.nu * (1.0 + f.gamma * f.gamma) + w));
    }
    if (i > 0) {
      const auto& prev = ladder.entries[i - 1];
      if (e.m > prev.m)
        checks.push_back(make_check("ladder_monotone_m" + m, e.s_bar.hi >= prev.s_bar.lo, e.s_bar.hi, prev.s_bar.lo));
    }
  }
  rg::write_ladder_csv(ladder, art.path("ladder.csv"));
  art.stamp("ladder.csv");
  auto os = open_out(art.path("ladder_samples.csv"));
  os << "m,seed_index,A00,A01,A02,A03,A10,A11,A12,A13,A20,A21,A22,A23,A30,A31,A32,A33\n";
  for (const auto& e : ladder.entries)
    for (std::size_t s = 0; s < e.samples.size(); ++s) {
      os << e.m << ',' << s;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) os << ',' << e.samples[s](a, b);
      os << '\n';
    }
}

void run_recursion(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  const int lo = integer(p, "m_lo"), hi = integer(p, "m_hi");
  const rg::RGParams main{num(p, "gamma"), num(p, "c_star"), num(p, "nu")};
  std::vector<double> gammas = list<double>(p, "gamma_sweep");
  double ident = 0.0, kb_lo = INFINITY, kb_hi = -INFINITY, band = 0.0, step = 0.0;
  std::string band_detail;
  for (double g : gammas) {
    const rg::RGParams rp{g, main.c_star, main.nu};
    const auto r = rg::integrate_recursion(rp, lo, hi);
    const double K = rg::k_gamma(g);
    kb_lo = std::min(kb_lo, K - 1.0 / g);
    kb_hi = std::max(kb_hi, K - 1.0 / g);
    double worst = 0.0;
    for (std::size_t i = 0; i < r.m.size(); ++i) {
      const double target = rp.nu * rp.nu + rp.c_star * K * pow3(2.0 * g * r.m[i]);
      ident = std::max(ident, std::abs(r.s2[i] - target) / target);
      if (i > 0) {
        const double inc = 2.0 * rp.c_star * kLog3 * pow3(2.0 * g * r.m[i]);
        step = std::max(step, std::abs((r.s2[i] - r.s2[i - 1]) - inc) / std::max(inc, 1e-300));
      }
      worst = std::max(worst, std::abs(r.s[i] / rg::closed_form_diffusivity(rp, r.m[i]) - 1.0));
    }
    const double allowed = 5.0 * std::sqrt(g) * std::abs(std::log(g) / kLog3);
    band = std::max(band, worst / allowed);
    band_detail += "gamma " + fmt(g) + ": " + fmt(worst) + " <= " + fmt(allowed) + "; ";
  }
  checks.push_back(make_check("recursion_identity", ident <= 1e-12, ident, 1e-12));
  checks.push_back(make_check("recursion_single_step", step <= 1e-9, step, 1e-9, "relative to the increment"));
  checks.push_back(make_check("k_gamma_lower", kb_lo >= 0.0, kb_lo, 0.0));
  checks.push_back(make_check("k_gamma_upper", kb_hi <= 4.0, kb_hi, 4.0));
  checks.push_back(make_check("recursion_closed_form_band", band <= 1.0, band, 1.0, band_detail));

  auto cs = open_out(art.path("crossover.csv"));
  cs << "gamma,m_star,m_star_scan,m_star_star,m_star_star_scan,t_star,gap,gap_reference,inversion_defect\n";
  bool scan_ok = true, gap_ok = true, inv_ok = true;
  double inv_worst = 0.0;
  for (double g : gammas) {
    const rg::RGParams rp{g, main.c_star, main.nu};
    const auto c = rg::crossover_scales(rp);
    const long s1 = rg::crossover_scan(rp, 1, -2000, 2000), s3 = rg::crossover_scan(rp, 3, -2000, 2000);
    scan_ok = scan_ok && s1 == c.m_star && s3 == c.m_star_star;
    const double gap_ref = std::abs(std::log(g) / kLog3) / g;
    const double gap = static_cast<double>(c.m_star - c.m_star_star);
    if (g == 0.05 || g == 0.1) gap_ok = gap_ok && std::abs(gap - gap_ref) <= 2.0;
    const double inv = rg::max_inversion_defect(rp, 1e-3, 1e6, 400);
    inv_worst = std::max(inv_worst, inv);
    inv_ok = inv_ok && inv <= 1.0;
    cs << g << ',' << c.m_star << ',' << s1 << ',' << c.m_star_star << ',' << s3 << ',' << c.t_star << ',' << gap << ','
       << gap_ref << ',' << inv << '\n';
  }
  cs.close();
  art.stamp("crossover.csv");
  checks.push_back(make_check("crossover_scan_agreement", scan_ok, scan_ok ? 1.0 : 0.0, 1.0));
  checks.push_back(make_check("crossover_gap", gap_ok, gap_ok ? 1.0 : 0.0, 2.0));
  checks.push_back(make_check("length_time_inversion", inv_ok, inv_worst, 1.0));

  const auto r = rg::integrate_recursion(main, lo, hi);
  rg::write_recursion_csv(main, r, art.path("recursion.csv"));
  art.stamp("recursion.csv");
}

std::vector<double> log_grid(double lo, double hi, int per_decade) {
  const int n = std::max(2, static_cast<int>(std::lround(std::log10(hi / lo) * per_decade)) + 1);
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return t;
}

void run_variance(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  const int L = integer(p, "confinement_level");
  sde::SimConfig cfg;
  cfg.field = field_of(p, integer(p, "scale_min"), L);
  cfg.n_traj = integer(p, "n_traj");
  cfg.bm_seed_base = p.at("bm_seed").get<std::uint64_t>();
  cfg.dt = num(p, "dt");
  cfg.exit_levels = {L};
  const bool brownian = cfg.field.c_star == 0.0;
  const double decades = num(p, "decades");
  sde::FitWindow w;
  if (brownian) {
    w.t_lo = num(p, "t_min");
    w.t_hi = w.t_lo * std::pow(10.0, decades);
  } else {
    const auto win = sde::superdiffusive_window(cfg.field, L);
    w.t_lo = win.t_lo;
    w.t_hi = std::min(win.t_hi, win.t_lo * std::pow(10.0, decades));
    const double covered = std::log10(w.t_hi / w.t_lo);
    checks.push_back(make_check("fit_window_decades", covered >= decades - 1e-9, covered, decades,
                                "window [" + fmt(w.t_lo) + ", " + fmt(w.t_hi) + "]"));
  }
  cfg.checkpoints = log_grid(w.t_lo, w.t_hi, integer(p, "points_per_decade"));
  cfg.horizon = cfg.checkpoints.back();
  const auto ens = sde::simulate_ensemble(cfg);
  const auto mom = sde::quenched_moments(ens, integer(p, "bootstrap_resamples"), rng::hash({seed_of(p), 0x3a7ULL}));
  checks.push_back(make_check("valid_trajectories", ens.n_invalid == 0, ens.n_invalid, 0.0));
  double ident = 0.0;
  for (std::size_t i = 0; i < mom.times.size(); ++i) {
    const double v = mom.second_moment[i] - (mom.mean_x[i] * mom.mean_x[i] + mom.mean_y[i] * mom.mean_y[i]);
    ident = std::max(ident, std::abs(mom.variance[i] - v) / std::max(1e-300, mom.second_moment[i]));
  }
  checks.push_back(make_check("variance_identity", ident <= 1e-12, ident, 1e-12));
  const auto fit = sde::fit_exponent(mom.times, mom.variance);
  if (brownian) {
    const double tol = num(p, "brownian_slope_tolerance");
    checks.push_back(make_check("brownian_exponent", std::abs(fit.slope - 1.0) <= tol, fit.slope, tol,
                                "se " + fmt(fit.slope_se)));
    double worst = 0.0;
    for (std::size_t i = 0; i < mom.times.size(); ++i)
      worst = std::max(worst, std::abs(mom.variance[i] - 4.0 * cfg.field.nu * mom.times[i]) / mom.variance_ci[i].se);
    checks.push_back(make_check("brownian_variance_sigma", worst <= 3.0, worst, 3.0, "max |var - 4 nu t| / se"));
  } else {
    const double target = 2.0 / (2.0 - cfg.field.gamma), tol = num(p, "slope_tolerance");
    checks.push_back(make_check("superdiffusive_exponent", std::abs(fit.slope - target) <= tol, fit.slope, tol,
                                "target " + fmt(target) + ", se " + fmt(fit.slope_se)));
    const auto band = list<double>(p, "ratio_band");
    double rlo = INFINITY, rhi = 0.0;
    for (std::size_t i = 0; i < mom.times.size(); ++i) {
      const double r = mom.second_moment[i] / mom.reference[i];
      rlo = std::min(rlo, r);
      rhi = std::max(rhi, r);
    }
    checks.push_back(make_check("second_moment_ratio_min", rlo >= band[0], rlo, band[0]));
    checks.push_back(make_check("second_moment_ratio_max", rhi <= band[1], rhi, band[1]));
    const auto maps = rg::length_time_maps(rg::from_field(cfg.field));
    double spread = 0.0;
    for (int k = 0; k < 3; ++k) {
      double lo = INFINITY, hi = 0.0;
      for (std::size_t i = 0; i < mom.times.size(); ++i) {
        const double R = maps.R(mom.times[i]);
        const double v = k == 0 ? std::sqrt(mom.second_moment[i]) : (k == 1 ? mom.moment4_root[i] : mom.moment6_root[i]);
        lo = std::min(lo, v / R);
        hi = std::max(hi, v / R);
      }
      spread = std::max(spread, hi / lo);
    }
    checks.push_back(make_check("higher_moment_band", spread <= num(p, "moment_band"), spread, num(p, "moment_band"),
                                "max over p in {2,4,6} of the spread of (E|X|^p)^{1/p} / R(t)"));
  }
  sde::write_moments_csv(mom, art.path("moments.csv"));
  art.stamp("moments.csv");
  sde::write_sidecar(ens, w, art.path("moments.json"));
  auto os = open_out(art.path("higher_moments.csv"));
  os << "t,root2,root4,root6,R\n";
  for (std::size_t i = 0; i < mom.times.size(); ++i)
    os << mom.times[i] << ',' << std::sqrt(mom.second_moment[i]) << ',' << mom.moment4_root[i] << ','
       << mom.moment6_root[i] << ',' << std::sqrt(mom.reference[i] / 4.0) << '\n';
  os << "# slope=" << fit.slope << " slope_se=" << fit.slope_se << '\n';
}

sde::SimConfig exit_config(const Json& p) {
  sde::SimConfig cfg;
  const int level = integer(p, "level");
  cfg.field = field_of(p, integer(p, "scale_min"), level);
  cfg.n_traj = integer(p, "n_traj");
  cfg.bm_seed_base = p.at("bm_seed").get<std::uint64_t>();
  cfg.dt = num(p, "dt");
  cfg.horizon = num(p, "horizon");
  cfg.exit_levels = {level};
  return cfg;
}

void run_exit_tails(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  const auto cfg = exit_config(p);
  const auto ens = sde::simulate_ensemble(cfg);
  const int n = integer(p, "t_points");
  std::vector<double> tg(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    tg[static_cast<std::size_t>(i)] = num(p, "t_min") * std::pow(num(p, "t_max") / num(p, "t_min"), static_cast<double>(i) / (n - 1));
  const auto tail = sde::tail_shape_check(ens, 0, tg);
  checks.push_back(make_check("exit_prob_monotone", tail.monotone, tail.monotone ? 1.0 : 0.0, 1.0));
  checks.push_back(make_check("tail_fit_positive", tail.c_fit > 0.0 && tail.c_fit > 2.0 * tail.c_fit_se, tail.c_fit,
                              2.0 * tail.c_fit_se, "central decade [" + fmt(tail.t_lo) + ", " + fmt(tail.t_hi) + "]"));
  checks.push_back(make_check("tail_dominance", tail.c_dominance > 0.0 && tail.points_in_decade >= 3, tail.c_dominance,
                              0.0, std::to_string(tail.points_in_decade) + " points"));
  sde::write_exit_csv({tail}, art.path("exits.csv"));
  art.stamp("exits.csv");
  sde::write_sidecar(ens, {tail.t_lo, tail.t_hi}, art.path("exits.json"));
}

void run_feynman_kac(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  auto cfg = exit_config(p);
  const int level = integer(p, "level"), r = integer(p, "resolution_exp");
  const grid::TriadicCube cube{level, {0.0, 0.0}};
  const auto c = cfg.field.c_star == 0.0 ? solver::constant_coefficients(cube, r, cfg.field.nu)
                                         : solver::field_coefficients(cfg.field, cube, r, level);
  solver::SolveOptions so;
  so.direct = true;
  const auto w = sde::expected_exit_time_via_pde(c, so);
  const auto ens = sde::simulate_ensemble(cfg);
  const auto x = sde::exit_time_crosscheck(ens, 0, sde::center_value(w));
  const double zmax = num(p, "z_max");
  checks.push_back(make_check("feynman_kac_conclusive", !x.inconclusive, x.exited_fraction, 0.25));
  checks.push_back(make_check("feynman_kac_z", x.pass(zmax), x.z, zmax,
                              "mc " + fmt(x.mc_mean) + " +- " + fmt(x.mc_se) + ", pde " + fmt(x.pde_value)));
  grid::write_csv(w, art.path("exit_time_field.csv"));
  auto os = open_out(art.path("feynman_kac.csv"));
  os << "mc_mean,mc_se,pde_center,z,exited_fraction,dt,sup_drift\n";
  os << x.mc_mean << ',' << x.mc_se << ',' << x.pde_value << ',' << x.z << ',' << x.exited_fraction << ',' << ens.dt
     << ',' << ens.sup_drift << '\n';
  os.close();
  art.stamp("feynman_kac.csv");
}

void run_regularity(const Json& p, Artifacts& art, std::vector<Check>& checks) {
  sde::RegularityOptions opt;
  opt.cube_level = integer(p, "cube_level");
  opt.resolution_exp = integer(p, "resolution_exp");
  opt.depth = integer(p, "depth");
  opt.seed = seed_of(p);
  opt.subgrid_closure = p.at("subgrid_closure").get<bool>();
  const auto nus = list<double>(p, "nu_list");
  const auto rep = sde::regularity_sweep(num(p, "gamma"), num(p, "c_star"), nus, num(p, "alpha"), opt);
  auto alt_opt = opt;
  alt_opt.subgrid_closure = !opt.subgrid_closure;
  const auto alt = sde::regularity_sweep(num(p, "gamma"), num(p, "c_star"), nus, num(p, "alpha"), alt_opt);
  const double gmax = num(p, "growth_max");
  checks.push_back(make_check("holder_growth", rep.growth() <= gmax, rep.growth(), gmax,
                              std::string(opt.subgrid_closure ? "with" : "without") + " sub-grid closure; " +
                                  (alt_opt.subgrid_closure ? "with" : "without") + " closure the growth is " +
                                  fmt(alt.growth()) + (rep.alpha_admissible ? "" : "; alpha above 1 - 3 gamma^{1/2}")));
  auto os = open_out(art.path("regularity.csv"));
  os << "nu,nu_effective,seminorm,alt_nu_effective,alt_seminorm\n";
  for (std::size_t i = 0; i < rep.nu.size(); ++i)
    os << rep.nu[i] << ',' << rep.nu_effective[i] << ',' << rep.seminorm[i] << ',' << alt.nu_effective[i] << ','
       << alt.seminorm[i] << '\n';
  os.close();
  art.stamp("regularity.csv");
}

// ------------------------------------------------------------------ plot data

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("missing column " + name);
    return static_cast<int>(it - header.begin());
  }
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

Table read_table(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot read " + p.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty()) t.header = split(line);
    else t.rows.push_back(split(line));
  }
  return t;
}

void write_dat(const fs::path& out, const Table& t, const std::vector<std::string>& cols, const std::string& note,
               const std::string& group = {}) {
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write " + out.string());
  os << "# " << note << '\n' << "#";
  for (const auto& c : cols) os << ' ' << c;
  os << '\n';
  std::vector<int> idx;
  for (const auto& c : cols) idx.push_back(t.col(c));
  const int g = group.empty() ? -1 : t.col(group);
  std::string last;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (g >= 0) {
      if (r > 0 && t.rows[r][static_cast<std::size_t>(g)] != last) os << "\n\n";
      last = t.rows[r][static_cast<std::size_t>(g)];
    }
    for (std::size_t k = 0; k < idx.size(); ++k) os << (k ? " " : "") << t.rows[r][static_cast<std::size_t>(idx[k])];
    os << '\n';
  }
}

}  // namespace

// ------------------------------------------------------------------ public API

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"field-moments",    "cg-properties", "diffusivity-ladder",
                                              "recursion-vs-closed-form", "variance-scaling", "exit-tails",
                                              "feynman-kac",      "regularity-sweep"};
  return names;
}

Json default_params(const std::string& experiment) {
  const auto& t = defaults_table();
  const auto it = t.find(experiment);
  if (it == t.end()) throw ConfigError("unknown experiment: " + experiment);
  return it->second;
}

Json print_defaults() {
  Json out = Json::object();
  for (const auto& name : experiment_names())
    out[name] = Json{{"experiment", name}, {"params", default_params(name)}, {"output_dir", "out"}, {"workers", 1}};
  return out;
}

ExperimentConfig validate_config(const Json& raw) {
  if (!raw.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : raw.items())
    if (k != "experiment" && k != "params" && k != "output_dir" && k != "workers") throw ConfigError("unknown key: " + k);
  if (!raw.contains("experiment") || !raw.at("experiment").is_string()) throw ConfigError("experiment: required string");
  ExperimentConfig c;
  c.experiment = raw.at("experiment").get<std::string>();
  const Json defaults = default_params(c.experiment);
  c.params = defaults;
  if (raw.contains("params")) {
    const Json& p = raw.at("params");
    if (!p.is_object()) throw ConfigError("params: must be an object");
    for (const auto& [k, v] : p.items()) {
      if (!defaults.contains(k)) throw ConfigError("params." + k + ": unknown key for " + c.experiment);
      c.params[k] = coerce(defaults.at(k), v, "params." + k);
    }
  }
  if (raw.contains("output_dir")) {
    if (!raw.at("output_dir").is_string() || raw.at("output_dir").get<std::string>().empty())
      throw ConfigError("output_dir: must be a nonempty string");
    c.output_dir = raw.at("output_dir").get<std::string>();
  }
  if (raw.contains("workers")) {
    if (!raw.at("workers").is_number_integer() || raw.at("workers").get<long long>() < 1)
      throw ConfigError("workers: must be a positive integer");
    c.workers = raw.at("workers").get<int>();
  }
  if (!c.params.at("seed").is_number_integer()) throw ConfigError("params.seed: must be an integer");
  check_params(c.experiment, c.params);
  return c;
}

ExperimentConfig validate_config(const std::string& raw_json) {
  Json j;
  try {
    j = Json::parse(raw_json);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return validate_config(j);
}

Json to_json(const ExperimentConfig& c) {
  return Json{{"experiment", c.experiment}, {"params", c.params}, {"output_dir", c.output_dir}, {"workers", c.workers}};
}

std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2); }

void apply_seed_override(ExperimentConfig& c) {
  const char* env = std::getenv("SUPERLAB_SEED");
  if (!env || !*env) return;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(env, &pos);
  } catch (const std::exception&) {
    throw ConfigError(std::string("SUPERLAB_SEED: not an unsigned integer: ") + env);
  }
  if (pos != std::string(env).size()) throw ConfigError(std::string("SUPERLAB_SEED: not an unsigned integer: ") + env);
  c.params["seed"] = static_cast<std::uint64_t>(v);
}

bool RunManifest::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

Json RunManifest::to_json() const {
  Json j;
  j["tool"] = "superlab";
  j["version"] = tool_version;
  j["experiment"] = config.experiment;
  j["params"] = config.params;
  Json cs = Json::array();
  for (const auto& c : checks)
    cs.push_back(Json{{"name", c.name}, {"pass", c.pass}, {"measured", c.measured}, {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  j["checks"] = cs;
  j["all_pass"] = all_pass();
  j["artifacts"] = artifacts;
  j["timing_file"] = "timing.json";
  return j;
}

namespace {
std::vector<std::string> plotdata(const std::string& dir);
}  // namespace

RunManifest run_experiment(const ExperimentConfig& config) {
  check_params(config.experiment, config.params);
  fs::create_directories(config.output_dir);
  omp_set_num_threads(config.workers);
  RunManifest man;
  man.config = config;
  Artifacts art(config.output_dir, config);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto& e = config.experiment;
    const Json& p = config.params;
    if (e == "field-moments") run_field_moments(p, art, man.checks);
    else if (e == "cg-properties") run_cg_properties(p, art, man.checks);
    else if (e == "diffusivity-ladder") run_ladder(p, art, man.checks);
    else if (e == "recursion-vs-closed-form") run_recursion(p, art, man.checks);
    else if (e == "variance-scaling") run_variance(p, art, man.checks);
    else if (e == "exit-tails") run_exit_tails(p, art, man.checks);
    else if (e == "feynman-kac") run_feynman_kac(p, art, man.checks);
    else if (e == "regularity-sweep") run_regularity(p, art, man.checks);
    else throw ConfigError("unknown experiment: " + e);
    for (const auto& d : plotdata(config.output_dir)) art.path(fs::path(d).filename().string());
  } catch (...) {
    art.cleanup();
    throw;
  }
  man.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  man.artifacts = art.names();
  std::sort(man.artifacts.begin(), man.artifacts.end());
  {
    std::ofstream os(fs::path(config.output_dir) / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest");
    os << man.to_json().dump(2) << '\n';
  }
  {
    std::ofstream os(fs::path(config.output_dir) / "timing.json");
    os << Json{{"wall_clock_s", man.wall_clock_s}, {"workers", config.workers}}.dump(2) << '\n';
  }
  return man;
}

namespace {

std::vector<std::string> plotdata(const std::string& dir) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw InputError("not a directory: " + dir);
  std::vector<std::string> out;
  const auto emit = [&](const char* csv, const char* dat, const std::vector<std::string>& cols, const std::string& note,
                        const std::string& group = {}) {
    if (!fs::exists(d / csv)) return;
    write_dat(d / dat, read_table(d / csv), cols, note, group);
    out.push_back((d / dat).string());
  };
  emit("ladder.csv", "ladder_plot.dat", {"m", "s_measured", "ci_lo", "ci_hi", "s_closed_form"}, "linear axes");
  emit("moments.csv", "variance_plot.dat", {"t", "variance", "ci_lo", "ci_hi"}, "loglog axes");
  emit("exits.csv", "survival_plot.dat", {"t", "exit_prob"}, "semilog-x axes, one block per level", "level");
  emit("recursion.csv", "recursion_plot.dat", {"m", "s_recursion", "s_closed_form"}, "semilog-y axes");
  emit("regularity.csv", "regularity_plot.dat", {"nu", "seminorm"}, "semilog-x axes");
  return out;
}

}  // namespace

std::vector<std::string> emit_plotdata(const std::string& dir) {
  auto out = plotdata(dir);
  if (out.empty()) throw InputError("no plottable artifacts in " + dir);
  return out;
}

int run_main(int argc, char** argv) {
  CLI::App app{"superlab: multiscale drift-diffusion experiments"};
  bool defaults_flag = false;
  app.add_flag("--print-defaults", defaults_flag, "print default configs");
  std::string config_path, out_dir, plot_dir;
  int workers = 0;
  auto* run = app.add_subcommand("run", "run an experiment");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "output directory");
  auto* val = app.add_subcommand("validate", "validate a config");
  val->add_option("config", config_path, "experiment config (JSON)")->required();
  app.add_subcommand("print-defaults", "print default configs");
  auto* plot = app.add_subcommand("plot", "write plot-ready tables for an artifact directory");
  plot->add_option("dir", plot_dir, "artifact directory")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kPass : kConfigError;
  }
  if (!defaults_flag && app.get_subcommands().empty()) {
    std::cerr << app.help();
    return kConfigError;
  }
  try {
    if (defaults_flag || app.got_subcommand("print-defaults")) {
      std::cout << print_defaults().dump(2) << '\n';
      return kPass;
    }
    if (app.got_subcommand("plot")) {
      for (const auto& f : emit_plotdata(plot_dir)) std::cout << f << '\n';
      return kPass;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  ExperimentConfig cfg;
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = validate_config(ss.str());
    apply_seed_override(cfg);
    if (workers > 0) cfg.workers = workers;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  if (app.got_subcommand("validate")) {
    std::cout << serialize(cfg) << '\n';
    return kPass;
  }
  try {
    const auto man = run_experiment(cfg);
    for (const auto& c : man.checks)
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " measured=" << c.measured << " tolerance=" << c.tolerance
                << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
    std::cout << "wall_clock_s=" << man.wall_clock_s << " artifacts=" << cfg.output_dir << '\n';
    return man.all_pass() ? kPass : kCheckFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace superlab::cli
