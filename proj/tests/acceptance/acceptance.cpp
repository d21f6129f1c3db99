#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "superlab/cli.hpp"
#include "superlab/common.hpp"
#include "superlab/sde.hpp"
#include "superlab/solver.hpp"

using namespace superlab;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void need(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!ok) notes.push_back(what);
  }
};

struct Criterion {
  int id;
  std::string title;
  double runtime_limit_s;
  std::function<void(Verdict&)> body;
};

fs::path g_root;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

cli::RunManifest run(const std::string& tag, const std::string& experiment, const cli::Json& params, int workers = 1) {
  auto c = cli::validate_config(cli::Json{{"experiment", experiment}, {"params", params}, {"workers", workers}});
  c.output_dir = (g_root / tag).string();
  fs::remove_all(c.output_dir);
  return cli::run_experiment(c);
}

// every check of the manifest must pass; the names in `required` must be present
void require_checks(Verdict& v, const cli::RunManifest& m, const std::string& label,
                    const std::vector<std::string>& required = {}) {
  std::set<std::string> seen;
  for (const auto& k : m.checks) {
    seen.insert(k.name);
    v.need(k.pass, label + ":" + k.name + " measured " + fmt(k.measured) + " tol " + fmt(k.tolerance) +
                       (k.detail.empty() ? "" : " (" + k.detail + ")"));
  }
  for (const auto& r : required) v.need(seen.count(r) > 0, label + ": missing check " + r);
}

bool same_tree(const fs::path& a, const fs::path& b, const std::set<std::string>& skip) {
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a))
    if (!skip.count(e.path().filename().string())) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (!skip.count(e.path().filename().string())) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb || na.empty()) return false;
  for (const auto& n : na)
    if (slurp(a / n) != slurp(b / n)) return false;
  return true;
}

std::vector<Criterion> criteria() {
  std::vector<Criterion> out;

  out.push_back({1, "exact RG identity and K_gamma bounds", 1.0, [](Verdict& v) {
                   const auto m = run("c01", "recursion-vs-closed-form", cli::Json::object());
                   require_checks(v, m, "recursion", {"recursion_identity", "k_gamma_lower", "k_gamma_upper"});
                 }});

  out.push_back({2, "constant-field coarse-graining exactness", 10.0, [](Verdict& v) {
                   const auto m = run("c02", "cg-properties", {{"suites", cli::Json::array({"constant"})}});
                   require_checks(v, m, "constant", {"constant_field_block_matrix", "constant_field_J_zero"});
                 }});

  out.push_back({3, "structural inequality battery over 50 fields", 1800.0, [](Verdict& v) {
                   const auto m = run("c03", "cg-properties", {{"suites", cli::Json::array({"battery"})}, {"n_fields", 50}});
                   require_checks(v, m, "battery",
                                  {"loewner_chain", "symmetric_part_bound", "subadditivity_defect",
                                   "adjoint_redundancy", "homogeneity", "J_quadratic_form_consistency"});
                 }});

  out.push_back({4, "laminate oracle on 243^2", 60.0, [](Verdict& v) {
                   const auto m = run("c04", "cg-properties", {{"suites", cli::Json::array({"laminate"})}, {"laminate_resolution_exp", 5}});
                   require_checks(v, m, "laminate", {"laminate_across", "laminate_along"});
                 }});

  out.push_back({5, "diffusivity ladder m = 0..4, 32 seeds, 243^2", 3600.0, [](Verdict& v) {
                   const auto m = run("c05", "diffusivity-ladder", cli::Json::object(), omp_get_num_procs());
                   require_checks(v, m, "ladder",
                                  {"ladder_ratio_m0", "ladder_ratio_m1", "ladder_ratio_m2", "ladder_ratio_m3",
                                   "ladder_ratio_m4", "annealed_k_m0", "annealed_k_m4"});
                 }});

  out.push_back({6, "Brownian variance baseline", 1800.0, [](Verdict& v) {
                   const auto m = run("c06", "variance-scaling", {{"c_star", 0.0}, {"nu", 0.7}, {"n_traj", 10000}});
                   require_checks(v, m, "brownian", {"brownian_exponent", "brownian_variance_sigma"});
                 }});

  out.push_back({7, "superdiffusive variance scaling", 3600.0, [](Verdict& v) {
                   const auto m = run("c07", "variance-scaling", {{"n_traj", 10000}, {"decades", 3.0}});
                   require_checks(v, m, "quenched",
                                  {"superdiffusive_exponent", "second_moment_ratio_min", "second_moment_ratio_max",
                                   "fit_window_decades"});
                 }});

  out.push_back({8, "Feynman-Kac exit time cross-check", 1800.0, [](Verdict& v) {
                   const auto b = run("c08_brownian", "feynman-kac", {{"c_star", 0.0}, {"n_traj", 10000}});
                   require_checks(v, b, "brownian", {"feynman_kac_z", "feynman_kac_conclusive"});
                   const auto q = run("c08_quenched", "feynman-kac", {{"gamma", 0.25}, {"n_traj", 10000}});
                   require_checks(v, q, "quenched", {"feynman_kac_z", "feynman_kac_conclusive"});
                 }});

  out.push_back({9, "exit-tail shape", 1800.0, [](Verdict& v) {
                   const auto m = run("c09", "exit-tails", cli::Json::object());
                   require_checks(v, m, "tails", {"exit_prob_monotone", "tail_fit_positive", "tail_dominance"});
                 }});

  out.push_back({10, "Besov machinery", 60.0, [](Verdict& v) {
                   const auto m = run("c10", "cg-properties", {{"suites", cli::Json::array({"besov"})}, {"besov_samples", 20}});
                   require_checks(v, m, "besov",
                                  {"besov_constants_vanish", "besov_homogeneity", "besov_double_sum_ratio_min",
                                   "besov_double_sum_ratio_max", "neg_besov_direct_sum"});
                 }});

  out.push_back({11, "Holder seminorm uniform in nu", 1800.0, [](Verdict& v) {
                   const auto m = run("c11", "regularity-sweep", cli::Json::object());
                   require_checks(v, m, "regularity", {"holder_growth"});
                 }});

  out.push_back({12, "determinism across reruns and worker counts", 60.0, [](Verdict& v) {
                   const cli::Json small{{"seed", 2024}, {"scales", cli::Json::array({0, 1})}, {"n_seeds", 8}, {"resolution_exp", 3},
                                         {"bootstrap_resamples", 200}};
                   run("c12_a", "diffusivity-ladder", small, 1);
                   run("c12_b", "diffusivity-ladder", small, 1);
                   v.need(same_tree(g_root / "c12_a", g_root / "c12_b", {"timing.json"}), "rerun with workers = 1 differs");
                   const cli::Json tails{{"n_traj", 2000}};
                   run("c12_c", "exit-tails", tails, 1);
                   run("c12_d", "exit-tails", tails, 1);
                   v.need(same_tree(g_root / "c12_c", g_root / "c12_d", {"timing.json"}), "exit-tails rerun differs");

                   field::FieldParams p;
                   p.gamma = 0.25;
                   p.c_star = 1.0;
                   p.nu = 1.0;
                   p.seed = 77;
                   p.scale_min = -3;
                   p.scale_max = 1;
                   const grid::TriadicCube cube{1, {0.0, 0.0}};
                   std::vector<solver::CoefficientGrid> grids;
                   for (int threads : {1, 2, 3, 8}) {
                     omp_set_num_threads(threads);
                     grids.push_back(solver::field_coefficients(p, cube, 5, 1));
                   }
                   omp_set_num_threads(1);
                   for (const auto& g : grids)
                     v.need(g.kappa == grids[0].kappa && g.nu == grids[0].nu, "field grid depends on thread count");

                   sde::SimConfig cfg;
                   cfg.field = p;
                   cfg.n_traj = 500;
                   cfg.horizon = 0.5;
                   cfg.checkpoints = {0.25, 0.5};
                   cfg.exit_levels = {0};
                   omp_set_num_threads(4);
                   const auto par = sde::simulate_ensemble(cfg);
                   omp_set_num_threads(1);
                   cfg.parallel = false;
                   const auto ser = sde::simulate_ensemble(cfg);
                   v.need(par.positions == ser.positions && par.exit_times == ser.exit_times,
                          "parallel ensemble differs from the serial reference");
                 }});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"superlab acceptance criteria"};
  std::vector<int> only;
  std::string root = (fs::temp_directory_path() / "superlab_acceptance").string();
  app.add_option("--only", only, "criterion ids to run");
  app.add_option("--out", root, "directory for experiment outputs");
  CLI11_PARSE(app, argc, argv);
  g_root = root;
  fs::create_directories(g_root);

  int failed = 0, ran = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.need(false, std::string("exception: ") + e.what());
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    v.need(dt <= c.runtime_limit_s, "runtime " + fmt(dt) + " s exceeds " + fmt(c.runtime_limit_s) + " s");
    ++ran;
    failed += !v.pass;
    std::printf("%s  criterion %2d  %-48s %9.2f s\n", v.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), dt);
    for (const auto& n : v.notes) std::printf("        %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
