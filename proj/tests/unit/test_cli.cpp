#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "superlab/cli.hpp"
#include "superlab/common.hpp"

using namespace superlab;
using namespace superlab::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("superlab_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> rows(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> r;
    std::stringstream ss(line);
    std::string item;
    const char sep = line.find(',') != std::string::npos ? ',' : ' ';
    while (std::getline(ss, item, sep)) r.push_back(item);
    out.push_back(r);
  }
  return out;
}

int run_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  static std::string prog = "superlab";
  argv.push_back(prog.data());
  for (auto& a : args) argv.push_back(a.data());
  return run_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("minimal config gets defaults") {
  const auto c = validate_config(R"({"experiment":"recursion-vs-closed-form","params":{"gamma":0.1}})");
  CHECK(c.experiment == "recursion-vs-closed-form");
  CHECK(c.params.at("gamma").get<double>() == 0.1);
  CHECK(c.params.at("c_star").get<double>() == 1.0);
  CHECK(c.params.at("m_lo").get<int>() == -20);
  CHECK(c.output_dir == "out");
  CHECK(c.workers == 1);
}

TEST_CASE("invalid configs are rejected with field-level messages") {
  CHECK_THROWS_AS(validate_config(R"({"experiment":"recursion-vs-closed-form","params":{"gamma":0.5}})"), ConfigError);
  CHECK_THROWS_AS(validate_config(R"({"experiment":"no-such-thing"})"), ConfigError);
  CHECK_THROWS_AS(validate_config(R"({"experiment":"feynman-kac","params":{"n_traj":"many"}})"), ConfigError);
  CHECK_THROWS_AS(validate_config(R"({"experiment":"feynman-kac","params":{"bogus":1}})"), ConfigError);
  CHECK_THROWS_AS(validate_config(R"({"experiment":"feynman-kac","extra":1})"), ConfigError);
  CHECK_THROWS_AS(validate_config(R"({"experiment":"feynman-kac","workers":0})"), ConfigError);
  CHECK_THROWS_AS(validate_config("{not json"), ConfigError);
  try {
    validate_config(R"({"experiment":"diffusivity-ladder","params":{"n_seeds":2.5}})");
    FAIL("accepted a fractional count");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("params.n_seeds") != std::string::npos);
  }
}

TEST_CASE("config round trip") {
  for (const auto& name : experiment_names()) {
    const auto a = validate_config(Json{{"experiment", name}, {"output_dir", "x"}, {"workers", 2}});
    const auto b = validate_config(serialize(a));
    CHECK(a == b);
  }
  const auto d = print_defaults();
  CHECK(d.size() == experiment_names().size());
}

TEST_CASE("seed override from the environment") {
  auto c = validate_config(R"({"experiment":"exit-tails"})");
  setenv("SUPERLAB_SEED", "4242", 1);
  apply_seed_override(c);
  CHECK(c.params.at("seed").get<std::uint64_t>() == 4242);
  setenv("SUPERLAB_SEED", "x1", 1);
  CHECK_THROWS_AS(apply_seed_override(c), ConfigError);
  unsetenv("SUPERLAB_SEED");
}

TEST_CASE("recursion experiment runs fast and reproducibly") {
  auto c = validate_config(R"({"experiment":"recursion-vs-closed-form"})");
  c.output_dir = scratch("rec").string();
  const auto t0 = std::chrono::steady_clock::now();
  const auto man = run_experiment(c);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
  CHECK(man.all_pass());
  bool found = false;
  for (const auto& k : man.checks) found = found || (k.name == "recursion_identity" && k.pass);
  CHECK(found);
  const auto first = slurp(fs::path(c.output_dir) / "recursion.csv");
  const auto manifest = slurp(fs::path(c.output_dir) / "manifest.json");
  run_experiment(c);
  CHECK(slurp(fs::path(c.output_dir) / "recursion.csv") == first);
  CHECK(slurp(fs::path(c.output_dir) / "manifest.json") == manifest);
  const auto j = Json::parse(manifest);
  CHECK(j.at("checks").size() == man.checks.size());
  for (const auto& k : j.at("checks")) {
    CHECK(k.contains("tolerance"));
    CHECK(k.at("pass").is_boolean());
  }
  CHECK(fs::exists(fs::path(c.output_dir) / "timing.json"));
  fs::remove_all(c.output_dir);
}

TEST_CASE("plot data") {
  const auto empty = scratch("empty");
  fs::create_directories(empty);
  CHECK_THROWS_AS(emit_plotdata(empty.string()), InputError);
  CHECK_THROWS(emit_plotdata((empty / "missing").string()));

  auto c = validate_config(R"({"experiment":"diffusivity-ladder","params":{"scales":[0,1],"n_seeds":8,"resolution_exp":3,
                               "bootstrap_resamples":50}})");
  c.output_dir = scratch("ladder").string();
  run_experiment(c);
  const auto lad = rows(fs::path(c.output_dir) / "ladder_plot.dat");
  REQUIRE(lad.size() == 2);
  CHECK(lad[0].size() == 5);

  auto v = validate_config(R"({"experiment":"variance-scaling","params":{"c_star":0.0,"n_traj":200,
                               "bootstrap_resamples":50}})");
  v.output_dir = scratch("var").string();
  run_experiment(v);
  const auto csv = rows(fs::path(v.output_dir) / "moments.csv");
  const auto dat = rows(fs::path(v.output_dir) / "variance_plot.dat");
  REQUIRE(dat.size() + 1 == csv.size());
  for (std::size_t i = 0; i < dat.size(); ++i) {
    CHECK(dat[i][0] == csv[i + 1][0]);
    CHECK(dat[i][1] == csv[i + 1][4]);
    CHECK(dat[i][2] == csv[i + 1][5]);
    CHECK(dat[i][3] == csv[i + 1][6]);
  }
  CHECK(slurp(fs::path(v.output_dir) / "variance_plot.dat").find("loglog") != std::string::npos);
  fs::remove_all(empty);
  fs::remove_all(c.output_dir);
  fs::remove_all(v.output_dir);
}

TEST_CASE("failed runs leave no partial artifacts") {
  auto c = validate_config(R"({"experiment":"feynman-kac","params":{"c_star":0.0,"n_traj":100,"resolution_exp":3}})");
  c.output_dir = scratch("fail").string();
  // a directory in place of a late artifact makes the run fail after earlier files were written
  fs::create_directories(fs::path(c.output_dir) / "feynman_kac.csv" / "blocker");
  CHECK_THROWS(run_experiment(c));
  CHECK(!fs::exists(fs::path(c.output_dir) / "exit_time_field.csv"));
  CHECK(!fs::exists(fs::path(c.output_dir) / "manifest.json"));
  c.params["horizon"] = -1.0;
  CHECK_THROWS_AS(run_experiment(c), ConfigError);
  fs::remove_all(c.output_dir);
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cmd");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"experiment":"recursion-vs-closed-form"})";
    std::ofstream(dir / "bad.json") << R"({"experiment":"nope"})";
  }
  CHECK(run_cli({"validate", (dir / "ok.json").string()}) == kPass);
  CHECK(run_cli({"validate", (dir / "bad.json").string()}) == kConfigError);
  CHECK(run_cli({"run", (dir / "bad.json").string()}) == kConfigError);
  CHECK(run_cli({"run", (dir / "ok.json").string(), "--out", (dir / "o").string(), "--workers", "1"}) == kPass);
  CHECK(fs::exists(dir / "o" / "manifest.json"));
  CHECK(run_cli({"plot", (dir / "o").string()}) == kPass);
  CHECK(run_cli({"plot", (dir / "nothing").string()}) == kRuntimeError);
  CHECK(run_cli({"print-defaults"}) == kPass);
  CHECK(run_cli({"--print-defaults"}) == kPass);
  CHECK(run_cli({}) == kConfigError);
  fs::remove_all(dir);
}
