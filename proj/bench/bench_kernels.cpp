#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "superlab/rng.hpp"
#include "superlab/sde.hpp"
#include "superlab/solver.hpp"

using namespace superlab;

namespace {

field::FieldParams bench_field() {
  field::FieldParams p;
  p.gamma = 0.25;
  p.c_star = 1.0;
  p.nu = 1.0;
  p.seed = 3;
  p.scale_min = -3;
  p.scale_max = 1;
  return p;
}

struct StencilCase {
  solver::Stencil9 S;
  std::vector<double> x, y;
  explicit StencilCase(int r) {
    S = solver::dirichlet_operator(solver::field_coefficients(bench_field(), {1, {0.0, 0.0}}, r, 1));
    const std::size_t N = static_cast<std::size_t>(S.n) * S.n;
    x.resize(N);
    y.resize(N);
    const rng::Stream st(1);
    for (std::size_t k = 0; k < N; ++k) x[k] = st.normal(k);
  }
};

sde::SimConfig ensemble_config() {
  sde::SimConfig cfg;
  cfg.field = bench_field();
  cfg.n_traj = 256;
  cfg.horizon = 0.25;
  cfg.checkpoints = {0.125, 0.25};
  return cfg;
}

}  // namespace

static void BM_StencilSerial(benchmark::State& state) {
  StencilCase c(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    c.S.apply_serial(c.x.data(), c.y.data());
    benchmark::DoNotOptimize(c.y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(c.x.size()));
}
BENCHMARK(BM_StencilSerial)->Arg(4)->Arg(5)->Arg(6);

static void BM_StencilParallel(benchmark::State& state) {
  StencilCase c(static_cast<int>(state.range(0)));
  omp_set_num_threads(omp_get_num_procs());
  for (auto _ : state) {
    c.S.apply(c.x.data(), c.y.data(), true);
    benchmark::DoNotOptimize(c.y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(c.x.size()));
}
BENCHMARK(BM_StencilParallel)->Arg(4)->Arg(5)->Arg(6);

static void BM_EnsembleSerial(benchmark::State& state) {
  auto cfg = ensemble_config();
  cfg.parallel = false;
  for (auto _ : state) benchmark::DoNotOptimize(sde::simulate_ensemble(cfg));
  state.SetItemsProcessed(state.iterations() * cfg.n_traj);
}
BENCHMARK(BM_EnsembleSerial)->Unit(benchmark::kMillisecond);

static void BM_EnsembleParallel(benchmark::State& state) {
  const auto cfg = ensemble_config();
  omp_set_num_threads(omp_get_num_procs());
  for (auto _ : state) benchmark::DoNotOptimize(sde::simulate_ensemble(cfg));
  state.SetItemsProcessed(state.iterations() * cfg.n_traj);
}
BENCHMARK(BM_EnsembleParallel)->Unit(benchmark::kMillisecond);

static void BM_FieldSampling(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(solver::field_coefficients(bench_field(), {1, {0.0, 0.0}}, 4, 1));
  omp_set_num_threads(omp_get_num_procs());
}
BENCHMARK(BM_FieldSampling)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
