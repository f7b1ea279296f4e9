// Serial reference versus OpenMP batch gradient over the same windows.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "noderes/plant.hpp"
#include "noderes/training.hpp"

using namespace noderes;

namespace {

struct Fixture {
  Dataset data;
  ResidualModel model;
  PreparedData prepared;
  std::vector<BatchWindow> windows;
  TrainConfig cfg;

  Fixture(const char* residual, std::size_t width, Method method) {
    data = generate(PlantConfig{}, FaultScenario{}, 2000, 0.2, 1);
    model = build_model(builtin_spec(residual), std::vector<std::size_t>{width, width}, 2);
    model.normalization = data.stats();
    prepared = prepare(model, data);
    cfg.solver = SolverKind::make(method, 0.2);
    cfg.seq_len = 400;
    const auto offsets = make_batches(data.size(), cfg.seq_len, 8, 1, 3).front();
    for (std::size_t off : offsets) windows.push_back({off, std::vector<double>(model.state_count(), 0.0)});
  }
};

template <bool Parallel>
void BM_BatchGradient(benchmark::State& state) {
  static const char* names[] = {"r1", "r2", "r3"};
  const Fixture f(names[state.range(0)], static_cast<std::size_t>(state.range(1)), Method::RK4);
  for (auto _ : state) {
    auto r = Parallel ? batch_gradient_parallel(f.model, f.prepared, f.windows, f.cfg)
                      : batch_gradient_serial(f.model, f.prepared, f.windows, f.cfg);
    benchmark::DoNotOptimize(r.grad.data());
  }
  state.counters["threads"] = Parallel ? omp_get_max_threads() : 1;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.windows.size()));
}

}  // namespace

BENCHMARK(BM_BatchGradient<false>)->Name("batch_gradient/serial")->Args({0, 16})->Args({2, 16})->Args({0, 128})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<true>)->Name("batch_gradient/openmp")->Args({0, 16})->Args({2, 16})->Args({0, 128})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
