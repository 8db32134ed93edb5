// Serial vs OpenMP GEMM. Shapes follow the model: the embedding and value
// projections (J·F rows × C_e), joint-map application (J×J · J×C_e·F) and the
// temporal map (F×F · F×J·C_e) on the default 25-joint, 64-frame config.

#include <benchmark/benchmark.h>

#include <vector>

#include "fmv2/kernels.hpp"
#include "fmv2/rng.hpp"

namespace {

using fmv2::kernels::Accumulate;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  fmv2::Xorshift64Star rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <auto Kernel>
void run_nn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m * k, 1), b = random_matrix(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n, Accumulate::kNo);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(m * k * n),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <auto Kernel>
void run_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m * k, 3), b = random_matrix(m * n, 4);
  std::vector<double> c(k * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n, Accumulate::kNo);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(m * k * n),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({1600, 3, 36});    // embedding
  b->Args({1600, 36, 36});   // value projection
  b->Args({25, 25, 2304});   // joint map · V
  b->Args({64, 64, 900});    // temporal map · V_t
  b->Args({256, 256, 256});  // square reference
}

}  // namespace

BENCHMARK(run_nn<fmv2::kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(shapes);
BENCHMARK(run_nn<fmv2::kernels::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Apply(shapes);
BENCHMARK(run_tn<fmv2::kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(shapes);
BENCHMARK(run_tn<fmv2::kernels::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Apply(shapes);

BENCHMARK_MAIN();
