// Serial vs OpenMP kernels: dense products and candidate distance scans.

#include <random>

#include <benchmark/benchmark.h>

#include "stalegraph/kernels.hpp"
#include "stalegraph/matrix.hpp"

using namespace stalegraph;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

void BM_Gemm(benchmark::State& state, kernels::Exec exec) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 64, 1), b = random_matrix(64, 64, 2);
  Matrix c(n, 64);
  for (auto _ : state) {
    kernels::gemm(exec, a, b, c);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * 64 * 64));
}

void BM_Distances(benchmark::State& state, kernels::Exec exec) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix pts = random_matrix(n, 32, 3), q = random_matrix(1, 32, 4);
  std::vector<double> out(n);
  for (auto _ : state) {
    kernels::squared_distances(exec, q.row(0), pts, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}

}  // namespace

BENCHMARK_CAPTURE(BM_Gemm, serial, kernels::Exec::serial)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_Gemm, parallel, kernels::Exec::parallel)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_Distances, serial, kernels::Exec::serial)->Arg(1000)->Arg(100000);
BENCHMARK_CAPTURE(BM_Distances, parallel, kernels::Exec::parallel)->Arg(1000)->Arg(100000);

BENCHMARK_MAIN();
