#include <benchmark/benchmark.h>

#include <vector>

#include "relief/kernels.hpp"
#include "relief/tensor.hpp"

namespace k = relief::kernels;
using relief::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  relief::Rng rng(seed);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Ring graph with a chord every fourth node.
struct Csr {
  std::vector<std::size_t> offsets{0}, indices;
  explicit Csr(std::size_t n) {
    for (std::size_t v = 0; v < n; ++v) {
      indices.push_back((v + n - 1) % n);
      indices.push_back((v + 1) % n);
      if (v % 4 == 0) indices.push_back((v + n / 2) % n);
      offsets.push_back(indices.size());
    }
  }
  k::CsrView view() const { return {offsets, indices}; }
};

template <Matrix (*F)(const Matrix&, const Matrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  k::set_threads(static_cast<int>(state.range(1)));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
  k::set_threads(1);
}

template <Matrix (*F)(const k::CsrView&, const Matrix&)>
void bm_neighbor_sum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  k::set_threads(static_cast<int>(state.range(1)));
  const Csr g(n);
  const Matrix h = random_matrix(n, 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(F(g.view(), h));
  k::set_threads(1);
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int n : {32, 128, 256})
    for (int t : {1, 2, 4}) b->Args({n, t});
}

}  // namespace

BENCHMARK(bm_matmul<k::serial::matmul>)->Apply(sizes);
BENCHMARK(bm_matmul<k::omp::matmul>)->Apply(sizes);
BENCHMARK(bm_matmul<k::serial::matmul_tn>)->Apply(sizes);
BENCHMARK(bm_matmul<k::omp::matmul_tn>)->Apply(sizes);
BENCHMARK(bm_matmul<k::serial::matmul_nt>)->Apply(sizes);
BENCHMARK(bm_matmul<k::omp::matmul_nt>)->Apply(sizes);
BENCHMARK(bm_neighbor_sum<k::serial::neighbor_sum>)->Args({1000, 1})->Args({10000, 1});
BENCHMARK(bm_neighbor_sum<k::omp::neighbor_sum>)->Args({1000, 2})->Args({10000, 2})->Args({10000, 4});

BENCHMARK_MAIN();
