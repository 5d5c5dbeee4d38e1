#pragma once

// Dense and sparse inner loops. Each kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`; both accumulate
// every output element in the same order, so their results are bit-identical.
// The unqualified entry points dispatch on the configured thread count.

#include <cstddef>
#include <functional>
#include <span>

#include "relief/tensor.hpp"

namespace relief::kernels {

/// Compressed adjacency: neighbors of v are indices[offsets[v] .. offsets[v+1]).
struct CsrView {
  std::span<const std::size_t> offsets;
  std::span<const std::size_t> indices;
};

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);     // a·b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ·b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a·bᵀ
Matrix neighbor_sum(const CsrView& adj, const Matrix& h);
}  // namespace serial

namespace omp {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix neighbor_sum(const CsrView& adj, const Matrix& h);
}  // namespace omp

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix neighbor_sum(const CsrView& adj, const Matrix& h);

/// Thread budget for the dispatching kernels and for per-graph loops.
/// 1 (the default) forces the serial path.
void set_threads(int n);
int threads();
/// True when called from inside an active OpenMP parallel region.
bool in_parallel();

/// Runs fn(0..n-1) across the thread budget. The first exception thrown by
/// any iteration is rethrown once the loop finishes.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace relief::kernels
