#include "relief/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace relief::kernels {

namespace {

std::atomic<int> g_threads{1};

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 14;

void check_matmul(const Matrix& a, const Matrix& b, std::size_t a_inner, std::size_t b_inner,
                  const char* what) {
  if (a_inner != b_inner) {
    throw ShapeError(std::string(what) + ": inner dims " + std::to_string(a_inner) + " vs " +
                     std::to_string(b_inner) + " (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

// Row kernels shared by both variants; one call fills one output row.
inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  double* o = out.data() + i * n;
  const double* ar = a.data() + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ar[p];
    if (av == 0.0) continue;
    const double* br = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
  }
}

inline void matmul_tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  // out row i = Σ_p a(p, i) · b row p
  const std::size_t m = a.cols();
  const std::size_t n = b.cols();
  double* o = out.data() + i * n;
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double av = a.data()[p * m + i];
    if (av == 0.0) continue;
    const double* br = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
  }
}

inline void matmul_nt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t k = a.cols();
  const double* ar = a.data() + i * k;
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* br = b.data() + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
    out(i, j) = s;
  }
}

inline void neighbor_row(const CsrView& adj, const Matrix& h, Matrix& out, std::size_t v) {
  double* o = out.data() + v * h.cols();
  for (std::size_t e = adj.offsets[v]; e < adj.offsets[v + 1]; ++e) {
    const double* src = h.data() + adj.indices[e] * h.cols();
    for (std::size_t j = 0; j < h.cols(); ++j) o[j] += src[j];
  }
}

void check_csr(const CsrView& adj, const Matrix& h) {
  if (adj.offsets.size() != h.rows() + 1) {
    throw ShapeError("neighbor_sum: adjacency has " + std::to_string(adj.offsets.size() - 1) +
                     " nodes, features have " + std::to_string(h.rows()));
  }
}

bool use_parallel(std::size_t work) {
  return g_threads.load() > 1 && work >= kParallelWork && !in_parallel();
}

}  // namespace

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) matmul_tn_row(a, b, out, i);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_nt_row(a, b, out, i);
  return out;
}

Matrix neighbor_sum(const CsrView& adj, const Matrix& h) {
  check_csr(adj, h);
  Matrix out(h.rows(), h.cols());
  for (std::size_t v = 0; v < h.rows(); ++v) neighbor_row(adj, h, out, v);
  return out;
}

}  // namespace serial

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for num_threads(std::max(1, g_threads.load())) schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  Matrix out(a.cols(), b.cols());
  const auto m = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for num_threads(std::max(1, g_threads.load())) schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_tn_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  Matrix out(a.rows(), b.rows());
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for num_threads(std::max(1, g_threads.load())) schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_nt_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix neighbor_sum(const CsrView& adj, const Matrix& h) {
  check_csr(adj, h);
  Matrix out(h.rows(), h.cols());
  const auto n = static_cast<std::ptrdiff_t>(h.rows());
#pragma omp parallel for num_threads(std::max(1, g_threads.load())) schedule(static)
  for (std::ptrdiff_t v = 0; v < n; ++v) neighbor_row(adj, h, out, static_cast<std::size_t>(v));
  return out;
}

}  // namespace omp

Matrix matmul(const Matrix& a, const Matrix& b) {
  return use_parallel(a.rows() * a.cols() * b.cols()) ? omp::matmul(a, b) : serial::matmul(a, b);
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  return use_parallel(a.rows() * a.cols() * b.cols()) ? omp::matmul_tn(a, b)
                                                      : serial::matmul_tn(a, b);
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  return use_parallel(a.rows() * a.cols() * b.rows()) ? omp::matmul_nt(a, b)
                                                      : serial::matmul_nt(a, b);
}

Matrix neighbor_sum(const CsrView& adj, const Matrix& h) {
  return use_parallel(adj.indices.size() * h.cols()) ? omp::neighbor_sum(adj, h)
                                                     : serial::neighbor_sum(adj, h);
}

void set_threads(int n) { g_threads.store(std::max(1, n)); }

int threads() { return g_threads.load(); }

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::exception_ptr first;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for num_threads(std::max(1, g_threads.load())) schedule(static) if (g_threads.load() > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(relief_parallel_for)
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace relief::kernels
