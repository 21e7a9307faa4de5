#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lmab {

// Execution lane for the data-parallel kernels. Every kernel with an Exec
// parameter has a serial reference path and an OpenMP path that must produce
// bit-identical results for any thread count (work items are seeded by item
// index and partial sums are merged in fixed block order).
enum class Exec { serial, parallel };

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Runs fn(i) for i in [0, n). The parallel path uses a static schedule; fn
// must only write to per-item slots.
template <typename Fn>
void for_each_index(Exec exec, int64_t n, Fn&& fn) {
  if (exec == Exec::parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) fn(i);
  } else {
    for (int64_t i = 0; i < n; ++i) fn(i);
  }
}

// Deterministic sum reduction: items are grouped into fixed-size blocks,
// block partials are computed independently (serially within a block) and
// merged in block order. The result does not depend on the thread count.
inline constexpr int64_t kReductionBlock = 1024;

template <typename Fn>
double block_sum(Exec exec, int64_t n, Fn&& term) {
  if (n <= 0) return 0.0;
  const int64_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
  std::vector<double> partial(static_cast<size_t>(blocks), 0.0);
  for_each_index(exec, blocks, [&](int64_t b) {
    const int64_t lo = b * kReductionBlock;
    const int64_t hi = std::min(n, lo + kReductionBlock);
    double s = 0.0;
    for (int64_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<size_t>(b)] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Same scheme for vector-valued accumulation: acc(block_buffer, i) adds item
// i into the block-local buffer; buffers are merged in block order.
template <typename Acc>
std::vector<double> block_accumulate(Exec exec, int64_t n, size_t dim, Acc&& acc) {
  std::vector<double> total(dim, 0.0);
  if (n <= 0) return total;
  const int64_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
  std::vector<std::vector<double>> partial(static_cast<size_t>(blocks));
  for_each_index(exec, blocks, [&](int64_t b) {
    std::vector<double> buf(dim, 0.0);
    const int64_t lo = b * kReductionBlock;
    const int64_t hi = std::min(n, lo + kReductionBlock);
    for (int64_t i = lo; i < hi; ++i) acc(buf, i);
    partial[static_cast<size_t>(b)] = std::move(buf);
  });
  for (const auto& buf : partial)
    for (size_t j = 0; j < dim; ++j) total[j] += buf[j];
  return total;
}

}  // namespace lmab
