#pragma once

// Dense inner loops used by the differentiation tape and the brute-force
// nearest-neighbor scan. Each kernel has a serial reference and an OpenMP
// version. Both accumulate every output element over the reduction index in
// the same ascending order, so their results agree bit for bit regardless of
// thread count.

#include <span>

#include "stalegraph/matrix.hpp"

namespace stalegraph::kernels {

enum class Exec { serial, parallel };

/// c += a * b   (a: m x k, b: k x n, c: m x n)
void gemm(Exec exec, const Matrix& a, const Matrix& b, Matrix& c);
/// c += a^T * b (a: k x m, b: k x n, c: m x n)
void gemm_tn(Exec exec, const Matrix& a, const Matrix& b, Matrix& c);
/// c += a * b^T (a: m x k, b: n x k, c: m x n)
void gemm_nt(Exec exec, const Matrix& a, const Matrix& b, Matrix& c);

/// out[i] = sum_d (points(i, d) - query[d])^2
void squared_distances(Exec exec, std::span<const double> query, const Matrix& points,
                       std::span<double> out);

/// Scalar squared Euclidean distance; the exact arithmetic both kNN backends share.
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

/// Parallel execution is used above this many multiply-adds.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

inline Exec pick(std::size_t work) {
  return work >= kParallelThreshold ? Exec::parallel : Exec::serial;
}

}  // namespace stalegraph::kernels
