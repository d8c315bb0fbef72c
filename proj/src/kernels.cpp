#include "stalegraph/kernels.hpp"

#include <cassert>
#include <cstddef>

namespace stalegraph::kernels {
namespace {

inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  double* crow = c.data() + i * n;
  const double* arow = a.data() + i * k_dim;
  for (std::size_t k = 0; k < k_dim; ++k) {
    const double aik = arow[k];
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
  }
}

inline void gemm_tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k_dim = a.rows();
  const std::size_t m = a.cols();
  const std::size_t n = b.cols();
  double* crow = c.data() + i * n;
  for (std::size_t r = 0; r < k_dim; ++r) {
    const double ari = a.data()[r * m + i];
    const double* brow = b.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += ari * brow[j];
  }
}

inline void gemm_nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.rows();
  const double* arow = a.data() + i * k_dim;
  double* crow = c.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.data() + j * k_dim;
    double s = crow[j];
    for (std::size_t k = 0; k < k_dim; ++k) s += arow[k] * brow[k];
    crow[j] = s;
  }
}

}  // namespace

void gemm(Exec exec, const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(a, b, c, static_cast<std::size_t>(i));
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_tn(Exec exec, const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
  const auto m = static_cast<std::ptrdiff_t>(a.cols());
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < m; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i));
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_nt(Exec exec, const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < m; ++i) gemm_nt_row(a, b, c, static_cast<std::size_t>(i));
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_nt_row(a, b, c, static_cast<std::size_t>(i));
}

void squared_distances(Exec exec, std::span<const double> query, const Matrix& points,
                       std::span<double> out) {
  assert(query.size() == points.cols() && out.size() == points.rows());
  const auto n = static_cast<std::ptrdiff_t>(points.rows());
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i)
      out[i] = squared_distance(query, points.row(static_cast<std::size_t>(i)));
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out[i] = squared_distance(query, points.row(static_cast<std::size_t>(i)));
}

}  // namespace stalegraph::kernels
