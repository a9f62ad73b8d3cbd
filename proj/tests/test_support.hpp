#pragma once

// Random matrix generators for tests. These deliberately avoid the library's
// own decompositions so that they can serve as independent oracles.

#include <cmath>
#include <random>
#include <vector>

#include "mw/linalg.hpp"

namespace mw::testing {

inline Mat random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                         double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (double& x : m.values()) x = n(rng);
  return m;
}

/// rows × cols with orthonormal columns (rows ≥ cols), by modified Gram-Schmidt.
inline Mat random_orthonormal_columns(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Mat m = random_matrix(rng, rows, cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < rows; ++i) d += m(i, j) * m(i, k);
        for (std::size_t i = 0; i < rows; ++i) m(i, j) -= d * m(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < rows; ++i) m(i, j) /= norm;
  }
  return m;
}

inline Mat random_orthogonal(std::mt19937_64& rng, std::size_t n) {
  return random_orthonormal_columns(rng, n, n);
}

/// U diag(sigma) Vᵀ with known factors. Returns {G, U, V}.
struct KnownSvd {
  Mat g, u, v;
  std::vector<double> sigma;
};

inline KnownSvd known_svd(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                          std::vector<double> sigma) {
  const std::size_t k = sigma.size();
  KnownSvd out{Mat(rows, cols), random_orthonormal_columns(rng, rows, k),
               random_orthonormal_columns(rng, cols, k), sigma};
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += out.u(i, p) * sigma[p] * out.v(j, p);
      out.g(i, j) = s;
    }
  return out;
}

/// Symmetric positive definite: A Aᵀ + shift·I.
inline Mat random_spd(std::mt19937_64& rng, std::size_t n, double shift = 0.5) {
  Mat a = random_matrix(rng, n, n);
  Mat s = matmul_nt(a, a);
  for (std::size_t i = 0; i < n; ++i) s(i, i) += shift;
  return s;
}

inline Mat random_symmetric(std::mt19937_64& rng, std::size_t n) {
  Mat a = random_matrix(rng, n, n);
  Mat s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

/// Plain triple loop, independent of the BLAS-backed matmul.
inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace mw::testing
