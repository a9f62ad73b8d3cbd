#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mw/linalg.hpp"

namespace mw {

namespace {

struct Quintic {
  double a, b, c;
};

// Fast inflation of small singular values; settles into a band around 1.
constexpr Quintic kInflate{3.4445, -4.7750, 2.0315};
// p(x) = (15x − 10x³ + 3x⁵)/8: p(1) = 1, p'(1) = p''(1) = 0.
constexpr Quintic kConverge{15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0};
constexpr int kInflateIters = 3;

bool is_zero(const Mat& g) {
  return std::all_of(g.values().begin(), g.values().end(), [](double x) { return x == 0.0; });
}

// Gram matrix of the smaller side: G Gᵀ when rows ≤ cols, else Gᵀ G.
Mat small_gram(const Mat& g) { return g.rows() <= g.cols() ? matmul_nt(g, g) : matmul_tn(g, g); }

// Gram eigenvalues closer to zero than this are indistinguishable from
// rounding noise in the product.
double gram_noise_floor(const SymEigen& eig) {
  const double lmax = std::max(eig.eigenvalues.front(), 0.0);
  return 4.0 * static_cast<double>(eig.eigenvalues.size()) *
         std::numeric_limits<double>::epsilon() * lmax;
}

}  // namespace

Mat newton_schulz_orthogonalize(const Mat& g, int iters) {
  require_nonempty(g, "newton_schulz_orthogonalize");
  require_finite(g, "newton_schulz_orthogonalize");
  if (iters < 1) throw std::invalid_argument("newton_schulz_orthogonalize: iters must be >= 1");
  if (is_zero(g)) return Mat(g.rows(), g.cols());

  const bool tall = g.rows() > g.cols();
  Mat x = tall ? transpose(g) : g;
  x *= 1.0 / (frobenius_norm(x) + 1e-7);

  Mat next(x.rows(), x.cols());
  for (int i = 0; i < iters; ++i) {
    const Quintic& q = i < kInflateIters ? kInflate : kConverge;
    const Mat a = matmul_nt(x, x);
    Mat b = matmul(a, a);
    b *= q.c;
    b += a * q.b;
    next = x;
    gemm(1.0, b, false, x, false, q.a, next);
    std::swap(x, next);
  }
  return tall ? transpose(x) : x;
}

Mat svd_orthogonalize(const Mat& g) {
  require_nonempty(g, "svd_orthogonalize");
  require_finite(g, "svd_orthogonalize");
  if (is_zero(g)) return Mat(g.rows(), g.cols());

  const bool wide = g.rows() <= g.cols();
  const SymEigen eig = sym_eigh(small_gram(g));
  const double sigma_max = std::sqrt(std::max(eig.eigenvalues.front(), 0.0));
  const double floor = gram_noise_floor(eig);

  // Σ_i w_i w_iᵀ / σ_i over retained directions, where w_i are left (wide)
  // or right (tall) singular vectors.
  const std::size_t k = eig.eigenvalues.size();
  Mat scaled = eig.eigenvectors;
  for (std::size_t j = 0; j < k; ++j) {
    const double lambda = eig.eigenvalues[j];
    const double sigma = std::sqrt(std::max(lambda, 0.0));
    const bool keep = lambda > floor && sigma >= 1e-10 * sigma_max;
    const double f = keep ? 1.0 / sigma : 0.0;
    for (std::size_t i = 0; i < k; ++i) scaled(i, j) *= f;
  }
  const Mat inv_sqrt = matmul_nt(scaled, eig.eigenvectors);
  return wide ? matmul(inv_sqrt, g) : matmul(g, inv_sqrt);
}

std::vector<double> singular_values(const Mat& g) {
  require_nonempty(g, "singular_values");
  require_finite(g, "singular_values");
  const SymEigen eig = sym_eigh(small_gram(g));
  std::vector<double> sv(eig.eigenvalues.size());
  std::transform(eig.eigenvalues.begin(), eig.eigenvalues.end(), sv.begin(),
                 [](double l) { return std::sqrt(std::max(l, 0.0)); });
  return sv;
}

SpectralSpread singular_value_spread(const Mat& g) {
  if (!g.empty() && is_zero(g)) throw NumericError("singular_value_spread: zero matrix");
  const std::vector<double> sv = singular_values(g);
  SpectralSpread s;
  s.max_sv = sv.front();
  s.mean_sv = std::accumulate(sv.begin(), sv.end(), 0.0) / static_cast<double>(sv.size());
  return s;
}

std::vector<double> brute_force_whiten(std::span<const double> g, const Mat& cov, double eps) {
  const std::size_t n = g.size();
  if (cov.rows() != n || cov.cols() != n) {
    throw DimensionError("brute_force_whiten: covariance must be g.size() x g.size()");
  }
  if (n > 64) throw DimensionError("brute_force_whiten: limited to 64 coordinates");
  const SymEigen eig = sym_eigh(cov);
  // Project onto each eigenvector, rescale, and map back.
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) proj += eig.eigenvectors(i, j) * g[i];
    proj /= std::sqrt(std::max(eig.eigenvalues[j], eps));
    for (std::size_t i = 0; i < n; ++i) out[i] += eig.eigenvectors(i, j) * proj;
  }
  return out;
}

}  // namespace mw
