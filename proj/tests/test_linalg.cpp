#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "mw/linalg.hpp"
#include "test_support.hpp"

using namespace mw;
using mw::testing::known_svd;
using mw::testing::naive_matmul;
using mw::testing::random_matrix;
using mw::testing::random_orthogonal;
using mw::testing::random_spd;
using mw::testing::random_symmetric;

namespace {

// Roots of a polynomial with only real roots inside [lo, hi], found by a sign
// scan followed by bisection. Used for the closed-form eigenvalue oracle.
std::vector<double> real_roots(const std::function<double(double)>& f, double lo, double hi) {
  std::vector<double> roots;
  const int steps = 200000;
  double prev_x = lo;
  double prev = f(lo);
  for (int i = 1; i <= steps; ++i) {
    const double x = lo + (hi - lo) * i / steps;
    const double y = f(x);
    if (prev == 0.0) roots.push_back(prev_x);
    else if ((prev < 0.0) != (y < 0.0) && y != 0.0) {
      double a = prev_x, b = x, fa = prev;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = f(mid);
        if ((fm < 0.0) == (fa < 0.0)) {
          a = mid;
          fa = fm;
        } else {
          b = mid;
        }
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_x = x;
    prev = y;
  }
  return roots;
}

std::vector<double> char_poly_eigenvalues(const Mat& b) {
  const double bound = 1.0 + max_abs(b) * static_cast<double>(b.rows());
  if (b.rows() == 2) {
    const double tr = b(0, 0) + b(1, 1);
    const double det = b(0, 0) * b(1, 1) - b(0, 1) * b(1, 0);
    return real_roots([&](double l) { return l * l - tr * l + det; }, -bound, bound);
  }
  const double tr = b(0, 0) + b(1, 1) + b(2, 2);
  const double c2 = b(0, 0) * b(1, 1) - b(0, 1) * b(1, 0) + b(0, 0) * b(2, 2) -
                    b(0, 2) * b(2, 0) + b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1);
  const double det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                     b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                     b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
  return real_roots([&](double l) { return l * l * l - tr * l * l + c2 * l - det; }, -bound,
                    bound);
}

Mat reconstruct(const SymEigen& e) {
  Mat scaled = e.eigenvectors;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= e.eigenvalues[j];
  return naive_matmul(scaled, transpose(e.eigenvectors));
}

double orthonormality_error(const Mat& q) {
  return frobenius_norm(naive_matmul(transpose(q), q) - Mat::identity(q.cols()));
}

double spread_ratio(const Mat& m) { return singular_value_spread(m).ratio(); }

}  // namespace

TEST_CASE("matmul variants agree with a naive triple loop") {
  std::mt19937_64 rng(1);
  const Mat a = random_matrix(rng, 5, 7);
  const Mat b = random_matrix(rng, 7, 3);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
  CHECK_THROWS_AS(Mat(0, 3), DimensionError);
  CHECK_THROWS_AS(Mat(2, 2, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("sym_eigh: identity and diagonal") {
  const SymEigen id = sym_eigh(Mat::identity(3));
  for (double l : id.eigenvalues) CHECK(l == doctest::Approx(1.0));
  CHECK(relative_error(reconstruct(id), Mat::identity(3)) < 1e-12);

  const std::vector<double> d{1.0, 4.0};
  const SymEigen e = sym_eigh(Mat::diagonal(d));
  CHECK(e.eigenvalues[0] == doctest::Approx(4.0));
  CHECK(e.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(std::abs(e.eigenvectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(e.eigenvectors(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eigh: random 8x8 against characteristic-polynomial roots of 2x2/3x3 blocks") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat b2 = random_symmetric(rng, 2);
    const Mat b3a = random_symmetric(rng, 3);
    const Mat b3b = random_symmetric(rng, 3);
    Mat block(8, 8);
    auto place = [&](const Mat& b, std::size_t off) {
      for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) block(off + i, off + j) = b(i, j);
    };
    place(b2, 0);
    place(b3a, 2);
    place(b3b, 5);
    std::vector<double> expected;
    for (const Mat* b : {&b2, &b3a, &b3b}) {
      const auto roots = char_poly_eigenvalues(*b);
      REQUIRE(roots.size() == b->rows());
      expected.insert(expected.end(), roots.begin(), roots.end());
    }
    std::sort(expected.begin(), expected.end(), std::greater<>());

    // Hide the block structure behind a random orthogonal similarity.
    const Mat o = random_orthogonal(rng, 8);
    Mat a = naive_matmul(naive_matmul(o, block), transpose(o));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i + 1; j < 8; ++j) a(i, j) = a(j, i);

    const SymEigen e = sym_eigh(a);
    for (std::size_t k = 0; k < 8; ++k) CHECK(e.eigenvalues[k] == doctest::Approx(expected[k]).epsilon(1e-9));
    CHECK(orthonormality_error(e.eigenvectors) < 1e-8);
    CHECK(relative_error(reconstruct(e), a) < 1e-6);
    CHECK(std::is_sorted(e.eigenvalues.begin(), e.eigenvalues.end(), std::greater<>()));
  }
}

TEST_CASE("sym_eigh: deterministic and warm-startable") {
  std::mt19937_64 rng(3);
  const Mat a = random_spd(rng, 20);
  const SymEigen e1 = sym_eigh(a);
  const SymEigen e2 = sym_eigh(a);
  CHECK(e1.eigenvalues == e2.eigenvalues);
  CHECK(e1.eigenvectors == e2.eigenvectors);

  // Warm start from the basis of a nearby matrix.
  Mat nearby = a + random_spd(rng, 20, 0.0) * 1e-3;
  const SymEigen warm = sym_eigh(nearby, e1.eigenvectors);
  const SymEigen cold = sym_eigh(nearby);
  for (std::size_t k = 0; k < 20; ++k)
    CHECK(warm.eigenvalues[k] == doctest::Approx(cold.eigenvalues[k]).epsilon(1e-10));
  CHECK(relative_error(reconstruct(warm), nearby) < 1e-10);
  CHECK(orthonormality_error(warm.eigenvectors) < 1e-8);
}

TEST_CASE("sym_eigh: errors") {
  CHECK_THROWS_AS(sym_eigh(Mat(2, 3)), DimensionError);
  Mat bad = Mat::identity(2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sym_eigh(bad), NumericError);
  Mat asym = Mat::identity(2);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(sym_eigh(asym), NumericError);
}

TEST_CASE("matrix_power_sym") {
  CHECK(max_abs_diff(matrix_power_sym(Mat::identity(4), -0.25), Mat::identity(4)) < 1e-14);

  const std::vector<double> d{16.0, 1.0};
  const Mat p = matrix_power_sym(Mat::diagonal(d), -0.5, 1e-300);
  CHECK(p(0, 0) == doctest::Approx(0.25));
  CHECK(p(1, 1) == doctest::Approx(1.0));
  CHECK(std::abs(p(0, 1)) < 1e-15);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_spd(rng, 6);
    const Mat x = matrix_power_sym(a, -0.25);
    // x⁴ · A should be the identity: x = A^{-1/4}.
    const Mat x2 = naive_matmul(x, x);
    const Mat x4 = naive_matmul(x2, x2);
    CHECK(relative_error(naive_matmul(x4, a), Mat::identity(6)) < 1e-5);
    CHECK(max_abs_diff(x, transpose(x)) == 0.0);
  }

  const std::vector<double> neg{1.0, -0.5};
  CHECK_THROWS_AS(matrix_power_sym(Mat::diagonal(neg), -0.25), NumericError);
  // Tiny negative rounding noise is tolerated.
  const std::vector<double> noise{1.0, -1e-9};
  CHECK_NOTHROW(matrix_power_sym(Mat::diagonal(noise), -0.25, 1e-6));
}

TEST_CASE("newton_schulz_orthogonalize") {
  std::mt19937_64 rng(5);
  SUBCASE("orthogonal input is a fixed point") {
    for (std::size_t n : {4u, 8u, 16u, 64u}) {
      const Mat q = random_orthogonal(rng, n);
      CHECK(max_abs_diff(newton_schulz_orthogonalize(q, 5), q) < 1e-3);
    }
  }
  SUBCASE("diag(5, 0.5) lands within the configured band of the SVD oracle") {
    const std::vector<double> d{5.0, 0.5};
    const Mat g = Mat::diagonal(d);
    const Mat ns = newton_schulz_orthogonalize(g, 5);
    for (double s : singular_values(ns)) {
      CHECK(s >= 0.7);
      CHECK(s <= 1.3);
    }
    CHECK(max_abs_diff(ns, svd_orthogonalize(g)) < 0.3);
  }
  SUBCASE("random wide and tall inputs at 10 iterations") {
    for (int trial = 0; trial < 5; ++trial) {
      const Mat g = random_matrix(rng, 32, 64);
      CHECK(relative_error(newton_schulz_orthogonalize(g, 10), svd_orthogonalize(g)) <= 1e-2);
      const Mat t = transpose(g);
      CHECK(relative_error(newton_schulz_orthogonalize(t, 10), svd_orthogonalize(t)) <= 1e-2);
    }
  }
  SUBCASE("spread ratio is monotone in iterations from 3 on") {
    for (int trial = 0; trial < 5; ++trial) {
      const Mat g = random_matrix(rng, 24, 40);
      double prev = spread_ratio(newton_schulz_orthogonalize(g, 3));
      for (int k = 4; k <= 12; ++k) {
        const double r = spread_ratio(newton_schulz_orthogonalize(g, k));
        CHECK(r <= prev + 1e-6);
        prev = r;
      }
    }
  }
  SUBCASE("odd function and full-rank spread") {
    const Mat g = random_matrix(rng, 32, 64);
    CHECK(max_abs_diff(newton_schulz_orthogonalize(-g), -newton_schulz_orthogonalize(g)) < 1e-12);
    CHECK(spread_ratio(newton_schulz_orthogonalize(g)) <= 1.2);
  }
  SUBCASE("zero and non-finite inputs") {
    CHECK(newton_schulz_orthogonalize(Mat(3, 4)) == Mat(3, 4));
    Mat bad(2, 2, 1.0);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(newton_schulz_orthogonalize(bad), NumericError);
  }
}

TEST_CASE("svd_orthogonalize") {
  std::mt19937_64 rng(9);
  SUBCASE("orthogonal input") {
    const Mat q = random_orthogonal(rng, 6);
    CHECK(max_abs_diff(svd_orthogonalize(q), q) < 1e-10);
  }
  SUBCASE("known factors") {
    for (auto [r, c] : {std::pair{5u, 2u}, std::pair{2u, 7u}, std::pair{4u, 4u}}) {
      const auto k = known_svd(rng, r, c, {3.0, 2.0});
      const Mat uvt = naive_matmul(k.u, transpose(k.v));
      CHECK(max_abs_diff(svd_orthogonalize(k.g), uvt) < 1e-8);
    }
  }
  SUBCASE("rank deficiency maps null directions to zero") {
    const auto k = known_svd(rng, 5, 4, {2.0, 0.0});
    const Mat uvt = naive_matmul(k.u, transpose(k.v));
    // Only the first singular pair survives.
    Mat expected(5, 4);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) expected(i, j) = k.u(i, 0) * k.v(j, 0);
    CHECK(max_abs_diff(svd_orthogonalize(k.g), expected) < 1e-6);
    CHECK(max_abs_diff(uvt, expected) > 0.01);
  }
  SUBCASE("orthogonalization identity across shapes") {
    for (auto [r, c] : {std::pair{4u, 4u}, std::pair{8u, 5u}, std::pair{5u, 8u}, std::pair{16u, 16u}}) {
      for (int trial = 0; trial < 3; ++trial) {
        const Mat g = random_matrix(rng, r, c);
        const Mat uvt = svd_orthogonalize(g);
        const Mat left = matmul_nt(g, g);
        const Mat right = matmul_tn(g, g);
        const Mat both = matmul(matmul(matrix_power_sym(left, -0.25, 0.0), g),
                                matrix_power_sym(right, -0.25, 0.0));
        const Mat left_only = matmul(matrix_power_sym(left, -0.5, 0.0), g);
        const Mat right_only = matmul(g, matrix_power_sym(right, -0.5, 0.0));
        CHECK(relative_error(both, uvt) < 1e-6);
        CHECK(relative_error(left_only, uvt) < 1e-6);
        CHECK(relative_error(right_only, uvt) < 1e-6);
      }
    }
  }
  SUBCASE("scale and sign equivariance") {
    const Mat g = random_matrix(rng, 6, 9);
    const Mat base = svd_orthogonalize(g);
    CHECK(max_abs_diff(svd_orthogonalize(g * 37.5), base) < 1e-10);
    CHECK(max_abs_diff(svd_orthogonalize(g * -0.01), -base) < 1e-10);
  }
  CHECK(svd_orthogonalize(Mat(2, 3)) == Mat(2, 3));
}

TEST_CASE("singular_value_spread") {
  std::mt19937_64 rng(4);
  const SpectralSpread q = singular_value_spread(random_orthogonal(rng, 10));
  CHECK(q.max_sv == doctest::Approx(1.0));
  CHECK(q.mean_sv == doctest::Approx(1.0));

  std::vector<double> d(12, 1.0);
  d[0] = 12.0;
  const SpectralSpread s = singular_value_spread(Mat::diagonal(d));
  CHECK(s.max_sv == doctest::Approx(12.0));
  CHECK(s.mean_sv == doctest::Approx(23.0 / 12.0));

  // Mean counts zero singular values of rank-deficient input.
  const auto k = known_svd(rng, 4, 6, {3.0, 1.0});
  const SpectralSpread r = singular_value_spread(k.g);
  CHECK(r.mean_sv == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(singular_value_spread(Mat(3, 3)), NumericError);
}

TEST_CASE("brute_force_whiten") {
  std::mt19937_64 rng(12);
  const std::vector<double> g{0.3, -1.2, 2.0, 0.7};
  const auto same = brute_force_whiten(g, Mat::identity(4));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(same[i] == doctest::Approx(g[i]));

  // Rank-1 covariance g gᵀ: whitened vector is g/‖g‖.
  Mat outer(4, 4);
  double norm = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    norm += g[i] * g[i];
    for (std::size_t j = 0; j < 4; ++j) outer(i, j) = g[i] * g[j];
  }
  norm = std::sqrt(norm);
  const auto w = brute_force_whiten(g, outer);
  for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(g[i] / norm).epsilon(1e-6));

  // Single sample, Kronecker-structured covariance (G Gᵀ)^{1/2} ⊗ (Gᵀ G)^{1/2}:
  // whitening the flattened G gives (G Gᵀ)^{-1/4} G (Gᵀ G)^{-1/4}.
  const Mat big_g = random_matrix(rng, 3, 2);
  const Mat cov = kronecker(matrix_power_sym(matmul_nt(big_g, big_g), 0.5, 0.0),
                            matrix_power_sym(matmul_tn(big_g, big_g), 0.5, 0.0));
  const auto whitened = brute_force_whiten(big_g.values(), cov);
  const Mat kron = matmul(matmul(matrix_power_sym(matmul_nt(big_g, big_g), -0.25), big_g),
                          matrix_power_sym(matmul_tn(big_g, big_g), -0.25));
  CHECK(angular_distance(whitened, kron.values()) < 1e-6);
  CHECK(angular_distance(whitened, svd_orthogonalize(big_g).values()) < 1e-6);

  CHECK_THROWS_AS(brute_force_whiten(g, Mat::identity(3)), DimensionError);
}
