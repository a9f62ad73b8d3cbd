#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "mw/linalg.hpp"

namespace mw {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOffDiagonalTolerance = 1e-12;
constexpr double kSymmetryTolerance = 1e-8;

Mat symmetrized(const Mat& a) {
  require_nonempty(a, "sym_eigh");
  if (a.rows() != a.cols()) throw DimensionError("sym_eigh: matrix is not square");
  require_finite(a, "sym_eigh");
  const std::size_t n = a.rows();
  Mat s(n, n);
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      s(i, j) = 0.5 * (a(i, j) + a(j, i));
      const double d = a(i, j) - a(j, i);
      asym += d * d;
    }
  }
  const double norm = frobenius_norm(a);
  if (std::sqrt(asym) > kSymmetryTolerance * norm) {
    throw NumericError("sym_eigh: matrix is not symmetric");
  }
  return s;
}

double off_diagonal_norm(const Mat& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

struct Rotation {
  std::size_t p, q;
  double c, s;
};

// Rotation that zeroes a(p, q), or nullopt when the entry is already below
// `skip`.
std::optional<Rotation> plan_rotation(const Mat& a, std::size_t p, std::size_t q, double skip) {
  const double apq = a(p, q);
  if (std::abs(apq) <= skip) return std::nullopt;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    if (theta < 0.0) t = -t;
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  return Rotation{p, q, c, t * c};
}

void rotate_rows(Mat& m, const Rotation& r) {
  double* rp = m.row(r.p).data();
  double* rq = m.row(r.q).data();
  for (std::size_t k = 0; k < m.cols(); ++k) {
    const double x = rp[k];
    const double y = rq[k];
    rp[k] = r.c * x - r.s * y;
    rq[k] = r.s * x + r.c * y;
  }
}

// Diagonalizes the symmetric matrix `a` in place. Row k of the returned
// matrix is the eigenvector for a(k, k).
//
// Round-robin ordering: each round pairs every index with another exactly
// once, so the rotations of a round commute. They are applied to all rows
// first and then to all columns, one row at a time.
Mat jacobi_sweeps(Mat& a) {
  const std::size_t n = a.rows();
  Mat vt = Mat::identity(n);
  const double threshold = kOffDiagonalTolerance * frobenius_norm(a);
  if (n == 1) return vt;
  // Entries below this are skipped: if every entry is below it, the
  // off-diagonal norm is already below `threshold`.
  const double skip = threshold / static_cast<double>(n);

  const std::size_t players = n + (n % 2);  // index n is a bye when n is odd
  std::vector<std::size_t> ring(players);
  std::iota(ring.begin(), ring.end(), 0);
  std::vector<Rotation> round;
  round.reserve(players / 2);

  for (int sweep = 0;; ++sweep) {
    if (off_diagonal_norm(a) <= threshold) return vt;
    if (sweep == kMaxSweeps) throw NumericError("sym_eigh: Jacobi did not converge");

    for (std::size_t r = 0; r + 1 < players; ++r) {
      round.clear();
      for (std::size_t k = 0; k < players / 2; ++k) {
        std::size_t p = ring[k];
        std::size_t q = ring[players - 1 - k];
        if (p == n || q == n) continue;
        if (p > q) std::swap(p, q);
        if (auto rot = plan_rotation(a, p, q, skip)) round.push_back(*rot);
      }
      if (!round.empty()) {
        for (const Rotation& rot : round) {
          rotate_rows(a, rot);
          rotate_rows(vt, rot);
        }
        for (std::size_t i = 0; i < n; ++i) {
          double* row = a.row(i).data();
          for (const Rotation& rot : round) {
            const double x = row[rot.p];
            const double y = row[rot.q];
            row[rot.p] = rot.c * x - rot.s * y;
            row[rot.q] = rot.s * x + rot.c * y;
          }
        }
        for (const Rotation& rot : round) a(rot.p, rot.q) = a(rot.q, rot.p) = 0.0;
      }
      std::rotate(ring.begin() + 1, ring.end() - 1, ring.end());
    }
    // Rounding in the two passes can leave a tiny asymmetry; fold it back.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  }
}

// Sorts descending (stable, so ties keep solver order) and fixes signs.
// `vectors` holds eigenvectors as rows.
SymEigen finish(const Mat& diag, const Mat& vectors) {
  const std::size_t n = diag.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return diag(i, i) > diag(j, j); });

  SymEigen out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = diag(src, src);
    auto v = vectors.row(src);
    std::size_t pivot = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v[k]) > std::abs(v[pivot])) pivot = k;
    const double sign = v[pivot] < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = sign * v[k];
  }
  return out;
}

}  // namespace

SymEigen sym_eigh(const Mat& a) {
  Mat work = symmetrized(a);
  const Mat vt = jacobi_sweeps(work);
  return finish(work, vt);
}

SymEigen sym_eigh(const Mat& a, const Mat& basis) {
  Mat sym = symmetrized(a);
  if (!basis.same_shape(sym)) throw DimensionError("sym_eigh: basis shape mismatch");
  Mat rotated = matmul_tn(basis, matmul(sym, basis));
  // Restore exact symmetry lost to rounding in the two products.
  for (std::size_t i = 0; i < rotated.rows(); ++i)
    for (std::size_t j = i + 1; j < rotated.cols(); ++j)
      rotated(i, j) = rotated(j, i) = 0.5 * (rotated(i, j) + rotated(j, i));
  const Mat vt = jacobi_sweeps(rotated);
  // Eigenvectors of A are basis · (eigenvectors of the rotated matrix); as
  // rows that is vt · basisᵀ.
  return finish(rotated, matmul_nt(vt, basis));
}

Mat matrix_power_sym(const SymEigen& eig, double p, double eps) {
  if (eps < 0.0) throw NumericError("matrix_power_sym: eps must be nonnegative");
  const std::size_t n = eig.eigenvalues.size();
  double scale = 0.0;
  for (double l : eig.eigenvalues) scale = std::max(scale, std::abs(l));
  // With eps = 0 and a negative power, eigenvalues at the rounding-noise
  // level are treated as exact zeros and dropped (pseudo-inverse semantics).
  const double noise = 4.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * scale;
  Mat scaled = eig.eigenvectors;
  for (std::size_t j = 0; j < n; ++j) {
    const double l = eig.eigenvalues[j];
    if (l < -1e-6 * scale) {
      throw NumericError("matrix_power_sym: matrix is not positive semidefinite (eigenvalue " +
                         std::to_string(l) + ")");
    }
    const bool null_direction = eps == 0.0 && p < 0.0 && l <= noise;
    const double f = null_direction ? 0.0 : std::pow(std::max(l, eps), p);
    for (std::size_t i = 0; i < n; ++i) scaled(i, j) *= f;
  }
  Mat out = matmul_nt(scaled, eig.eigenvectors);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
  require_finite(out, "matrix_power_sym");
  return out;
}

Mat matrix_power_sym(const Mat& a, double p, double eps) {
  return matrix_power_sym(sym_eigh(a), p, eps);
}

}  // namespace mw
