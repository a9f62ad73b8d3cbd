#pragma once

// Dense real matrices and the whitening kernels built on them.
//
// Everything here works in double precision on row-major storage. Matrix
// products go through Eigen; the eigensolver, fractional powers and
// orthogonalization routines are implemented directly.

#include <cstddef>
#include <new>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mw/errors.hpp"

namespace mw {

/// 64-byte aligned storage. Vectorized kernels peel differently depending on
/// alignment, so a fixed alignment keeps results bit-identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

class Mat {
 public:
  /// Empty placeholder. Every public operation rejects empty matrices.
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Mat identity(std::size_t n);
  static Mat diagonal(std::span<const double> entries);

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }

  bool operator==(const Mat& other) const = default;

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, AlignedAllocator<double>> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(Mat a, double s);
Mat operator*(double s, Mat a);
Mat operator-(Mat a);

/// C = alpha * op(A) * op(B) + beta * C. C must already have the result shape.
void gemm(double alpha, const Mat& a, bool trans_a, const Mat& b, bool trans_b, double beta,
          Mat& c);

Mat matmul(const Mat& a, const Mat& b);     ///< A B
Mat matmul_tn(const Mat& a, const Mat& b);  ///< Aᵀ B
Mat matmul_nt(const Mat& a, const Mat& b);  ///< A Bᵀ
Mat transpose(const Mat& a);

Mat hadamard(const Mat& a, const Mat& b);
Mat square(const Mat& a);
Mat elementwise_sign(const Mat& a);

double frobenius_norm(const Mat& a);
double dot(const Mat& a, const Mat& b);
double max_abs(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
/// ‖a − b‖_F / ‖b‖_F.
double relative_error(const Mat& a, const Mat& b);
/// Angle in radians between a and b viewed as flat vectors.
double angular_distance(std::span<const double> a, std::span<const double> b);

bool all_finite(const Mat& a);
/// Throws NumericError naming `what` when any entry is NaN or infinite.
void require_finite(const Mat& a, const char* what);
void require_nonempty(const Mat& a, const char* what);

/// Eigen-decomposition of a symmetric matrix. Eigenvalues are sorted
/// descending and column j of `eigenvectors` pairs with eigenvalues[j].
struct SymEigen {
  std::vector<double> eigenvalues;
  Mat eigenvectors;
};

/// Cyclic Jacobi eigensolver. The input is symmetrized as (A + Aᵀ)/2 first;
/// asymmetry beyond 1e-8 relative is rejected. Eigenvectors are sign-fixed so
/// that their largest-magnitude component is positive, which makes the output
/// a deterministic function of the input.
SymEigen sym_eigh(const Mat& a);

/// Same decomposition, seeded with an orthogonal `basis` close to the answer.
/// Jacobi runs on basisᵀ A basis and the rotations are composed back, so a
/// slowly drifting matrix needs only a couple of sweeps.
SymEigen sym_eigh(const Mat& a, const Mat& basis);

/// Q diag(max(λ, eps)^p) Qᵀ for symmetric PSD A. Eigenvalues below
/// −1e-6·max|λ| raise NumericError instead of being clamped. With eps = 0 and
/// p < 0, eigenvalues at rounding-noise level are dropped, giving the
/// pseudo-inverse power of a rank-deficient matrix.
Mat matrix_power_sym(const Mat& a, double p, double eps = 1e-12);

/// Same as above, reusing an existing decomposition.
Mat matrix_power_sym(const SymEigen& eig, double p, double eps = 1e-12);

inline constexpr int kDefaultNewtonSchulzIters = 5;

/// Newton-Schulz orthogonalization. The input is scaled by
/// 1/(‖G‖_F + 1e-7); the first three iterations use the quintic
/// (3.4445, −4.7750, 2.0315), which inflates small singular values quickly,
/// and later iterations use the quintic (15/8, −10/8, 3/8), which converges
/// to 1 with cubic order. Tall inputs are transposed, iterated and
/// transposed back. A zero matrix maps to zero.
Mat newton_schulz_orthogonalize(const Mat& g, int iters = kDefaultNewtonSchulzIters);

/// Exact polar factor U Vᵀ via sym_eigh of the smaller Gram matrix. Singular
/// values below 1e-10·σ_max are treated as zero and their directions dropped.
/// A zero matrix maps to zero.
Mat svd_orthogonalize(const Mat& g);

/// Singular values, descending, min(rows, cols) of them (zeros included).
std::vector<double> singular_values(const Mat& g);

struct SpectralSpread {
  double max_sv = 0.0;
  double mean_sv = 0.0;
  [[nodiscard]] double ratio() const { return max_sv / mean_sv; }
};

/// Largest and mean singular value. Throws NumericError for a zero matrix.
SpectralSpread singular_value_spread(const Mat& g);

/// cov^{-1/2} g through a full eigendecomposition with eigenvalues floored at
/// eps. Intended as a reference for small problems (g.size() ≤ 64).
std::vector<double> brute_force_whiten(std::span<const double> g, const Mat& cov,
                                       double eps = 1e-12);

/// Row-major Kronecker product.
Mat kronecker(const Mat& a, const Mat& b);

}  // namespace mw
