#include "mw/linalg.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mw {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Mat& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw DimensionError("Mat: rows and cols must be positive");
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
  if (rows == 0 || cols == 0) throw DimensionError("Mat: rows and cols must be positive");
  if (data_.size() != rows * cols) throw DimensionError("Mat: data length != rows * cols");
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diagonal(std::span<const double> entries) {
  Mat m(entries.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
  return m;
}

Mat& Mat::operator+=(const Mat& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double s) { return a *= s; }
Mat operator*(double s, Mat a) { return a *= s; }
Mat operator-(Mat a) { return a *= -1.0; }

void gemm(double alpha, const Mat& a, bool trans_a, const Mat& b, bool trans_b, double beta,
          Mat& c) {
  require_nonempty(a, "gemm");
  require_nonempty(b, "gemm");
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb) throw DimensionError("gemm: inner dimensions differ");
  if (c.rows() != m || c.cols() != n) throw DimensionError("gemm: output has wrong shape");
  View out(c.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const ConstView va = view(a);
  const ConstView vb = view(b);
  // beta = 0 ignores the previous contents of C, as in BLAS.
  if (beta == 0.0) {
    out.setZero();
  } else if (beta != 1.0) {
    out *= beta;
  }
  if (trans_a && trans_b) out.noalias() += alpha * (va.transpose() * vb.transpose());
  else if (trans_a) out.noalias() += alpha * (va.transpose() * vb);
  else if (trans_b) out.noalias() += alpha * (va * vb.transpose());
  else out.noalias() += alpha * (va * vb);
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Mat c(a.rows(), b.cols());
  gemm(1.0, a, false, b, false, 0.0, c);
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimensions differ");
  Mat c(a.cols(), b.cols());
  gemm(1.0, a, true, b, false, 0.0, c);
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  Mat c(a.rows(), b.rows());
  gemm(1.0, a, false, b, true, 0.0, c);
  return c;
}

Mat transpose(const Mat& a) {
  require_nonempty(a, "transpose");
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

Mat square(const Mat& a) { return hadamard(a, a); }

Mat elementwise_sign(const Mat& a) {
  Mat out = a;
  for (double& x : out.values()) x = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  return out;
}

double frobenius_norm(const Mat& a) { return std::sqrt(dot(a, a)); }

double dot(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double x : a.values()) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

double relative_error(const Mat& a, const Mat& b) {
  return frobenius_norm(a - b) / frobenius_norm(b);
}

double angular_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("angular_distance: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw NumericError("angular_distance: zero vector");
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  // acos loses precision near 1; use the chord length instead.
  const double chord_sq = std::max(0.0, 2.0 - 2.0 * c);
  return 2.0 * std::asin(std::min(1.0, std::sqrt(chord_sq) / 2.0));
}

bool all_finite(const Mat& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double x) { return std::isfinite(x); });
}

void require_finite(const Mat& a, const char* what) {
  if (!all_finite(a)) throw NumericError(std::string(what) + ": non-finite entries");
}

void require_nonempty(const Mat& a, const char* what) {
  if (a.empty()) throw DimensionError(std::string(what) + ": empty matrix");
}

Mat kronecker(const Mat& a, const Mat& b) {
  Mat k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q)
          k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return k;
}

}  // namespace mw
