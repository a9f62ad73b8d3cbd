#include <cmath>
#include <random>

#include "workload_impl.hpp"

namespace mw {

namespace {

constexpr std::uint64_t kProblemStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

Mat gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (double& x : m.values()) x = n(rng);
  return m;
}

// Orthogonal factor of a Gaussian matrix by modified Gram-Schmidt.
Mat random_rotation(std::mt19937_64& rng, std::size_t n) {
  Mat q = gaussian(rng, n, n, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += q(i, j) * q(i, k);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= d * q(i, k);
      }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
  }
  return q;
}

class NoisyQuadratic final : public Workload {
 public:
  explicit NoisyQuadratic(const WorkloadSpec& spec) : Workload(spec) {
    const auto n = static_cast<std::size_t>(spec.quadratic.dim);
    layout_.push_back({"theta", ParamClass::MlpIn, n, n});
    auto rng = stream_rng(spec.data_seed, kProblemStream, 0);
    u_ = random_rotation(rng, n);
    v_ = random_rotation(rng, n);
    target_ = gaussian(rng, n, n, 1.0);
    a_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
      a_[i] = std::pow(spec.quadratic.condition, -frac);
    }
  }

  const std::vector<ParamInfo>& layout() const override { return layout_; }

  std::vector<Mat> init_params(std::uint64_t seed) const override {
    auto rng = stream_rng(seed, kInitStream, 0);
    return {gaussian(rng, layout_[0].rows, layout_[0].cols, 1.0)};
  }

  Batch next_batch(long step) const override {
    Batch b;
    b.index = step;
    const double scale = spec().quadratic.noise_scale;
    if (scale == 0.0) return b;
    auto rng = stream_rng(spec().data_seed, kNoiseStream, static_cast<std::uint64_t>(step));
    b.noise = gaussian(rng, layout_[0].rows, layout_[0].cols,
                       scale / std::sqrt(static_cast<double>(spec().batch_size)));
    return b;
  }

  std::vector<Batch> validation_batches() const override { return {Batch{}}; }

  std::optional<std::vector<Mat>> optimum() const override { return std::vector<Mat>{target_}; }

  LossAndGrads loss_and_grads(const std::vector<Mat>& params, const Batch& batch) const override {
    check_params(params);
    // Curvature-weighted residual in the rotated frame: W = a ⊙ (Uᵀ D V) ⊙ b.
    const Mat d = params[0] - target_;
    Mat r = matmul_tn(u_, matmul(d, v_));
    Mat w = r;
    const std::size_t n = a_.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        w(i, j) = a_[i] * a_[j] * r(i, j);
        loss += 0.5 * w(i, j) * r(i, j);
      }
    Mat grad = matmul_nt(matmul(u_, w), v_);
    if (!batch.noise.empty()) {
      loss += dot(batch.noise, params[0]);
      grad += batch.noise;
    }
    if (!std::isfinite(loss)) throw NumericError("noisy quadratic: non-finite loss");
    return {loss, {std::move(grad)}};
  }

  double loss(const std::vector<Mat>& params, const Batch& batch) const override {
    return loss_and_grads(params, batch).loss;
  }

 private:
  std::vector<ParamInfo> layout_;
  Mat u_, v_, target_;
  std::vector<double> a_;
};

}  // namespace

std::unique_ptr<Workload> make_noisy_quadratic(const WorkloadSpec& spec) {
  return std::make_unique<NoisyQuadratic>(spec);
}

}  // namespace mw
