#pragma once

// Deterministic training workloads with exact gradients.
//
// NoisyQuadratic: one dim × dim matrix θ with Kronecker-structured curvature,
//   loss = ½ Σ_ij a_i b_j (Uᵀ(θ − θ*)V)_ij² + noise_scale·⟨Z, θ⟩,
// where U, V, θ* come from data_seed and Z is drawn per batch.
//
// TinyLM: a pre-LayerNorm GPT (no linear biases, tanh GELU) trained on
// next-token prediction over order-2 Markov character streams.
//
// Matrices are stored d_in × d_out and applied as y = x W.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mw/linalg.hpp"

namespace mw {

enum class WorkloadKind { NoisyQuadratic, TinyLM };

struct NoisyQuadraticSpec {
  int dim = 8;
  double noise_scale = 0.0;
  /// Curvature eigenvalues per side are log-spaced from 1 down to 1/condition.
  double condition = 10.0;
};

struct TinyLMSpec {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int vocab = 96;
  int seq_len = 64;
};

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::TinyLM;
  NoisyQuadraticSpec quadratic;
  TinyLMSpec lm;
  int batch_size = 32;
  int total_steps = 2000;
  int warmup_steps = 40;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

enum class ParamClass {
  AttentionQkv,
  AttentionOut,
  MlpIn,
  MlpOut,
  Embed,
  OutputHead,
  LayerNorm,
};
std::string_view to_string(ParamClass c);
ParamClass parse_param_class(std::string_view s);
/// Matrix classes are optimized by the rule under test; the rest by fixed Adam.
bool is_matrix_class(ParamClass c);

struct ParamInfo {
  std::string name;
  ParamClass cls;
  std::size_t rows;
  std::size_t cols;
};

struct Batch {
  long index = 0;
  /// TinyLM: sequences × (seq_len + 1) tokens, row-major.
  std::vector<int> tokens;
  /// NoisyQuadratic: noise matrix Z; empty for the noiseless objective.
  Mat noise;
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Mat> grads;
};

class Workload {
 public:
  virtual ~Workload() = default;

  [[nodiscard]] const WorkloadSpec& spec() const { return spec_; }
  [[nodiscard]] virtual const std::vector<ParamInfo>& layout() const = 0;
  [[nodiscard]] virtual std::vector<Mat> init_params(std::uint64_t seed) const = 0;
  /// Training batch for a 0-based step; depends only on data_seed and step.
  [[nodiscard]] virtual Batch next_batch(long step) const = 0;
  [[nodiscard]] virtual std::vector<Batch> validation_batches() const = 0;
  /// Throws NumericError when the loss is not finite.
  [[nodiscard]] virtual LossAndGrads loss_and_grads(const std::vector<Mat>& params,
                                                    const Batch& batch) const = 0;
  [[nodiscard]] virtual double loss(const std::vector<Mat>& params, const Batch& batch) const = 0;

  /// Known minimizer of the noiseless objective, when there is one.
  [[nodiscard]] virtual std::optional<std::vector<Mat>> optimum() const { return std::nullopt; }

  /// Mean loss over validation_batches().
  [[nodiscard]] double validation_loss(const std::vector<Mat>& params) const;

 protected:
  explicit Workload(WorkloadSpec spec) : spec_(std::move(spec)) {}
  void check_params(const std::vector<Mat>& params) const;

 private:
  WorkloadSpec spec_;
};

std::unique_ptr<Workload> make_workload(const WorkloadSpec& spec);

/// Number of held-out validation batches.
inline constexpr int kValidationBatches = 16;

}  // namespace mw
