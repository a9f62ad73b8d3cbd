#include "mw/workload.hpp"

#include <string>

#include "workload_impl.hpp"

namespace mw {

void WorkloadSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("workload: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    fail("warmup_steps must lie in [0, total_steps)");
  }
  if (kind == WorkloadKind::NoisyQuadratic) {
    if (quadratic.dim < 1) fail("dim must be >= 1");
    if (!(quadratic.noise_scale >= 0.0)) fail("noise_scale must be nonnegative");
    if (!(quadratic.condition >= 1.0)) fail("condition must be >= 1");
  } else {
    if (lm.layers < 1 || lm.d_model < 1 || lm.heads < 1 || lm.vocab < 2 || lm.seq_len < 1) {
      fail("tinylm dimensions must be positive (vocab >= 2)");
    }
    if (lm.d_model % lm.heads != 0) fail("d_model must be divisible by heads");
  }
}

std::string_view to_string(ParamClass c) {
  switch (c) {
    case ParamClass::AttentionQkv: return "attention_qkv";
    case ParamClass::AttentionOut: return "attention_out";
    case ParamClass::MlpIn: return "mlp_in";
    case ParamClass::MlpOut: return "mlp_out";
    case ParamClass::Embed: return "embed";
    case ParamClass::OutputHead: return "output_head";
    case ParamClass::LayerNorm: return "layernorm";
  }
  return "?";
}

ParamClass parse_param_class(std::string_view s) {
  for (ParamClass c : {ParamClass::AttentionQkv, ParamClass::AttentionOut, ParamClass::MlpIn,
                       ParamClass::MlpOut, ParamClass::Embed, ParamClass::OutputHead,
                       ParamClass::LayerNorm}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown parameter class '" + std::string(s) + "'");
}

bool is_matrix_class(ParamClass c) {
  return c == ParamClass::AttentionQkv || c == ParamClass::AttentionOut ||
         c == ParamClass::MlpIn || c == ParamClass::MlpOut;
}

double Workload::validation_loss(const std::vector<Mat>& params) const {
  const std::vector<Batch> batches = validation_batches();
  double sum = 0.0;
  for (const Batch& b : batches) sum += loss(params, b);
  return sum / static_cast<double>(batches.size());
}

void Workload::check_params(const std::vector<Mat>& params) const {
  const auto& info = layout();
  if (params.size() != info.size()) throw DimensionError("workload: wrong number of parameters");
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (params[i].rows() != info[i].rows || params[i].cols() != info[i].cols) {
      throw DimensionError("workload: parameter '" + info[i].name + "' has the wrong shape");
    }
  }
}

std::unique_ptr<Workload> make_workload(const WorkloadSpec& spec) {
  spec.validate();
  if (spec.kind == WorkloadKind::NoisyQuadratic) return make_noisy_quadratic(spec);
  return make_tiny_lm(spec);
}

}  // namespace mw
