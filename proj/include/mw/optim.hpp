#pragma once

// Matrix-whitening update rules built from interchangeable parts:
//   momentum -> basis -> elementwise normalizer -> post-normalizer -> weight decay.
//
// Every named optimizer (Adam, Signum, Shampoo, SOAP, SPlus, Muon, AdaMuon,
// SPA, Lion-style) is one UpdateRuleSpec. One OptimState is kept per
// parameter and step() is the single entry point.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mw/linalg.hpp"

namespace mw {

enum class BasisKind { Identity, ShampooEigenbasis, NewtonSchulz };
enum class NormalizerKind { Sign, VarianceFull, VarianceFactorized, SignLookahead };
enum class PostNormalizerKind { None, VarianceFullOriginalBasis, VarianceFactorizedOriginalBasis };
/// Which Kronecker side(s) the eigenbasis acts on. Parameters are stored as
/// d_in × d_out, so "input" is the row side.
enum class PreconditionSides { Both, InputOnly, OutputOnly, SmallerDim, LargerDim };

struct UpdateRuleSpec {
  BasisKind basis = BasisKind::Identity;
  int refresh_interval = 10;  ///< ShampooEigenbasis only
  int ns_iters = kDefaultNewtonSchulzIters;
  NormalizerKind normalizer = NormalizerKind::VarianceFull;
  double beta3 = 0.0;  ///< SignLookahead only
  PostNormalizerKind post = PostNormalizerKind::None;
  /// Direct Kronecker rule P_L m P_R instead of an eigenbasis rotation.
  bool direct_shampoo = false;

  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double matrix_eps = 1e-12;  ///< damping inside Shampoo matrix powers
  PreconditionSides sides = PreconditionSides::Both;
  bool bias_correction = true;

  /// Throws ConfigError on out-of-range values or unsupported combinations.
  void validate() const;
  /// True when some variance buffer or Kronecker factor exists, i.e. beta2 matters.
  [[nodiscard]] bool uses_beta2() const;
  [[nodiscard]] bool uses_beta3() const { return normalizer == NormalizerKind::SignLookahead; }
  [[nodiscard]] bool uses_factors() const { return basis == BasisKind::ShampooEigenbasis; }
};

UpdateRuleSpec adam_rule();
UpdateRuleSpec signum_rule();
UpdateRuleSpec lion_rule(double beta3);
UpdateRuleSpec adafactor_rule();
UpdateRuleSpec shampoo_rule(int refresh_interval);
UpdateRuleSpec soap_rule(int refresh_interval);
UpdateRuleSpec splus_rule(int refresh_interval);
UpdateRuleSpec spa_rule(int refresh_interval);
UpdateRuleSpec muon_rule(int iters = kDefaultNewtonSchulzIters);
UpdateRuleSpec adamuon_rule(int iters = kDefaultNewtonSchulzIters);

/// Looks up a rule by name: adam, signum, lion, adafactor, muon, adamuon,
/// and shampoo-N, soap-N, splus-N, spa-N with N the refresh interval.
/// Throws ConfigError for unknown names.
UpdateRuleSpec named_rule(std::string_view name);

struct ResolvedSides {
  bool left = false;   ///< rotate rows
  bool right = false;  ///< rotate columns
};
ResolvedSides resolve_sides(PreconditionSides sides, std::size_t rows, std::size_t cols);

struct OptimState {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  long step_count = 0;

  Mat momentum;
  std::optional<Mat> variance_full;
  std::optional<std::vector<double>> variance_row;  ///< length rows
  std::optional<std::vector<double>> variance_col;  ///< length cols
  std::optional<Mat> factor_left;                   ///< EMA of G Gᵀ
  std::optional<Mat> factor_right;                  ///< EMA of Gᵀ G

  /// Eigenbases (SOAP family) or inverse roots (direct Shampoo), recomputed
  /// from the factors every refresh_interval steps.
  std::optional<Mat> basis_left;
  std::optional<Mat> basis_right;
  long last_refresh_step = 0;
  /// Keep the current bases forever. Used to pin identity bases in tests.
  bool freeze_basis = false;
};

/// Allocates exactly the buffers the rule needs, all zero.
OptimState make_state(const UpdateRuleSpec& spec, std::size_t rows, std::size_t cols,
                      std::string name = "param");

/// Number of reals held per buffer class, parameter included.
struct MemoryFootprint {
  std::size_t param = 0;
  std::size_t momentum = 0;
  std::size_t variance = 0;
  std::size_t factors = 0;
  std::size_t cached_bases = 0;  ///< recomputable, not counted in total()
  [[nodiscard]] std::size_t total() const { return param + momentum + variance + factors; }
};
MemoryFootprint memory_footprint(const OptimState& state);

/// Advances the state by one gradient and applies
///   param ← param − lr_now·(U + weight_decay·param).
/// Returns U. Throws NumericError naming the parameter on a non-finite
/// gradient and DimensionError on shape mismatch.
Mat step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad, Mat& param,
         double lr_now);

/// Computes the update direction U for the current step without touching the
/// parameter. step() is update_direction() followed by the decay and the lr scaling.
Mat update_direction(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);

/// Momentum after bias correction, for the current step count.
Mat corrected_momentum(const UpdateRuleSpec& spec, const OptimState& state);

// Named rules. Each is update_direction() restricted to specs of its kind and
// throws std::invalid_argument for any other spec.

/// P_L m̂ P_R with P = (bias-corrected factor)^(−1/4), or ^(−1/2) when only
/// one side is preconditioned.
Mat shampoo_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// Q_L (m'/(√v + eps)) Q_Rᵀ with m', g' rotated into the eigenbasis.
Mat soap_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// Q_L sign(Q_Lᵀ m̂ Q_R) Q_Rᵀ.
Mat splus_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// NS(m̂).
Mat muon_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// NS(m̂) ⊘ (√v + eps) with v an EMA of NS(m̂)².
Mat adamuon_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// SPlus output s, then s ⊘ (√v + eps) with v an EMA of s².
Mat spa_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);
/// sign((1−β3) m̂ + β3 g) in the configured basis; for Newton-Schulz the blend
/// is orthogonalized instead.
Mat lookahead_sign_step(const UpdateRuleSpec& spec, OptimState& state, const Mat& grad);

/// Building block for the factorized normalizers; expects step_count to be
/// current. Updates v_row/v_col with the row and column means of
/// grad_in_basis² and returns numerator ⊘ (√(v_row v_colᵀ / mean(v_row)) + eps).
Mat factorized_variance_update(const UpdateRuleSpec& spec, OptimState& state,
                               const Mat& grad_in_basis, const Mat& numerator);

/// The rank-1 second-moment estimate v_row v_colᵀ / mean(v_row), bias-corrected.
Mat factorized_estimate(const UpdateRuleSpec& spec, const OptimState& state);

std::string_view to_string(BasisKind k);
std::string_view to_string(NormalizerKind k);
std::string_view to_string(PostNormalizerKind k);
std::string_view to_string(PreconditionSides k);
BasisKind parse_basis(std::string_view s);
NormalizerKind parse_normalizer(std::string_view s);
PostNormalizerKind parse_post(std::string_view s);
PreconditionSides parse_sides(std::string_view s);

}  // namespace mw
