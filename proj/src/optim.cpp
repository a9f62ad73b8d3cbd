#include "mw/optim.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mw {

namespace {

double bias_factor(bool enabled, double beta, long t) {
  return enabled ? 1.0 - std::pow(beta, static_cast<double>(t)) : 1.0;
}

// x / d with 0/0 taken as 0; only reachable with eps = 0.
double safe_div(double x, double d) { return d == 0.0 ? 0.0 : x / d; }

void ema(Mat& buf, const Mat& x, double beta) {
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf.data()[i] = beta * buf.data()[i] + (1.0 - beta) * x.data()[i];
}

void ema_square(Mat& buf, const Mat& x, double beta) {
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double v = x.data()[i];
    buf.data()[i] = beta * buf.data()[i] + (1.0 - beta) * v * v;
  }
}

Mat variance_full_normalize(const UpdateRuleSpec& spec, OptimState& st, const Mat& sample,
                            const Mat& numerator) {
  Mat& v = *st.variance_full;
  ema_square(v, sample, spec.beta2);
  const double bc = bias_factor(spec.bias_correction, spec.beta2, st.step_count);
  Mat out(numerator.rows(), numerator.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = safe_div(numerator.data()[i], std::sqrt(v.data()[i] / bc) + spec.eps);
  return out;
}

Mat lookahead_blend(const UpdateRuleSpec& spec, const Mat& m, const Mat& g) {
  Mat out = m * (1.0 - spec.beta3);
  out += g * spec.beta3;
  return out;
}

void require_state(bool ok, const char* what) {
  if (!ok) throw std::logic_error(std::string(what) + ": rule and state do not match");
}

// --- Kronecker factors and bases ---------------------------------------

void update_factors(const UpdateRuleSpec& spec, OptimState& st, const Mat& g) {
  if (st.factor_left) {
    Mat& l = *st.factor_left;
    gemm(1.0 - spec.beta2, g, false, g, true, spec.beta2, l);
  }
  if (st.factor_right) {
    Mat& r = *st.factor_right;
    gemm(1.0 - spec.beta2, g, true, g, false, spec.beta2, r);
  }
}

bool refresh_due(const UpdateRuleSpec& spec, const OptimState& st) {
  const bool missing = (st.factor_left && !st.basis_left) || (st.factor_right && !st.basis_right);
  if (missing) return true;
  if (st.freeze_basis) return false;
  return st.step_count - st.last_refresh_step >= spec.refresh_interval;
}

void check_basis_age(const UpdateRuleSpec& spec, const OptimState& st) {
  if (st.freeze_basis) return;
  if (st.step_count - st.last_refresh_step > spec.refresh_interval) {
    throw std::logic_error("optimizer state '" + st.name + "': basis older than refresh interval");
  }
}

Mat eigenbasis_of(const Mat& factor, const std::optional<Mat>& previous) {
  return previous ? sym_eigh(factor, *previous).eigenvectors : sym_eigh(factor).eigenvectors;
}

void refresh_eigenbases(const UpdateRuleSpec& spec, OptimState& st) {
  if (refresh_due(spec, st)) {
    if (st.factor_left) st.basis_left = eigenbasis_of(*st.factor_left, st.basis_left);
    if (st.factor_right) st.basis_right = eigenbasis_of(*st.factor_right, st.basis_right);
    st.last_refresh_step = st.step_count;
  }
  check_basis_age(spec, st);
}

Mat rotate(const OptimState& st, const Mat& x) {
  Mat out = st.basis_left ? matmul_tn(*st.basis_left, x) : x;
  return st.basis_right ? matmul(out, *st.basis_right) : out;
}

Mat unrotate(const OptimState& st, const Mat& x) {
  Mat out = st.basis_left ? matmul(*st.basis_left, x) : x;
  return st.basis_right ? matmul_nt(out, *st.basis_right) : out;
}

// --- pipeline pieces ------------------------------------------------------

// Everything for Identity and ShampooEigenbasis rules up to the post-normalizer.
Mat eigenbasis_core(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  if (spec.basis == BasisKind::ShampooEigenbasis) {
    update_factors(spec, st, grad);
    refresh_eigenbases(spec, st);
  }
  const Mat m = rotate(st, corrected_momentum(spec, st));
  switch (spec.normalizer) {
    case NormalizerKind::Sign:
      return unrotate(st, elementwise_sign(m));
    case NormalizerKind::SignLookahead:
      return unrotate(st, elementwise_sign(lookahead_blend(spec, m, rotate(st, grad))));
    case NormalizerKind::VarianceFull:
      require_state(st.variance_full.has_value(), "variance");
      return unrotate(st, variance_full_normalize(spec, st, rotate(st, grad), m));
    case NormalizerKind::VarianceFactorized:
      return unrotate(st, factorized_variance_update(spec, st, rotate(st, grad), m));
  }
  throw std::logic_error("unreachable normalizer");
}

Mat newton_schulz_core(const UpdateRuleSpec& spec, const OptimState& st, const Mat& grad) {
  const Mat m = corrected_momentum(spec, st);
  if (spec.normalizer == NormalizerKind::SignLookahead) {
    return newton_schulz_orthogonalize(lookahead_blend(spec, m, grad), spec.ns_iters);
  }
  return newton_schulz_orthogonalize(m, spec.ns_iters);
}

Mat apply_post(const UpdateRuleSpec& spec, OptimState& st, const Mat& s) {
  switch (spec.post) {
    case PostNormalizerKind::None:
      return s;
    case PostNormalizerKind::VarianceFullOriginalBasis:
      require_state(st.variance_full.has_value(), "post variance");
      return variance_full_normalize(spec, st, s, s);
    case PostNormalizerKind::VarianceFactorizedOriginalBasis:
      return factorized_variance_update(spec, st, s, s);
  }
  throw std::logic_error("unreachable post-normalizer");
}

void advance(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  if (grad.rows() != st.rows || grad.cols() != st.cols) {
    throw DimensionError("optimizer state '" + st.name + "': gradient shape " +
                         std::to_string(grad.rows()) + "x" + std::to_string(grad.cols()) +
                         " does not match " + std::to_string(st.rows) + "x" +
                         std::to_string(st.cols));
  }
  if (!all_finite(grad)) {
    throw NumericError("non-finite gradient for parameter '" + st.name + "'");
  }
  st.step_count += 1;
  ema(st.momentum, grad, spec.beta1);
}

Mat shampoo_core(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  update_factors(spec, st, grad);
  if (refresh_due(spec, st)) {
    const double bc = bias_factor(spec.bias_correction, spec.beta2, st.step_count);
    const double p = st.factor_left && st.factor_right ? -0.25 : -0.5;
    if (st.factor_left) st.basis_left = matrix_power_sym(*st.factor_left * (1.0 / bc), p, spec.matrix_eps);
    if (st.factor_right) st.basis_right = matrix_power_sym(*st.factor_right * (1.0 / bc), p, spec.matrix_eps);
    st.last_refresh_step = st.step_count;
  }
  check_basis_age(spec, st);
  Mat u = corrected_momentum(spec, st);
  if (st.basis_left) u = matmul(*st.basis_left, u);
  if (st.basis_right) u = matmul(u, *st.basis_right);
  return u;
}

void expect(bool ok, const char* fn) {
  if (!ok) throw std::invalid_argument(std::string(fn) + ": rule does not describe this step");
}

int parse_suffix(std::string_view name, std::string_view prefix) {
  const std::string_view digits = name.substr(prefix.size());
  int n = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty() || n < 1) {
    throw ConfigError("unknown optimizer name '" + std::string(name) + "'");
  }
  return n;
}

}  // namespace

// --- spec -----------------------------------------------------------------

void UpdateRuleSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("optimizer: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(beta3 >= 0.0 && beta3 <= 1.0)) fail("beta3 must lie in [0, 1]");
  if (!(eps >= 0.0)) fail("eps must be nonnegative");
  if (!(matrix_eps >= 0.0)) fail("matrix_eps must be nonnegative");
  if (refresh_interval < 1) fail("refresh_interval must be >= 1");
  if (ns_iters < 1) fail("ns_iters must be >= 1");
  const bool sign_like =
      normalizer == NormalizerKind::Sign || normalizer == NormalizerKind::SignLookahead;
  if (basis == BasisKind::NewtonSchulz && !sign_like) {
    fail("newton_schulz basis takes the sign or sign_lookahead normalizer");
  }
  if (post != PostNormalizerKind::None && !sign_like) {
    fail("a post-normalizer needs a sign or sign_lookahead normalizer");
  }
  if (direct_shampoo && (basis != BasisKind::ShampooEigenbasis || post != PostNormalizerKind::None)) {
    fail("direct shampoo needs the shampoo basis and no post-normalizer");
  }
}

bool UpdateRuleSpec::uses_beta2() const {
  return basis == BasisKind::ShampooEigenbasis || post != PostNormalizerKind::None ||
         normalizer == NormalizerKind::VarianceFull ||
         normalizer == NormalizerKind::VarianceFactorized;
}

UpdateRuleSpec adam_rule() { return {}; }

UpdateRuleSpec signum_rule() {
  UpdateRuleSpec s;
  s.normalizer = NormalizerKind::Sign;
  return s;
}

UpdateRuleSpec lion_rule(double beta3) {
  UpdateRuleSpec s;
  s.normalizer = NormalizerKind::SignLookahead;
  s.beta3 = beta3;
  return s;
}

UpdateRuleSpec adafactor_rule() {
  UpdateRuleSpec s;
  s.normalizer = NormalizerKind::VarianceFactorized;
  return s;
}

UpdateRuleSpec shampoo_rule(int refresh_interval) {
  UpdateRuleSpec s;
  s.basis = BasisKind::ShampooEigenbasis;
  s.refresh_interval = refresh_interval;
  s.direct_shampoo = true;
  return s;
}

UpdateRuleSpec soap_rule(int refresh_interval) {
  UpdateRuleSpec s;
  s.basis = BasisKind::ShampooEigenbasis;
  s.refresh_interval = refresh_interval;
  return s;
}

UpdateRuleSpec splus_rule(int refresh_interval) {
  UpdateRuleSpec s = soap_rule(refresh_interval);
  s.normalizer = NormalizerKind::Sign;
  return s;
}

UpdateRuleSpec spa_rule(int refresh_interval) {
  UpdateRuleSpec s = splus_rule(refresh_interval);
  s.post = PostNormalizerKind::VarianceFullOriginalBasis;
  return s;
}

UpdateRuleSpec muon_rule(int iters) {
  UpdateRuleSpec s;
  s.basis = BasisKind::NewtonSchulz;
  s.ns_iters = iters;
  s.normalizer = NormalizerKind::Sign;
  return s;
}

UpdateRuleSpec adamuon_rule(int iters) {
  UpdateRuleSpec s = muon_rule(iters);
  s.post = PostNormalizerKind::VarianceFullOriginalBasis;
  return s;
}

UpdateRuleSpec named_rule(std::string_view name) {
  if (name == "adam") return adam_rule();
  if (name == "signum") return signum_rule();
  if (name == "lion") return lion_rule(0.1);
  if (name == "adafactor") return adafactor_rule();
  if (name == "muon") return muon_rule();
  if (name == "adamuon") return adamuon_rule();
  for (auto [prefix, make] : {std::pair{std::string_view("shampoo-"), &shampoo_rule},
                              std::pair{std::string_view("soap-"), &soap_rule},
                              std::pair{std::string_view("splus-"), &splus_rule},
                              std::pair{std::string_view("spa-"), &spa_rule}}) {
    if (name.starts_with(prefix)) return make(parse_suffix(name, prefix));
  }
  throw ConfigError("unknown optimizer name '" + std::string(name) + "'");
}

ResolvedSides resolve_sides(PreconditionSides sides, std::size_t rows, std::size_t cols) {
  switch (sides) {
    case PreconditionSides::Both:
      return {true, true};
    case PreconditionSides::InputOnly:
      return {true, false};
    case PreconditionSides::OutputOnly:
      return {false, true};
    case PreconditionSides::SmallerDim:
      return rows > cols ? ResolvedSides{false, true} : ResolvedSides{true, false};
    case PreconditionSides::LargerDim:
      return rows < cols ? ResolvedSides{false, true} : ResolvedSides{true, false};
  }
  throw std::logic_error("unreachable sides");
}

// --- state ----------------------------------------------------------------

OptimState make_state(const UpdateRuleSpec& spec, std::size_t rows, std::size_t cols,
                      std::string name) {
  spec.validate();
  OptimState st;
  st.name = std::move(name);
  st.rows = rows;
  st.cols = cols;
  st.momentum = Mat(rows, cols);

  const bool full = spec.normalizer == NormalizerKind::VarianceFull ||
                    spec.post == PostNormalizerKind::VarianceFullOriginalBasis;
  const bool factored = spec.normalizer == NormalizerKind::VarianceFactorized ||
                        spec.post == PostNormalizerKind::VarianceFactorizedOriginalBasis;
  if (full && !spec.direct_shampoo) st.variance_full = Mat(rows, cols);
  if (factored && !spec.direct_shampoo) {
    st.variance_row = std::vector<double>(rows, 0.0);
    st.variance_col = std::vector<double>(cols, 0.0);
  }
  if (spec.basis == BasisKind::ShampooEigenbasis) {
    const ResolvedSides s = resolve_sides(spec.sides, rows, cols);
    if (s.left) st.factor_left = Mat(rows, rows);
    if (s.right) st.factor_right = Mat(cols, cols);
  }
  return st;
}

MemoryFootprint memory_footprint(const OptimState& st) {
  MemoryFootprint f;
  f.param = st.rows * st.cols;
  f.momentum = st.momentum.size();
  if (st.variance_full) f.variance += st.variance_full->size();
  if (st.variance_row) f.variance += st.variance_row->size();
  if (st.variance_col) f.variance += st.variance_col->size();
  if (st.factor_left) f.factors += st.factor_left->size();
  if (st.factor_right) f.factors += st.factor_right->size();
  if (st.basis_left) f.cached_bases += st.basis_left->size();
  if (st.basis_right) f.cached_bases += st.basis_right->size();
  return f;
}

// --- stages ---------------------------------------------------------------

Mat corrected_momentum(const UpdateRuleSpec& spec, const OptimState& st) {
  const double bc = bias_factor(spec.bias_correction, spec.beta1, st.step_count);
  return bc == 1.0 ? st.momentum : st.momentum * (1.0 / bc);
}

Mat shampoo_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(spec.direct_shampoo, "shampoo_step");
  advance(spec, st, grad);
  return shampoo_core(spec, st, grad);
}

Mat soap_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(!spec.direct_shampoo && spec.basis == BasisKind::ShampooEigenbasis &&
             spec.normalizer == NormalizerKind::VarianceFull,
         "soap_step");
  return update_direction(spec, st, grad);
}

Mat splus_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(!spec.direct_shampoo && spec.basis == BasisKind::ShampooEigenbasis &&
             spec.normalizer == NormalizerKind::Sign && spec.post == PostNormalizerKind::None,
         "splus_step");
  return update_direction(spec, st, grad);
}

Mat muon_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(spec.basis == BasisKind::NewtonSchulz && spec.post == PostNormalizerKind::None,
         "muon_step");
  return update_direction(spec, st, grad);
}

Mat adamuon_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(spec.basis == BasisKind::NewtonSchulz && spec.post != PostNormalizerKind::None,
         "adamuon_step");
  return update_direction(spec, st, grad);
}

Mat spa_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(!spec.direct_shampoo && spec.basis == BasisKind::ShampooEigenbasis &&
             spec.normalizer == NormalizerKind::Sign && spec.post != PostNormalizerKind::None,
         "spa_step");
  return update_direction(spec, st, grad);
}

Mat lookahead_sign_step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  expect(spec.normalizer == NormalizerKind::SignLookahead && !spec.direct_shampoo,
         "lookahead_sign_step");
  return update_direction(spec, st, grad);
}

Mat factorized_variance_update(const UpdateRuleSpec& spec, OptimState& st,
                               const Mat& grad_in_basis, const Mat& numerator) {
  require_state(st.variance_row.has_value() && st.variance_col.has_value(), "factorized variance");
  std::vector<double>& vr = *st.variance_row;
  std::vector<double>& vc = *st.variance_col;
  const std::size_t rows = grad_in_basis.rows();
  const std::size_t cols = grad_in_basis.cols();
  if (vr.size() != rows || vc.size() != cols || !numerator.same_shape(grad_in_basis)) {
    throw DimensionError("factorized_variance_update: shape mismatch");
  }
  std::vector<double> row_mean(rows, 0.0);
  std::vector<double> col_mean(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double g2 = grad_in_basis(i, j) * grad_in_basis(i, j);
      row_mean[i] += g2;
      col_mean[j] += g2;
    }
  for (std::size_t i = 0; i < rows; ++i)
    vr[i] = spec.beta2 * vr[i] + (1.0 - spec.beta2) * row_mean[i] / static_cast<double>(cols);
  for (std::size_t j = 0; j < cols; ++j)
    vc[j] = spec.beta2 * vc[j] + (1.0 - spec.beta2) * col_mean[j] / static_cast<double>(rows);

  const Mat est = factorized_estimate(spec, st);
  Mat out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = safe_div(numerator.data()[i], std::sqrt(est.data()[i]) + spec.eps);
  return out;
}

Mat factorized_estimate(const UpdateRuleSpec& spec, const OptimState& st) {
  require_state(st.variance_row.has_value() && st.variance_col.has_value(), "factorized variance");
  const std::vector<double>& vr = *st.variance_row;
  const std::vector<double>& vc = *st.variance_col;
  const double bc = bias_factor(spec.bias_correction, spec.beta2, st.step_count);
  double sum = 0.0;
  for (double x : vr) sum += x;
  const double mean = std::max(sum / static_cast<double>(vr.size()), std::numeric_limits<double>::min());
  // Each of v_row, v_col carries one bias factor; the mean cancels one.
  Mat est(vr.size(), vc.size());
  for (std::size_t i = 0; i < vr.size(); ++i)
    for (std::size_t j = 0; j < vc.size(); ++j) est(i, j) = (vr[i] / mean) * (vc[j] / bc);
  return est;
}

Mat update_direction(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad) {
  advance(spec, st, grad);
  if (spec.direct_shampoo) return shampoo_core(spec, st, grad);
  if (spec.basis == BasisKind::NewtonSchulz) {
    return apply_post(spec, st, newton_schulz_core(spec, st, grad));
  }
  return apply_post(spec, st, eigenbasis_core(spec, st, grad));
}

Mat step(const UpdateRuleSpec& spec, OptimState& st, const Mat& grad, Mat& param, double lr_now) {
  if (!param.same_shape(grad)) {
    throw DimensionError("optimizer state '" + st.name + "': parameter and gradient shapes differ");
  }
  if (!(lr_now >= 0.0) || !std::isfinite(lr_now)) {
    throw ConfigError("optimizer: scheduled lr must be finite and nonnegative");
  }
  Mat u = update_direction(spec, st, grad);
  const double decay = 1.0 - lr_now * spec.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i)
    param.data()[i] = decay * param.data()[i] - lr_now * u.data()[i];
  return u;
}

// --- names ----------------------------------------------------------------

std::string_view to_string(BasisKind k) {
  switch (k) {
    case BasisKind::Identity: return "identity";
    case BasisKind::ShampooEigenbasis: return "shampoo";
    case BasisKind::NewtonSchulz: return "newton_schulz";
  }
  return "?";
}

std::string_view to_string(NormalizerKind k) {
  switch (k) {
    case NormalizerKind::Sign: return "sign";
    case NormalizerKind::VarianceFull: return "variance_full";
    case NormalizerKind::VarianceFactorized: return "variance_factorized";
    case NormalizerKind::SignLookahead: return "sign_lookahead";
  }
  return "?";
}

std::string_view to_string(PostNormalizerKind k) {
  switch (k) {
    case PostNormalizerKind::None: return "none";
    case PostNormalizerKind::VarianceFullOriginalBasis: return "variance_full";
    case PostNormalizerKind::VarianceFactorizedOriginalBasis: return "variance_factorized";
  }
  return "?";
}

std::string_view to_string(PreconditionSides k) {
  switch (k) {
    case PreconditionSides::Both: return "both";
    case PreconditionSides::InputOnly: return "input";
    case PreconditionSides::OutputOnly: return "output";
    case PreconditionSides::SmallerDim: return "smaller";
    case PreconditionSides::LargerDim: return "larger";
  }
  return "?";
}

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const E (&all)[N], const char* what) {
  for (E e : all)
    if (to_string(e) == s) return e;
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

}  // namespace

BasisKind parse_basis(std::string_view s) {
  constexpr BasisKind all[] = {BasisKind::Identity, BasisKind::ShampooEigenbasis,
                               BasisKind::NewtonSchulz};
  return parse_enum(s, all, "basis");
}

NormalizerKind parse_normalizer(std::string_view s) {
  constexpr NormalizerKind all[] = {NormalizerKind::Sign, NormalizerKind::VarianceFull,
                                    NormalizerKind::VarianceFactorized,
                                    NormalizerKind::SignLookahead};
  return parse_enum(s, all, "normalizer");
}

PostNormalizerKind parse_post(std::string_view s) {
  constexpr PostNormalizerKind all[] = {PostNormalizerKind::None,
                                        PostNormalizerKind::VarianceFullOriginalBasis,
                                        PostNormalizerKind::VarianceFactorizedOriginalBasis};
  return parse_enum(s, all, "post-normalizer");
}

PreconditionSides parse_sides(std::string_view s) {
  constexpr PreconditionSides all[] = {PreconditionSides::Both, PreconditionSides::InputOnly,
                                       PreconditionSides::OutputOnly, PreconditionSides::SmallerDim,
                                       PreconditionSides::LargerDim};
  return parse_enum(s, all, "sides");
}

}  // namespace mw
