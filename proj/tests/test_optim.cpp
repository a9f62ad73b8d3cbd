#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "mw/optim.hpp"
#include "test_support.hpp"

using namespace mw;
using mw::testing::naive_matmul;
using mw::testing::random_matrix;
using mw::testing::random_orthogonal;

namespace {

std::vector<Mat> gradient_stream(std::uint64_t seed, std::size_t rows, std::size_t cols,
                                 int steps, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::vector<Mat> out;
  for (int t = 0; t < steps; ++t) out.push_back(random_matrix(rng, rows, cols, scale));
  return out;
}

// Scalar-loop Adam and Signum, independent of the library pipeline.
struct AdamOracle {
  double b1, b2, eps;
  bool bias;
  std::vector<double> m{}, v{};
  long t = 0;
  std::vector<double> step(const Mat& g) {
    if (m.empty()) m.assign(g.size(), 0.0), v.assign(g.size(), 0.0);
    ++t;
    const double c1 = bias ? 1.0 - std::pow(b1, t) : 1.0;
    const double c2 = bias ? 1.0 - std::pow(b2, t) : 1.0;
    std::vector<double> u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = g.data()[i];
      m[i] = b1 * m[i] + (1.0 - b1) * x;
      v[i] = b2 * v[i] + (1.0 - b2) * x * x;
      u[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    return u;
  }
};

struct SignumOracle {
  double b1;
  std::vector<double> m{};
  std::vector<double> step(const Mat& g) {
    if (m.empty()) m.assign(g.size(), 0.0);
    std::vector<double> u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g.data()[i];
      u[i] = m[i] > 0 ? 1.0 : (m[i] < 0 ? -1.0 : 0.0);
    }
    return u;
  }
};

double max_dev(const Mat& a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b[i]));
  return d;
}

void freeze_identity(OptimState& st) {
  if (st.factor_left) st.basis_left = Mat::identity(st.rows);
  if (st.factor_right) st.basis_right = Mat::identity(st.cols);
  st.freeze_basis = true;
}

// Gauss-Jordan inverse with partial pivoting.
Mat invert(Mat a) {
  const std::size_t n = a.rows();
  Mat inv = Mat::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(p, k)), std::swap(inv(c, k), inv(p, k));
    const double d = a(c, c);
    for (std::size_t k = 0; k < n; ++k) a(c, k) /= d, inv(c, k) /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t k = 0; k < n; ++k) a(r, k) -= f * a(c, k), inv(r, k) -= f * inv(c, k);
    }
  }
  return inv;
}

// Principal square root of an SPD matrix by the Denman-Beavers iteration.
Mat sqrt_spd(const Mat& a) {
  Mat y = a;
  Mat z = Mat::identity(a.rows());
  for (int i = 0; i < 60; ++i) {
    const Mat yi = invert(y);
    const Mat zi = invert(z);
    y = (y + zi) * 0.5;
    z = (z + yi) * 0.5;
  }
  return y;
}

}  // namespace

TEST_CASE("rule validation and names") {
  CHECK_NOTHROW(adam_rule().validate());
  UpdateRuleSpec s = adam_rule();
  s.beta1 = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = muon_rule();
  s.normalizer = NormalizerKind::VarianceFull;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = soap_rule(10);
  s.post = PostNormalizerKind::VarianceFullOriginalBasis;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = adam_rule();
  s.lr = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  CHECK(named_rule("soap-25").refresh_interval == 25);
  CHECK(named_rule("splus-5").normalizer == NormalizerKind::Sign);
  CHECK(named_rule("shampoo-3").direct_shampoo);
  CHECK(named_rule("adamuon").post == PostNormalizerKind::VarianceFullOriginalBasis);
  CHECK_THROWS_AS(named_rule("soap-"), ConfigError);
  CHECK_THROWS_AS(named_rule("soap-0"), ConfigError);
  CHECK_THROWS_AS(named_rule("sgd"), ConfigError);

  CHECK_FALSE(signum_rule().uses_beta2());
  CHECK_FALSE(muon_rule().uses_beta2());
  CHECK(adamuon_rule().uses_beta2());
  CHECK(splus_rule(10).uses_beta2());

  for (auto k : {NormalizerKind::Sign, NormalizerKind::VarianceFull,
                 NormalizerKind::VarianceFactorized, NormalizerKind::SignLookahead})
    CHECK(parse_normalizer(to_string(k)) == k);
  for (auto k : {PreconditionSides::Both, PreconditionSides::InputOnly, PreconditionSides::OutputOnly,
                 PreconditionSides::SmallerDim, PreconditionSides::LargerDim})
    CHECK(parse_sides(to_string(k)) == k);
  CHECK_THROWS_AS(parse_basis("lbfgs"), ConfigError);
}

TEST_CASE("side resolution") {
  auto r = resolve_sides(PreconditionSides::SmallerDim, 4, 8);
  CHECK((r.left && !r.right));
  r = resolve_sides(PreconditionSides::SmallerDim, 8, 4);
  CHECK((!r.left && r.right));
  r = resolve_sides(PreconditionSides::LargerDim, 4, 8);
  CHECK((!r.left && r.right));
  r = resolve_sides(PreconditionSides::SmallerDim, 5, 5);
  CHECK((r.left && !r.right));
  r = resolve_sides(PreconditionSides::LargerDim, 5, 5);
  CHECK((r.left && !r.right));
}

TEST_CASE("buffers allocated per rule") {
  const std::size_t n = 6;
  auto fp = [&](const UpdateRuleSpec& s) { return memory_footprint(make_state(s, n, n)).total(); };
  CHECK(fp(signum_rule()) == 2 * n * n);
  CHECK(fp(lion_rule(0.5)) == 2 * n * n);
  CHECK(fp(adam_rule()) == 3 * n * n);
  CHECK(fp(adafactor_rule()) == 2 * n * n + 2 * n);
  CHECK(fp(splus_rule(10)) == 4 * n * n);
  CHECK(fp(soap_rule(10)) == 5 * n * n);
  CHECK(fp(muon_rule()) == 2 * n * n);
  CHECK(fp(adamuon_rule()) == 3 * n * n);

  UpdateRuleSpec one_sided = soap_rule(10);
  one_sided.sides = PreconditionSides::InputOnly;
  OptimState st = make_state(one_sided, 4, 7);
  CHECK(st.factor_left.has_value());
  CHECK_FALSE(st.factor_right.has_value());
  CHECK(st.factor_left->rows() == 4);

  OptimState f = make_state(adafactor_rule(), 3, 5);
  CHECK(memory_footprint(f).variance == 3 + 5);
  CHECK_FALSE(f.variance_full.has_value());
}

TEST_CASE("step: Adam first step on a constant gradient is the elementwise sign") {
  Mat g(2, 3, {0.5, -2.0, 3.0, -0.01, 7.0, -1e-3});
  OptimState st = make_state(adam_rule(), 2, 3);
  const Mat u = update_direction(adam_rule(), st, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = g.data()[i] > 0 ? 1.0 : -1.0;
    CHECK(std::abs(u.data()[i] - s) < 1e-4);
  }
}

TEST_CASE("step: Adam and Signum match scalar oracles") {
  const auto grads = gradient_stream(1, 5, 4, 60);
  UpdateRuleSpec a = adam_rule();
  a.beta1 = 0.8;
  a.beta2 = 0.95;
  OptimState sa = make_state(a, 5, 4);
  AdamOracle oa{0.8, 0.95, a.eps, true};
  OptimState ss = make_state(signum_rule(), 5, 4);
  SignumOracle os{0.9};
  double da = 0.0, ds = 0.0;
  for (const Mat& g : grads) {
    da = std::max(da, max_dev(update_direction(a, sa, g), oa.step(g)));
    ds = std::max(ds, max_dev(update_direction(signum_rule(), ss, g), os.step(g)));
  }
  CHECK(da <= 1e-12);
  CHECK(ds == 0.0);
}

TEST_CASE("pair degeneracies with frozen identity bases") {
  const auto grads = gradient_stream(2, 6, 5, 100);
  SUBCASE("SOAP == Adam") {
    UpdateRuleSpec soap = soap_rule(10);
    OptimState st = make_state(soap, 6, 5);
    freeze_identity(st);
    AdamOracle oracle{soap.beta1, soap.beta2, soap.eps, true};
    double dev = 0.0;
    for (const Mat& g : grads) dev = std::max(dev, max_dev(update_direction(soap, st, g), oracle.step(g)));
    CHECK(dev <= 1e-12);
  }
  SUBCASE("SPlus == Signum") {
    UpdateRuleSpec splus = splus_rule(10);
    OptimState st = make_state(splus, 6, 5);
    freeze_identity(st);
    SignumOracle oracle{splus.beta1};
    double dev = 0.0;
    for (const Mat& g : grads) dev = std::max(dev, max_dev(update_direction(splus, st, g), oracle.step(g)));
    CHECK(dev <= 1e-12);
  }
}

TEST_CASE("Adam at beta1 = beta2 rewritten through the signal-to-noise ratio") {
  const double beta = 0.9;
  UpdateRuleSpec a = adam_rule();
  a.beta1 = a.beta2 = beta;
  a.eps = 0.0;
  a.bias_correction = false;
  const auto grads = gradient_stream(3, 4, 6, 50);
  OptimState st = make_state(a, 4, 6);
  std::vector<double> m(24, 0.0), noise(24, 0.0);
  double dev = 0.0;
  for (const Mat& g : grads) {
    const Mat u = update_direction(a, st, g);
    for (std::size_t i = 0; i < 24; ++i) {
      const double x = g.data()[i];
      noise[i] = beta * noise[i] + (1.0 - beta) * (m[i] - x) * (m[i] - x);
      m[i] = beta * m[i] + (1.0 - beta) * x;
      const double sigma2 = beta * noise[i];
      const double expected = (m[i] > 0 ? 1.0 : -1.0) / std::sqrt(1.0 + sigma2 / (m[i] * m[i]));
      dev = std::max(dev, std::abs(u.data()[i] - expected));
    }
  }
  CHECK(dev <= 1e-10);
}

TEST_CASE("shampoo_step") {
  SUBCASE("diag(2, 8) is flattened") {
    UpdateRuleSpec s = shampoo_rule(1);
    s.beta1 = 0.0;
    s.beta2 = 0.0;
    OptimState st = make_state(s, 2, 2);
    const Mat u = update_direction(s, st, Mat(2, 2, {2.0, 0.0, 0.0, 8.0}));
    CHECK(u(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(u(1, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(u(0, 1)) < 1e-12);
  }
  SUBCASE("single sample reduces to the polar factor") {
    std::mt19937_64 rng(4);
    for (auto [r, c] : {std::pair{5, 5}, std::pair{4, 6}, std::pair{7, 3}}) {
      UpdateRuleSpec s = shampoo_rule(1);
      s.beta1 = 0.0;
      s.beta2 = 0.0;
      OptimState st = make_state(s, r, c);
      const Mat g = random_matrix(rng, r, c);
      const Mat u = update_direction(s, st, g);
      CHECK(angular_distance(u.values(), svd_orthogonalize(g).values()) < 1e-5);
    }
  }
  SUBCASE("3x2 with four samples against brute-force whitening") {
    UpdateRuleSpec s = shampoo_rule(1);
    s.beta1 = 0.0;
    s.beta2 = 0.6;
    const auto grads = gradient_stream(5, 3, 2, 4);
    OptimState st = make_state(s, 3, 2);
    Mat u;
    for (const Mat& g : grads) u = update_direction(s, st, g);
    // Factors accumulated independently of the library.
    Mat l(3, 3), r(2, 2);
    for (const Mat& g : grads) {
      l = l * s.beta2 + naive_matmul(g, transpose(g)) * (1.0 - s.beta2);
      r = r * s.beta2 + naive_matmul(transpose(g), g) * (1.0 - s.beta2);
    }
    const Mat cov = kronecker(sqrt_spd(l), sqrt_spd(r));
    const std::vector<double> expected = brute_force_whiten(grads.back().values(), cov);
    CHECK(angular_distance(u.values(), expected) < 1e-3);
  }
  SUBCASE("non-PSD factor is rejected") {
    UpdateRuleSpec s = shampoo_rule(1);
    OptimState st = make_state(s, 2, 2);
    st.factor_left = Mat(2, 2, {1.0, 0.0, 0.0, -5.0});
    CHECK_THROWS_AS(update_direction(s, st, Mat(2, 2, 1.0)), NumericError);
  }
}

TEST_CASE("soap_step") {
  SUBCASE("input-only rotation is Adam in the rotated input coordinates") {
    UpdateRuleSpec s = soap_rule(1000);
    s.sides = PreconditionSides::InputOnly;
    std::mt19937_64 rng(6);
    const Mat q = random_orthogonal(rng, 5);
    OptimState st = make_state(s, 5, 3);
    CHECK_FALSE(st.factor_right.has_value());
    st.basis_left = q;
    st.freeze_basis = true;
    AdamOracle oracle{s.beta1, s.beta2, s.eps, true};
    double dev = 0.0;
    for (const Mat& g : gradient_stream(6, 5, 3, 20)) {
      const Mat u = soap_step(s, st, g);
      const std::vector<double> rotated = oracle.step(naive_matmul(transpose(q), g));
      dev = std::max(dev, max_abs_diff(u, naive_matmul(q, Mat(5, 3, rotated))));
    }
    CHECK(dev < 1e-12);
  }
  SUBCASE("variance buffer positive after a nonzero step") {
    UpdateRuleSpec s = soap_rule(5);
    OptimState st = make_state(s, 4, 4);
    update_direction(s, st, gradient_stream(7, 4, 4, 1)[0]);
    for (double v : st.variance_full->values()) CHECK(v > 0.0);
  }
  SUBCASE("bases refresh on schedule") {
    UpdateRuleSpec s = soap_rule(3);
    OptimState st = make_state(s, 4, 3);
    const auto grads = gradient_stream(8, 4, 3, 7);
    std::vector<long> refreshed;
    for (const Mat& g : grads) {
      update_direction(s, st, g);
      if (st.last_refresh_step == st.step_count) refreshed.push_back(st.step_count);
    }
    CHECK(refreshed == std::vector<long>{1, 4, 7});
  }
  SUBCASE("bases are the factor eigenvectors") {
    UpdateRuleSpec s = soap_rule(1);
    OptimState st = make_state(s, 4, 3);
    for (const Mat& g : gradient_stream(9, 4, 3, 5)) update_direction(s, st, g);
    const SymEigen el = sym_eigh(*st.factor_left);
    CHECK(max_abs_diff(*st.basis_left, el.eigenvectors) < 1e-8);
  }
}

TEST_CASE("splus_step keeps the Frobenius norm of a full sign matrix") {
  UpdateRuleSpec s = splus_rule(2);
  OptimState st = make_state(s, 6, 4);
  for (const Mat& g : gradient_stream(10, 6, 4, 5)) {
    const Mat u = update_direction(s, st, g);
    CHECK(frobenius_norm(u) == doctest::Approx(std::sqrt(24.0)).epsilon(1e-10));
  }
}

TEST_CASE("muon_step") {
  std::mt19937_64 rng(11);
  const Mat q = random_orthogonal(rng, 8);
  OptimState st = make_state(muon_rule(), 8, 8);
  CHECK(max_abs_diff(update_direction(muon_rule(), st, q), q) < 1e-3);

  const Mat g = random_matrix(rng, 16, 24);
  OptimState a = make_state(muon_rule(), 16, 24);
  OptimState b = make_state(muon_rule(), 16, 24);
  const Mat up = update_direction(muon_rule(), a, g);
  const Mat un = update_direction(muon_rule(), b, -g);
  CHECK(max_abs_diff(up, -un) < 1e-6);
  CHECK(singular_value_spread(up).ratio() <= 1.2);
}

TEST_CASE("adamuon_step") {
  std::mt19937_64 rng(12);
  const Mat g = random_matrix(rng, 6, 9);
  const Mat s = newton_schulz_orthogonalize(g);
  const double eps = adamuon_rule().eps;
  // |s| / (|s| + eps): unit magnitude up to eps.
  auto check_unit = [&](const Mat& u) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double a = std::abs(s.data()[i]);
      CHECK(std::abs(u.data()[i] - s.data()[i] / (a + eps)) < 1e-9);
    }
  };
  OptimState st = make_state(adamuon_rule(), 6, 9);
  check_unit(adamuon_step(adamuon_rule(), st, g));
  Mat u;
  for (int t = 0; t < 30; ++t) u = adamuon_step(adamuon_rule(), st, g);
  check_unit(u);
  CHECK_THROWS_AS(adamuon_step(muon_rule(), st, g), std::invalid_argument);
}

TEST_CASE("spa_step with identity bases is Signum followed by unit variance") {
  UpdateRuleSpec s = spa_rule(10);
  OptimState st = make_state(s, 5, 5);
  freeze_identity(st);
  SignumOracle oracle{s.beta1};
  for (const Mat& g : gradient_stream(13, 5, 5, 20)) {
    const Mat u = update_direction(s, st, g);
    const std::vector<double> sg = oracle.step(g);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(u.data()[i] - sg[i]) < 1e-7);
  }
  for (double v : st.variance_full->values()) CHECK(v > 0.0);
}

TEST_CASE("lookahead_sign_step") {
  const auto grads = gradient_stream(14, 4, 5, 30);
  SUBCASE("beta3 = 0 is Signum, beta3 = 1 is sign of the raw gradient") {
    OptimState s0 = make_state(lion_rule(0.0), 4, 5);
    OptimState s1 = make_state(lion_rule(1.0), 4, 5);
    SignumOracle oracle{0.9};
    for (const Mat& g : grads) {
      CHECK(max_dev(update_direction(lion_rule(0.0), s0, g), oracle.step(g)) == 0.0);
      CHECK(update_direction(lion_rule(1.0), s1, g) == elementwise_sign(g));
    }
  }
  SUBCASE("Nesterov-style blend at beta3 = 1 - beta1") {
    UpdateRuleSpec s = lion_rule(0.1);
    OptimState st = make_state(s, 4, 5);
    std::vector<double> m(20, 0.0);
    for (std::size_t t = 0; t < grads.size(); ++t) {
      const Mat u = update_direction(s, st, grads[t]);
      const double c = 1.0 - std::pow(0.9, static_cast<double>(t + 1));
      for (std::size_t i = 0; i < 20; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * grads[t].data()[i];
        const double blend = 0.9 * m[i] / c + 0.1 * grads[t].data()[i];
        CHECK(u.data()[i] == (blend > 0 ? 1.0 : -1.0));
      }
    }
  }
  SUBCASE("Newton-Schulz family orthogonalizes the blend") {
    UpdateRuleSpec s = muon_rule();
    s.normalizer = NormalizerKind::SignLookahead;
    s.beta3 = 0.0;
    OptimState a = make_state(s, 4, 5);
    OptimState b = make_state(muon_rule(), 4, 5);
    for (const Mat& g : grads) {
      CHECK(max_abs_diff(lookahead_sign_step(s, a, g), update_direction(muon_rule(), b, g)) == 0.0);
    }
    s.beta3 = 1.0;
    OptimState c = make_state(s, 4, 5);
    CHECK(max_abs_diff(update_direction(s, c, grads[0]), newton_schulz_orthogonalize(grads[0])) < 1e-12);
  }
  SUBCASE("shampoo basis with frozen identity is Lion") {
    UpdateRuleSpec s = splus_rule(10);
    s.normalizer = NormalizerKind::SignLookahead;
    s.beta3 = 0.3;
    OptimState a = make_state(s, 4, 5);
    freeze_identity(a);
    OptimState b = make_state(lion_rule(0.3), 4, 5);
    for (const Mat& g : grads) CHECK(update_direction(s, a, g) == update_direction(lion_rule(0.3), b, g));
  }
}

TEST_CASE("factorized_variance_update") {
  SUBCASE("exact when the squared gradient is rank one") {
    const std::vector<double> a{0.5, 2.0, 1.5, 3.0};
    const std::vector<double> b{1.0, 0.25, 4.0};
    Mat g(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) g(i, j) = ((i + j) % 2 ? -1.0 : 1.0) * std::sqrt(a[i] * b[j]);
    UpdateRuleSpec fac = adafactor_rule();
    OptimState sf = make_state(fac, 4, 3);
    OptimState sa = make_state(adam_rule(), 4, 3);
    for (int t = 0; t < 5; ++t) {
      const Mat uf = update_direction(fac, sf, g);
      const Mat ua = update_direction(adam_rule(), sa, g);
      CHECK(max_abs_diff(uf, ua) < 1e-10);
      Mat full = *sa.variance_full * (1.0 / (1.0 - std::pow(0.99, t + 1)));
      CHECK(max_abs_diff(factorized_estimate(fac, sf), full) < 1e-10);
    }
  }
  SUBCASE("all-ones 2x3: unit denominator") {
    UpdateRuleSpec fac = adafactor_rule();
    OptimState st = make_state(fac, 2, 3);
    st.step_count = 1;
    const Mat ones(2, 3, 1.0);
    const Mat m(2, 3, {0.3, -0.2, 0.1, 0.7, 0.0, -0.4});
    const Mat u = factorized_variance_update(fac, st, ones, m);
    for (double x : *st.variance_row) CHECK(x == doctest::Approx(0.01));
    CHECK(max_abs_diff(factorized_estimate(fac, st), ones) < 1e-14);
    CHECK(max_abs_diff(u, m * (1.0 / (1.0 + fac.eps))) < 1e-15);
  }
  SUBCASE("zero gradients do not divide by zero") {
    UpdateRuleSpec fac = adafactor_rule();
    OptimState st = make_state(fac, 3, 2);
    const Mat u = update_direction(fac, st, Mat(3, 2));
    CHECK(all_finite(u));
    CHECK(max_abs(u) == 0.0);
  }
  SUBCASE("post-normalizer form for the Newton-Schulz family") {
    UpdateRuleSpec s = muon_rule();
    s.post = PostNormalizerKind::VarianceFactorizedOriginalBasis;
    OptimState st = make_state(s, 5, 7);
    CHECK(memory_footprint(st).variance == 12);
    for (const Mat& g : gradient_stream(15, 5, 7, 10)) CHECK(all_finite(update_direction(s, st, g)));
  }
}

TEST_CASE("scale invariance") {
  const double c = 3.7;
  // Eigenbasis rules are compared from the second step on: after a single
  // sample the rotated gradient is diag(σ) and its off-diagonal entries are
  // pure rounding noise, whose sign (or ratio, at eps = 0) is arbitrary.
  // Square gradients keep both factors full rank from then on.
  auto compare = [&](UpdateRuleSpec s, std::size_t rows, std::size_t cols, double tol) {
    const auto base = gradient_stream(16, rows, cols, 25);
    OptimState a = make_state(s, rows, cols);
    OptimState b = make_state(s, rows, cols);
    const std::size_t skip = s.basis == BasisKind::ShampooEigenbasis ? 1 : 0;
    double dev = 0.0;
    for (std::size_t t = 0; t < base.size(); ++t) {
      const double d = max_abs_diff(update_direction(s, a, base[t]), update_direction(s, b, base[t] * c));
      if (t >= skip) dev = std::max(dev, d);
    }
    return dev <= tol;
  };
  CHECK(compare(signum_rule(), 6, 4, 1e-6));
  CHECK(compare(lion_rule(0.4), 6, 4, 1e-6));
  CHECK(compare(muon_rule(), 6, 4, 1e-6));
  CHECK(compare(splus_rule(5), 5, 5, 1e-6));
  UpdateRuleSpec adam = adam_rule();
  adam.eps = 0.0;
  UpdateRuleSpec soap = soap_rule(5);
  soap.eps = 0.0;
  CHECK(compare(adam, 6, 4, 1e-8));
  CHECK(compare(soap, 5, 5, 1e-8));
}

TEST_CASE("weight decay is decoupled and lr-scaled") {
  std::mt19937_64 rng(17);
  UpdateRuleSpec s = adam_rule();
  s.weight_decay = 1.0;
  const Mat p0 = random_matrix(rng, 3, 4);
  const Mat g = random_matrix(rng, 3, 4);

  Mat p = p0;
  OptimState st = make_state(s, 3, 4);
  step(s, st, g, p, 0.0);
  CHECK(p == p0);

  p = p0;
  OptimState st2 = make_state(s, 3, 4);
  const Mat u = step(s, st2, g, p, 0.01);
  CHECK(max_abs_diff(p, p0 - (u + p0 * 1.0) * 0.01) < 1e-15);
}

TEST_CASE("step errors") {
  OptimState st = make_state(adam_rule(), 2, 2, "blocks.0.mlp_in");
  Mat p(2, 2);
  CHECK_THROWS_AS(step(adam_rule(), st, Mat(2, 3), p, 0.1), DimensionError);
  Mat bad(2, 2);
  bad(1, 1) = std::nan("");
  try {
    step(adam_rule(), st, bad, p, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("blocks.0.mlp_in") != std::string::npos);
  }
  CHECK(st.step_count == 0);
  CHECK_THROWS_AS(soap_step(adam_rule(), st, Mat(2, 2)), std::invalid_argument);
}

TEST_CASE("deterministic across repeated runs") {
  for (const char* name : {"soap-3", "splus-2", "adamuon", "spa-4", "shampoo-2"}) {
    const UpdateRuleSpec s = named_rule(name);
    auto run = [&] {
      OptimState st = make_state(s, 5, 4);
      Mat p(5, 4, 0.1);
      for (const Mat& g : gradient_stream(18, 5, 4, 12)) step(s, st, g, p, 1e-3);
      return p;
    };
    CHECK(run() == run());
  }
}
