#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "mw/sweep.hpp"

using namespace mw;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mw_test_sweep_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig quadratic_base(const char* rule, double noise) {
  RunConfig c;
  c.workload.kind = WorkloadKind::NoisyQuadratic;
  c.workload.quadratic = {6, noise, 10.0};
  c.workload.total_steps = 150;
  c.workload.warmup_steps = 5;
  c.workload.batch_size = 4;
  c.workload.seed = 1;
  c.workload.data_seed = 2;
  c.rule_name = rule;
  c.rule = named_rule(rule);
  c.probe = "theta";
  return c;
}

}  // namespace

TEST_CASE("half-life parameterization") {
  CHECK(halflife_to_beta(1.0) == 0.5);
  const double h = beta_to_halflife(0.9);
  CHECK(h == doctest::Approx(std::log(0.5) / std::log(0.9)));
  CHECK(h == doctest::Approx(6.579).epsilon(1e-4));
  CHECK(std::abs(halflife_to_beta(h) - 0.9) < 1e-12);
  // Multiplying h by 10^{1/4} multiplies ln β by 10^{−1/4}.
  const double f = std::pow(10.0, 0.25);
  CHECK(std::log(halflife_to_beta(h * f)) == doctest::Approx(std::log(0.9) / f).epsilon(1e-12));
  for (double beta : {0.5, 0.68, 0.9, 0.95, 0.99, 0.999}) {
    CHECK(std::abs(halflife_to_beta(beta_to_halflife(beta)) - beta) < 1e-12);
  }
  CHECK_THROWS_AS(halflife_to_beta(0.0), ConfigError);
  CHECK_THROWS_AS(halflife_to_beta(-2.0), ConfigError);
  CHECK_THROWS_AS(beta_to_halflife(1.0), ConfigError);
}

TEST_CASE("grid enumeration") {
  SweepGrid g;
  g.lr_span = g.wd_span = g.beta1_span = g.beta2_span = 1;
  g.wd_center = 1.0;
  const auto all = enumerate_grid(g, true);
  CHECK(all.size() == 81);
  // Signum has no variance buffer, so the β2 axis drops out.
  CHECK(enumerate_grid(g, false).size() == 27);
  for (const HyperTuple& t : enumerate_grid(g, false)) CHECK_FALSE(t.beta2.has_value());

  // Lexicographic, ascending per axis, centers included.
  for (std::size_t i = 1; i < all.size(); ++i) {
    const auto& a = all[i - 1];
    const auto& b = all[i];
    CHECK(std::tie(a.lr_k, a.wd_k, a.beta1_k, a.beta2_k) < std::tie(b.lr_k, b.wd_k, b.beta1_k, b.beta2_k));
  }
  const HyperTuple& center = all[40];
  CHECK(center.lr == 1e-3);
  CHECK(center.weight_decay == 1.0);
  CHECK(std::abs(center.beta1 - 0.9) < 1e-12);
  CHECK(std::abs(*center.beta2 - 0.99) < 1e-12);

  SweepGrid lr_only;
  const auto lrs = enumerate_grid(lr_only, true);
  REQUIRE(lrs.size() == 3);
  CHECK(std::abs(lrs[0].lr - 0.000750) < 1e-6);
  CHECK(std::abs(lrs[1].lr - 0.001) < 1e-6);
  CHECK(std::abs(lrs[2].lr - 0.001334) < 1e-6);
  // β2 half-life steps by 10^{1/2}.
  SweepGrid b2;
  b2.lr_span = 0;
  b2.beta2_span = 1;
  const auto b2s = enumerate_grid(b2, true);
  CHECK(beta_to_halflife(*b2s[2].beta2) / beta_to_halflife(*b2s[1].beta2) ==
        doctest::Approx(std::sqrt(10.0)));

  SweepGrid bad;
  bad.lr_factor = 1.0;
  CHECK_THROWS_AS(enumerate_grid(bad, true), ConfigError);
  bad = SweepGrid{};
  bad.wd_span = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sweep text section") {
  KeyValues kv = KeyValues::parse("[sweep]\nlr_center = 0.01\nlr_span = 2\nbeta1_center = 0.95\n");
  const SweepGrid g = read_sweep_grid(kv);
  kv.require_all_consumed();
  CHECK(g.lr_center == 0.01);
  CHECK(g.lr_span == 2);
  CHECK(std::abs(halflife_to_beta(g.beta1_halflife_center) - 0.95) < 1e-12);
  KeyValues again = KeyValues::parse(to_text(g));
  CHECK(to_text(read_sweep_grid(again)) == to_text(g));
}

TEST_CASE("sweeps resume, and parallel equals serial byte for byte") {
  const RunConfig base = quadratic_base("adam", 0.3);
  SweepGrid g;
  g.lr_center = 0.05;
  const fs::path serial = fresh_dir("serial");
  const fs::path parallel = fresh_dir("parallel");

  const SweepOutcome a = run_sweep(g, base, serial, 1);
  REQUIRE(a.records.size() == 3);
  CHECK(a.crashed.empty());
  CHECK(a.steps_executed == 3 * 150);
  CHECK(std::none_of(a.reused.begin(), a.reused.end(), [](bool b) { return b; }));

  const SweepOutcome again = run_sweep(g, base, serial, 1);
  CHECK(again.steps_executed == 0);
  CHECK(std::all_of(again.reused.begin(), again.reused.end(), [](bool b) { return b; }));
  const auto body = [](const std::string& r) { return r.substr(r.find('\n')); };
  CHECK(body(again.report) == body(a.report));

  const SweepOutcome p = run_sweep(g, base, parallel, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(read_file(a.files[i]) == read_file(p.files[i]));
    CHECK(a.files[i].filename() == p.files[i].filename());
  }
  CHECK(p.report == a.report);

  // A corrupted record is run again rather than trusted.
  write_file_atomic(a.files[0], "[config]\ngarbage\n");
  const SweepOutcome repaired = run_sweep(g, base, serial, 1);
  CHECK(repaired.steps_executed == 150);
  CHECK(read_file(a.files[0]) == read_file(p.files[0]));
}

TEST_CASE("local optimum: declared only with every neighbor present and no better") {
  const RunConfig base = quadratic_base("adam", 2.0);
  const fs::path dir = fresh_dir("local");
  SweepGrid g;
  g.lr_factor = 2.0;
  g.lr_span = 3;
  g.lr_center = 0.05;
  const SweepOutcome out = run_sweep(g, base, dir, 1);
  REQUIRE(out.best.has_value());
  const HyperTuple& b = out.tuples[*out.best];
  // Noise makes large steps costly and small steps are slow, so the optimum
  // is interior.
  CHECK(std::abs(b.lr_k) < 3);
  CHECK(out.locally_optimal);
  for (std::size_t i = 0; i < out.tuples.size(); ++i) {
    if (std::abs(out.tuples[i].lr_k - b.lr_k) == 1) {
      CHECK(out.records[i].final_val_loss >= out.records[*out.best].final_val_loss);
    }
  }

  // Centered at the edge: the best point is on the boundary, so no claim.
  SweepGrid edge = g;
  edge.lr_span = 1;
  edge.lr_center = 1e-4;
  const SweepOutcome low = run_sweep(edge, base, fresh_dir("edge"), 1);
  REQUIRE(low.best.has_value());
  CHECK(low.tuples[*low.best].lr_k == 1);
  CHECK_FALSE(low.locally_optimal);
}

TEST_CASE("failed and crashed runs are reported and excluded") {
  SweepGrid g;
  g.lr_center = 50.0;
  const SweepOutcome failed = run_sweep(g, quadratic_base("signum", 0.0), fresh_dir("failed"), 1);
  CHECK_FALSE(failed.best.has_value());
  CHECK(failed.report.find("all runs failed") != std::string::npos);
  CHECK(failed.crashed.empty());

  RunConfig broken = quadratic_base("adam", 0.0);
  broken.probe = "missing";
  const SweepOutcome crashed = run_sweep(SweepGrid{}, broken, fresh_dir("crashed"), 2);
  CHECK(crashed.crashed.size() == 3);
  CHECK_FALSE(crashed.best.has_value());
}
