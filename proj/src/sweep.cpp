#include "mw/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace mw {

double halflife_to_beta(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("half-life must be positive and finite");
  return std::pow(0.5, 1.0 / h);
}

double beta_to_halflife(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
  return std::log(0.5) / std::log(beta);
}

void SweepGrid::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("sweep: " + msg); };
  if (!(lr_center > 0.0)) fail("lr_center must be positive");
  if (!(wd_center >= 0.0)) fail("wd_center must be nonnegative");
  if (wd_span > 0 && wd_center == 0.0) fail("a weight-decay span needs a positive wd_center");
  if (!(beta1_halflife_center > 0.0) || !(beta2_halflife_center > 0.0)) {
    fail("half-life centers must be positive");
  }
  for (double f : {lr_factor, wd_factor, beta1_halflife_factor, beta2_halflife_factor}) {
    if (!(f > 1.0)) fail("all factors must be > 1");
  }
  for (int s : {lr_span, wd_span, beta1_span, beta2_span}) {
    if (s < 0) fail("spans must be nonnegative");
  }
}

SweepGrid read_sweep_grid(KeyValues& kv) {
  SweepGrid g;
  g.lr_center = kv.take_double("sweep.lr_center", g.lr_center);
  g.lr_factor = kv.take_double("sweep.lr_factor", g.lr_factor);
  g.lr_span = static_cast<int>(kv.take_long("sweep.lr_span", g.lr_span));
  g.wd_center = kv.take_double("sweep.wd_center", g.wd_center);
  g.wd_factor = kv.take_double("sweep.wd_factor", g.wd_factor);
  g.wd_span = static_cast<int>(kv.take_long("sweep.wd_span", g.wd_span));
  // β centers may be given directly as betas for convenience.
  if (kv.has("sweep.beta1_center")) {
    g.beta1_halflife_center = beta_to_halflife(kv.take_double("sweep.beta1_center", 0.9));
  }
  if (kv.has("sweep.beta2_center")) {
    g.beta2_halflife_center = beta_to_halflife(kv.take_double("sweep.beta2_center", 0.99));
  }
  g.beta1_halflife_center = kv.take_double("sweep.beta1_halflife_center", g.beta1_halflife_center);
  g.beta1_halflife_factor = kv.take_double("sweep.beta1_halflife_factor", g.beta1_halflife_factor);
  g.beta1_span = static_cast<int>(kv.take_long("sweep.beta1_span", g.beta1_span));
  g.beta2_halflife_center = kv.take_double("sweep.beta2_halflife_center", g.beta2_halflife_center);
  g.beta2_halflife_factor = kv.take_double("sweep.beta2_halflife_factor", g.beta2_halflife_factor);
  g.beta2_span = static_cast<int>(kv.take_long("sweep.beta2_span", g.beta2_span));
  g.validate();
  return g;
}

std::string to_text(const SweepGrid& g) {
  std::ostringstream os;
  os << "[sweep]\n";
  os << "lr_center = " << format_double(g.lr_center) << "\n";
  os << "lr_factor = " << format_double(g.lr_factor) << "\n";
  os << "lr_span = " << g.lr_span << "\n";
  os << "wd_center = " << format_double(g.wd_center) << "\n";
  os << "wd_factor = " << format_double(g.wd_factor) << "\n";
  os << "wd_span = " << g.wd_span << "\n";
  os << "beta1_halflife_center = " << format_double(g.beta1_halflife_center) << "\n";
  os << "beta1_halflife_factor = " << format_double(g.beta1_halflife_factor) << "\n";
  os << "beta1_span = " << g.beta1_span << "\n";
  os << "beta2_halflife_center = " << format_double(g.beta2_halflife_center) << "\n";
  os << "beta2_halflife_factor = " << format_double(g.beta2_halflife_factor) << "\n";
  os << "beta2_span = " << g.beta2_span << "\n";
  return os.str();
}

void HyperTuple::apply_to(UpdateRuleSpec& spec) const {
  spec.lr = lr;
  spec.weight_decay = weight_decay;
  spec.beta1 = beta1;
  if (beta2) spec.beta2 = *beta2;
}

std::vector<HyperTuple> enumerate_grid(const SweepGrid& grid, bool uses_beta2) {
  grid.validate();
  const int b2_span = uses_beta2 ? grid.beta2_span : 0;
  std::vector<HyperTuple> out;
  for (int a = -grid.lr_span; a <= grid.lr_span; ++a)
    for (int b = -grid.wd_span; b <= grid.wd_span; ++b)
      for (int c = -grid.beta1_span; c <= grid.beta1_span; ++c)
        for (int d = -b2_span; d <= b2_span; ++d) {
          HyperTuple t;
          t.lr_k = a;
          t.wd_k = b;
          t.beta1_k = c;
          t.beta2_k = d;
          t.lr = grid.lr_center * std::pow(grid.lr_factor, a);
          t.weight_decay = grid.wd_center * std::pow(grid.wd_factor, b);
          t.beta1 = halflife_to_beta(grid.beta1_halflife_center * std::pow(grid.beta1_halflife_factor, c));
          if (uses_beta2) {
            t.beta2 =
                halflife_to_beta(grid.beta2_halflife_center * std::pow(grid.beta2_halflife_factor, d));
          }
          out.push_back(t);
        }
  return out;
}

std::optional<std::size_t> best_record(const std::vector<RunRecord>& records) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].ok()) continue;
    if (!best || records[i].final_val_loss < records[*best].final_val_loss) best = i;
  }
  return best;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path record_path(const std::filesystem::path& out_dir, const RunConfig& cfg) {
  return out_dir / (cfg.rule_name + "-" + hash_hex(config_hash(cfg)) + ".run");
}

std::optional<RunRecord> load_record(const std::filesystem::path& path, const RunConfig& cfg) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    RunRecord r = parse_run_record(read_file(path));
    if (to_text(r.config) != to_text(cfg)) return std::nullopt;
    return r;
  } catch (const ConfigError&) {
    return std::nullopt;  // truncated or foreign file: run again
  }
}

RunRecord run_or_load(const RunConfig& cfg, const std::filesystem::path& out_dir,
                      long* executed_steps, bool* reused) {
  const std::filesystem::path path = record_path(out_dir, cfg);
  if (executed_steps) *executed_steps = 0;
  if (reused) *reused = false;
  if (auto existing = load_record(path, cfg)) {
    if (reused) *reused = true;
    return *existing;
  }
  std::filesystem::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord r = train_run(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(path, serialize(r));
  std::filesystem::path timing = path;
  timing.replace_extension(".time");
  write_file_atomic(timing, format_double(secs) + "\n");
  if (executed_steps) *executed_steps = r.steps_completed;
  return r;
}

namespace {

std::string describe(const HyperTuple& t) {
  std::ostringstream os;
  os << "lr=" << format_double(t.lr) << " wd=" << format_double(t.weight_decay)
     << " beta1=" << format_double(t.beta1);
  if (t.beta2) os << " beta2=" << format_double(*t.beta2);
  return os.str();
}

}  // namespace

bool grid_neighbors(const HyperTuple& a, const HyperTuple& b) {
  const int d = std::abs(a.lr_k - b.lr_k) + std::abs(a.wd_k - b.wd_k) +
                std::abs(a.beta1_k - b.beta1_k) + std::abs(a.beta2_k - b.beta2_k);
  return d == 1;
}

SweepOutcome run_sweep(const SweepGrid& grid, const RunConfig& base,
                       const std::filesystem::path& out_dir, int parallelism) {
  base.validate();
  std::filesystem::create_directories(out_dir);
  SweepOutcome out;
  out.tuples = enumerate_grid(grid, base.rule.uses_beta2());
  const std::size_t n = out.tuples.size();
  out.records.resize(n);
  out.files.resize(n);
  out.reused.assign(n, false);
  std::vector<std::string> errors(n);
  std::vector<long> steps(n, 0);

  std::vector<RunConfig> configs(n, base);
  for (std::size_t i = 0; i < n; ++i) {
    out.tuples[i].apply_to(configs[i].rule);
    out.files[i] = record_path(out_dir, configs[i]);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        bool reused = false;
        out.records[i] = run_or_load(configs[i], out_dir, &steps[i], &reused);
        out.reused[i] = reused;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(parallelism, static_cast<int>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<RunRecord> usable;
  for (std::size_t i = 0; i < n; ++i) {
    out.steps_executed += steps[i];
    if (!errors[i].empty()) {
      out.crashed.push_back(describe(out.tuples[i]) + ": " + errors[i]);
      out.records[i].status = RunStatus::Failed;
      out.records[i].final_val_loss = std::numeric_limits<double>::quiet_NaN();
      out.records[i].reason = "crashed: " + errors[i];
    }
  }
  out.best = best_record(out.records);

  std::ostringstream rep;
  rep << "sweep " << base.rule_name << ": " << n << " runs, "
      << std::count(out.reused.begin(), out.reused.end(), true) << " reused, "
      << out.crashed.size() << " crashed\n";
  for (std::size_t i = 0; i < n; ++i) {
    const RunRecord& r = out.records[i];
    rep << (out.best && *out.best == i ? "* " : "  ") << describe(out.tuples[i]) << "  ";
    if (r.ok()) {
      rep << "val_loss=" << format_double(r.final_val_loss);
    } else {
      rep << "failed (" << r.reason << ")";
    }
    rep << "\n";
  }
  if (!out.best) {
    rep << "all runs failed; no best configuration\n";
  } else {
    const HyperTuple& b = out.tuples[*out.best];
    const double best_loss = out.records[*out.best].final_val_loss;
    const bool b2 = base.rule.uses_beta2();
    int axes = 0;
    for (int span : {grid.lr_span, grid.wd_span, grid.beta1_span, b2 ? grid.beta2_span : 0}) {
      axes += span > 0 ? 1 : 0;
    }
    int present = 0;
    bool improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!grid_neighbors(out.tuples[i], b)) continue;
      ++present;
      if (out.records[i].ok() && out.records[i].final_val_loss < best_loss) improved = true;
    }
    out.locally_optimal = !improved && present == 2 * axes;
    rep << "best: " << describe(b) << " val_loss=" << format_double(best_loss) << "\n";
    rep << (out.locally_optimal ? "locally optimal: every one-step neighbor is no better\n"
                                : "not declared locally optimal: the best point has a missing or "
                                  "better neighbor\n");
  }
  out.report = rep.str();
  write_file_atomic(out_dir / (base.rule_name + "-" + std::to_string(base.workload.total_steps) +
                               "steps-sweep.txt"),
                    out.report);
  return out;
}

}  // namespace mw
