// mwopt: run, sweep, report and verify from the command line.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "mw/metrics.hpp"
#include "mw/sweep.hpp"
#include "mw/train.hpp"
#include "mw/verify.hpp"

namespace fs = std::filesystem;
using namespace mw;

namespace {

struct Loaded {
  RunConfig run;
  SweepGrid grid;
};

Loaded load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  KeyValues kv = KeyValues::parse(path.empty() ? std::string() : read_file(path));
  Loaded out;
  out.run = read_run_config(kv);
  out.grid = read_sweep_grid(kv);
  kv.require_all_consumed();
  if (seed) out.run.workload.seed = *seed;
  out.run.validate();
  out.grid.validate();
  return out;
}

std::vector<RunRecord> load_records(const fs::path& dir) {
  std::vector<RunRecord> out;
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".run") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    try {
      out.push_back(parse_run_record(read_file(f)));
    } catch (const ConfigError& e) {
      std::cerr << "skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  return out;
}

int cmd_run(const std::string& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  const Loaded c = load_config(config, seed);
  long steps = 0;
  bool reused = false;
  const RunRecord r = run_or_load(c.run, out, &steps, &reused);
  std::cout << record_path(out, c.run).string() << (reused ? " (reused)" : "") << "\n";
  if (r.ok()) {
    std::cout << "completed " << r.steps_completed << " steps, final_val_loss "
              << format_double(r.final_val_loss) << "\n";
  } else {
    std::cout << "failed after " << r.steps_completed << " steps: " << r.reason << "\n";
  }
  return 0;
}

int cmd_sweep(const std::string& config, const fs::path& out, int parallel,
              std::optional<std::uint64_t> seed) {
  const Loaded c = load_config(config, seed);
  const SweepOutcome s = run_sweep(c.grid, c.run, out, parallel);
  std::cout << s.report;
  for (const std::string& e : s.crashed) std::cerr << "crashed: " << e << "\n";
  return s.crashed.empty() ? 0 : 1;
}

int cmd_report(const fs::path& out, const std::string& config, std::optional<double> target,
               int parallel, std::optional<std::uint64_t> seed) {
  const std::vector<RunRecord> records = load_records(out);
  std::cout << records.size() << " run records under " << out.string() << "\n\n";

  const std::string spread = spread_table(spread_summary(records));
  const std::string ablation = ablation_csv(ablation_table(records));
  fs::create_directories(out);
  write_file_atomic(out / "spread.csv", spread);
  write_file_atomic(out / "ablation.csv", ablation);
  std::cout << "spread (max/mean singular value of the probed update)\n" << spread << "\n";
  std::cout << "ablation\n" << ablation;

  if (target) {
    if (config.empty()) throw ConfigError("report: --target needs --config with the Adam base run");
    const Loaded c = load_config(config, seed);
    const long t0 = c.run.workload.total_steps;
    const AdamEquivalence e = adam_equivalent_steps(
        *target, default_budget_grid(t0), t0, sweep_budget_runner(c.run, c.grid, out, parallel));
    std::cout << "\nadam-equivalent steps\n" << to_text(e);
  }
  return 0;
}

int cmd_verify(const fs::path& out, int parallel, bool directional, int total_steps, int warmup_steps) {
  const Logger log = [](const std::string& s) { std::cerr << s << "\n"; };
  std::vector<CriterionResult> results = verify_exact(out / "exact", log);
  if (directional) {
    DirectionalOptions opt;
    opt.cache_dir = out / "directional";
    opt.parallelism = parallel;
    opt.total_steps = total_steps;
    opt.warmup_steps = warmup_steps;
    for (auto& r : verify_directional(opt, log)) results.push_back(std::move(r));
  }
  bool ok = true;
  for (const CriterionResult& r : results) {
    std::cout << format_result(r) << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix-whitening optimizer experiments"};
  app.require_subcommand(1);

  std::string config;
  std::string out = "runs";
  int parallel = 1;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the parameter initialization seed");
  };

  CLI::App* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  add_common(run);

  CLI::App* sweep = app.add_subcommand("sweep", "Run every point of a sweep grid");
  sweep->add_option("--config", config, "Config file with a [sweep] section")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  add_common(sweep);

  std::optional<double> target;
  CLI::App* report = app.add_subcommand("report", "Summarize the run records in --out");
  report->add_option("--config", config, "Adam base config for --target")->check(CLI::ExistingFile);
  report->add_option("--target", target, "Loss target for the Adam-equivalent step count");
  report->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  add_common(report);

  bool directional = false;
  int total_steps = 1000;
  int warmup_steps = 20;
  CLI::App* verify = app.add_subcommand("verify", "Run the acceptance checks");
  verify->add_flag("--directional", directional, "Also run the TinyLM training comparisons");
  verify->add_option("--steps", total_steps, "Reference budget of the training comparisons")
      ->capture_default_str();
  verify->add_option("--warmup", warmup_steps, "Warmup steps of the training comparisons")
      ->capture_default_str();
  verify->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  verify->add_option("--out", out, "Scratch and cache directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, out, seed);
    if (*sweep) return cmd_sweep(config, out, parallel, seed);
    if (*report) return cmd_report(out, config, target, parallel, seed);
    if (*verify) return cmd_verify(out, parallel, directional, total_steps, warmup_steps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
