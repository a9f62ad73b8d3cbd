#pragma once

// Hyperparameter grids and the sweep runner.
//
// Learning rate and weight decay move multiplicatively around their centers.
// β1 and β2 move in half-life space: h → h·factor^k, then β = 0.5^{1/h}.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mw/config.hpp"
#include "mw/train.hpp"

namespace mw {

/// β = 0.5^{1/h}. Throws ConfigError for h ≤ 0.
double halflife_to_beta(double h);
/// h = ln 0.5 / ln β. Throws ConfigError unless 0 < β < 1.
double beta_to_halflife(double beta);

struct SweepGrid {
  double lr_center = 1e-3;
  double lr_factor = 1.333521432163324;  // 10^{1/8}
  int lr_span = 1;
  double wd_center = 0.0;
  double wd_factor = 1.7782794100389228;  // 10^{1/4}
  int wd_span = 0;
  double beta1_halflife_center = 6.578813478960585;  // β1 = 0.9
  double beta1_halflife_factor = 1.7782794100389228;  // 10^{1/4}
  int beta1_span = 0;
  double beta2_halflife_center = 68.96756393652842;  // β2 = 0.99
  double beta2_halflife_factor = 3.1622776601683795;  // 10^{1/2}
  int beta2_span = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Reads the [sweep] section; absent keys keep their defaults.
SweepGrid read_sweep_grid(KeyValues& kv);
std::string to_text(const SweepGrid& g);

struct HyperTuple {
  /// Grid offsets from the centers, in [−span, span]. Inactive axes stay 0.
  int lr_k = 0, wd_k = 0, beta1_k = 0, beta2_k = 0;
  double lr = 0.0;
  double weight_decay = 0.0;
  double beta1 = 0.0;
  std::optional<double> beta2;  ///< absent when the rule has no variance buffer

  void apply_to(UpdateRuleSpec& spec) const;
};

/// Lexicographic in (lr, wd, β1, β2), each axis ascending. The β2 axis is
/// dropped when `uses_beta2` is false.
std::vector<HyperTuple> enumerate_grid(const SweepGrid& grid, bool uses_beta2);

/// One step apart along exactly one axis.
bool grid_neighbors(const HyperTuple& a, const HyperTuple& b);

struct SweepOutcome {
  std::vector<HyperTuple> tuples;
  std::vector<RunRecord> records;  ///< same order as tuples
  std::vector<std::filesystem::path> files;
  std::vector<bool> reused;        ///< loaded from an existing record
  std::vector<std::string> crashed;  ///< one message per run that threw
  long steps_executed = 0;
  std::optional<std::size_t> best;
  /// Every one-step neighbor of the best tuple exists and is no better.
  bool locally_optimal = false;
  std::string report;
};

/// Runs every grid point of `base` (its rule hyperparameters overridden),
/// using up to `parallelism` threads. Each run writes
/// `out_dir/<rule_name>-<config hash>.run`; existing valid records are
/// reused. Wall-clock seconds per executed run go to a `.time` file next to
/// the record, outside the record itself. The report goes to
/// `out_dir/<rule_name>-<total_steps>steps-sweep.txt`.
SweepOutcome run_sweep(const SweepGrid& grid, const RunConfig& base,
                       const std::filesystem::path& out_dir, int parallelism);

/// Index of the lowest final validation loss among completed records.
std::optional<std::size_t> best_record(const std::vector<RunRecord>& records);

/// Path of the record for `cfg` inside `out_dir`.
std::filesystem::path record_path(const std::filesystem::path& out_dir, const RunConfig& cfg);

/// Loads a record written for exactly this config, if present and valid.
std::optional<RunRecord> load_record(const std::filesystem::path& path, const RunConfig& cfg);

/// Trains `cfg` unless a valid record exists; writes the record either way.
/// Sets *executed_steps to the number of steps trained (0 when reused).
RunRecord run_or_load(const RunConfig& cfg, const std::filesystem::path& out_dir,
                      long* executed_steps = nullptr, bool* reused = nullptr);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace mw
