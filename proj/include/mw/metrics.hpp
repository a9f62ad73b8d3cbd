#pragma once

// Cross-run analysis: update-spectrum spread, the basis × normalizer ablation
// table, Adam-equivalent step counts and error bands.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mw/sweep.hpp"
#include "mw/train.hpp"

namespace mw {

/// Probe rows of one run. ratio[i] = max_sv[i] / mean_sv[i].
struct SpreadSeries {
  std::vector<long> steps;
  std::vector<double> max_sv;
  std::vector<double> mean_sv;
  std::vector<double> ratio;
};

SpreadSeries spread_series(const RunRecord& r);

struct SpreadStats {
  std::string optimizer;  ///< rule_name
  std::size_t runs = 0;
  std::size_t samples = 0;
  double median_ratio = 0.0;
  double min_ratio = 0.0;
  double max_ratio = 0.0;
};

/// Ratios pooled over all records sharing a rule_name. Rows are sorted by
/// optimizer name; rules without any probe row are left out.
std::vector<SpreadStats> spread_summary(const std::vector<RunRecord>& records);
/// CSV: optimizer,runs,samples,median_ratio,min_ratio,max_ratio
std::string spread_table(const std::vector<SpreadStats>& rows);

double median(std::vector<double> v);

enum class BasisFamily { Elementwise, ShampooBasis, NewtonSchulz };
enum class NormalizerVariant { Sign, SignLookahead, VarianceFullTiedBetas, VarianceFactorized, VarianceFull };
std::string_view to_string(BasisFamily f);
std::string_view to_string(NormalizerVariant v);

struct AblationCellId {
  BasisFamily family;
  NormalizerVariant variant;
  auto operator<=>(const AblationCellId&) const = default;
};

/// Cell of a rule, or nothing for rules outside the table (direct Shampoo,
/// one-sided bases, a post-normalizer on the Shampoo basis).
std::optional<AblationCellId> ablation_cell(const UpdateRuleSpec& spec);

struct AblationCell {
  AblationCellId id;
  std::size_t runs = 0;       ///< completed runs in the cell
  std::optional<RunRecord> best;  ///< absent when no completed run
};

/// All 15 cells in table order. Only records whose rule drives every matrix
/// class count; failed runs are ignored.
std::vector<AblationCell> ablation_table(const std::vector<RunRecord>& records);
/// CSV: family,normalizer,runs,final_val_loss,optimizer,lr,weight_decay,beta1,beta2,beta3
/// with "absent" in place of the loss for empty cells.
std::string ablation_csv(const std::vector<AblationCell>& cells);

/// Smallest |loss(neighbor) − loss(best)| over the completed one-step grid
/// neighbors of the best tuple. Absent without a best run or any completed
/// neighbor.
std::optional<double> error_band(const SweepOutcome& sweep);

struct AdamEquivalence {
  double target_loss = 0.0;
  long total_steps = 0;             ///< reference budget T0
  std::vector<long> budgets;        ///< evaluated budgets, strictly increasing
  std::vector<double> losses_at_budget;  ///< NaN where every run failed
  /// Smallest evaluated budget whose loss is ≤ target; absent if none.
  std::optional<long> t_upper;
  /// The grid bin just below t_upper.
  long t_lower = 0;
  /// (T0 / t_upper, T0 / t_lower). When the target is unreachable the range
  /// is (0, T0 / max budget) with an open upper step bound.
  double lower_fraction = 0.0;
  double upper_fraction = 0.0;
  [[nodiscard]] bool reached() const { return t_upper.has_value(); }
  [[nodiscard]] bool contains(double fraction) const {
    return fraction >= lower_fraction && fraction < upper_fraction;
  }
};

/// Final loss for a budget, NaN when it cannot be obtained.
using BudgetRunner = std::function<double(long budget)>;

/// Evaluates budgets in ascending order and stops at the first one whose
/// loss is ≤ target. `budgets` must be strictly increasing and positive; the
/// bin width is the first gap (or the first budget when only one is given).
/// Throws ConfigError on an invalid grid.
AdamEquivalence adam_equivalent_steps(double target_loss, const std::vector<long>& budgets,
                                      long total_steps, const BudgetRunner& runner);

/// Runner that re-tunes `base` over the lr axis of `grid` (other spans set
/// to 0) at each budget and returns the best final loss. Records go to `dir`
/// and are reused across calls.
BudgetRunner sweep_budget_runner(const RunConfig& base, const SweepGrid& grid,
                                 const std::filesystem::path& dir, int parallelism);

/// {0.5, 0.6, ..., 1.5} × total_steps, rounded to whole steps.
std::vector<long> default_budget_grid(long total_steps);

std::string to_text(const AdamEquivalence& e);

}  // namespace mw
