#pragma once

// Training loop, parameter grouping and the RunRecord file format.
//
// RunRecord text:
//   [config]    canonical RunConfig text (sections prefixed with "config.")
//   [assignment] parameter class = rule | fallback | fixed_adam
//   [steps]     CSV: step,lr,train_loss,max_sv,mean_sv (probe columns empty
//               on steps without a probe)
//   [result]    status, steps_completed, final_val_loss, reason

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mw/config.hpp"

namespace mw {

/// Multiplier on a group's peak lr at 0-based step t: linear warmup
/// (t + 1) / warmup for t < warmup, then cosine decay reaching 0 at t = total.
double lr_multiplier(long t, int warmup_steps, int total_steps);

enum class GroupAssignment { Rule, Fallback, FixedAdam };
std::string_view to_string(GroupAssignment g);
GroupAssignment parse_group_assignment(std::string_view s);

struct ParamGroup {
  ParamClass cls;
  GroupAssignment assignment;
  UpdateRuleSpec spec;
};

/// One group per parameter class present in `layout`, in first-seen order.
std::vector<ParamGroup> assign_groups(const RunConfig& cfg, const std::vector<ParamInfo>& layout);

/// The Adam spec used for a fixed group.
UpdateRuleSpec fixed_adam_spec(const FixedAdamConfig& f, ParamClass cls);

enum class RunStatus { Completed, Failed };

struct StepRow {
  long step = 0;
  double lr = 0.0;  ///< multiplier times the rule's peak lr
  double train_loss = 0.0;
  std::optional<double> max_sv;
  std::optional<double> mean_sv;
};

struct RunRecord {
  RunConfig config;
  std::vector<std::pair<ParamClass, GroupAssignment>> groups;
  std::vector<StepRow> steps;
  RunStatus status = RunStatus::Completed;
  long steps_completed = 0;
  /// NaN for failed runs.
  double final_val_loss = 0.0;
  std::string reason;

  [[nodiscard]] bool ok() const { return status == RunStatus::Completed; }
};

std::string serialize(const RunRecord& r);
/// Throws ConfigError on malformed text.
RunRecord parse_run_record(std::string_view text);

struct TrainOutput {
  RunRecord record;
  std::vector<Mat> params;  ///< parameters after the last completed step
};

/// Runs cfg.workload.total_steps steps. Divergence (loss above
/// divergence_factor × step-0 loss for divergence_patience consecutive steps)
/// and numeric failures end the run early with status Failed.
TrainOutput train(const RunConfig& cfg);
inline RunRecord train_run(const RunConfig& cfg) { return train(cfg).record; }

}  // namespace mw
