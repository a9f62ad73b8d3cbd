#include "mw/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mw {

double lr_multiplier(long t, int warmup_steps, int total_steps) {
  if (t < warmup_steps) return static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
  if (t >= total_steps) return 0.0;
  const double progress = static_cast<double>(t - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string_view to_string(GroupAssignment g) {
  switch (g) {
    case GroupAssignment::Rule: return "rule";
    case GroupAssignment::Fallback: return "fallback";
    case GroupAssignment::FixedAdam: return "fixed_adam";
  }
  return "?";
}

GroupAssignment parse_group_assignment(std::string_view s) {
  if (s == "rule") return GroupAssignment::Rule;
  if (s == "fallback") return GroupAssignment::Fallback;
  if (s == "fixed_adam") return GroupAssignment::FixedAdam;
  throw ConfigError("unknown group assignment '" + std::string(s) + "'");
}

UpdateRuleSpec fixed_adam_spec(const FixedAdamConfig& f, ParamClass cls) {
  UpdateRuleSpec s = adam_rule();
  s.lr = f.lr;
  s.beta1 = f.beta1;
  s.beta2 = f.beta2;
  s.eps = f.eps;
  switch (cls) {
    case ParamClass::Embed: s.weight_decay = f.wd_embed; break;
    case ParamClass::OutputHead: s.weight_decay = f.wd_head; break;
    default: s.weight_decay = f.wd_layernorm; break;
  }
  return s;
}

std::vector<ParamGroup> assign_groups(const RunConfig& cfg, const std::vector<ParamInfo>& layout) {
  std::vector<ParamGroup> groups;
  for (const ParamInfo& p : layout) {
    if (std::any_of(groups.begin(), groups.end(), [&](const ParamGroup& g) { return g.cls == p.cls; })) {
      continue;
    }
    if (!is_matrix_class(p.cls)) {
      groups.push_back({p.cls, GroupAssignment::FixedAdam, fixed_adam_spec(cfg.fixed_adam, p.cls)});
    } else if (std::find(cfg.rule_classes.begin(), cfg.rule_classes.end(), p.cls) !=
               cfg.rule_classes.end()) {
      groups.push_back({p.cls, GroupAssignment::Rule, cfg.rule});
    } else {
      groups.push_back({p.cls, GroupAssignment::Fallback, cfg.fallback});
    }
  }
  return groups;
}

// --- record text ------------------------------------------------------------

namespace {

std::string optional_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> optional_value(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

constexpr std::string_view kStepsHeader = "step,lr,train_loss,max_sv,mean_sv";

}  // namespace

std::string serialize(const RunRecord& r) {
  std::ostringstream os;
  os << "[config]\n";
  // The config sections are nested under "config." so the record stays a
  // single flat key=value document apart from the CSV block.
  std::istringstream cfg(to_text(r.config));
  for (std::string line; std::getline(cfg, line);) {
    if (line.starts_with("[")) {
      os << "[config." << line.substr(1) << "\n";
    } else {
      os << line << "\n";
    }
  }
  os << "\n[assignment]\n";
  for (const auto& [cls, g] : r.groups) os << to_string(cls) << " = " << to_string(g) << "\n";
  os << "\n[steps]\n" << kStepsHeader << "\n";
  for (const StepRow& s : r.steps) {
    os << s.step << "," << format_double(s.lr) << "," << format_double(s.train_loss) << ","
       << optional_text(s.max_sv) << "," << optional_text(s.mean_sv) << "\n";
  }
  os << "\n[result]\n";
  os << "status = " << (r.ok() ? "completed" : "failed") << "\n";
  os << "steps_completed = " << r.steps_completed << "\n";
  os << "final_val_loss = " << format_double(r.final_val_loss) << "\n";
  os << "reason = " << (r.reason.empty() ? "-" : r.reason) << "\n";
  return os.str();
}

RunRecord parse_run_record(std::string_view text) {
  const auto steps_at = text.find("\n[steps]\n");
  const auto result_at = text.find("\n[result]\n");
  if (!text.starts_with("[config]\n") || steps_at == std::string_view::npos ||
      result_at == std::string_view::npos || result_at < steps_at) {
    throw ConfigError("run record: missing [config], [steps] or [result] block");
  }
  RunRecord r;

  // Header: everything before [steps], with the "config." prefix stripped.
  std::string header;
  for (std::string_view line : split(text.substr(9, steps_at - 9), '\n')) {
    if (line.starts_with("[config.")) {
      header += "[" + std::string(line.substr(8)) + "\n";
    } else {
      header += std::string(line) + "\n";
    }
  }
  KeyValues kv = KeyValues::parse(header);
  r.config = read_run_config(kv);
  for (ParamClass c : {ParamClass::AttentionQkv, ParamClass::AttentionOut, ParamClass::MlpIn,
                       ParamClass::MlpOut, ParamClass::Embed, ParamClass::OutputHead,
                       ParamClass::LayerNorm}) {
    const std::string key = "assignment." + std::string(to_string(c));
    if (kv.has(key)) r.groups.emplace_back(c, parse_group_assignment(kv.take(key)));
  }
  kv.require_all_consumed();

  const std::string_view csv = text.substr(steps_at + 9, result_at - steps_at - 9);
  bool header_seen = false;
  for (std::string_view line : split(csv, '\n')) {
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kStepsHeader) throw ConfigError("run record: bad [steps] header");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) throw ConfigError("run record: bad step row '" + std::string(line) + "'");
    StepRow s;
    s.step = static_cast<long>(parse_double(f[0]));
    s.lr = parse_double(f[1]);
    s.train_loss = parse_double(f[2]);
    s.max_sv = optional_value(f[3]);
    s.mean_sv = optional_value(f[4]);
    r.steps.push_back(s);
  }

  KeyValues res = KeyValues::parse(text.substr(result_at + 1));
  const std::string status = res.take("result.status");
  if (status == "completed") {
    r.status = RunStatus::Completed;
  } else if (status == "failed") {
    r.status = RunStatus::Failed;
  } else {
    throw ConfigError("run record: unknown status '" + status + "'");
  }
  r.steps_completed = res.take_long("result.steps_completed", 0);
  r.final_val_loss = parse_double(res.take("result.final_val_loss"));
  r.reason = res.take("result.reason");
  if (r.reason == "-") r.reason.clear();
  res.require_all_consumed();
  return r;
}

// --- training ---------------------------------------------------------------

TrainOutput train(const RunConfig& cfg) {
  cfg.validate();
  const std::unique_ptr<Workload> w = make_workload(cfg.workload);
  const std::vector<ParamInfo>& layout = w->layout();
  const std::vector<ParamGroup> groups = assign_groups(cfg, layout);

  TrainOutput out;
  RunRecord& rec = out.record;
  rec.config = cfg;
  for (const ParamGroup& g : groups) rec.groups.emplace_back(g.cls, g.assignment);
  std::sort(rec.groups.begin(), rec.groups.end());

  std::vector<const UpdateRuleSpec*> spec_of;
  std::vector<OptimState> states;
  std::optional<std::size_t> probe;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto g = std::find_if(groups.begin(), groups.end(),
                                [&](const ParamGroup& pg) { return pg.cls == layout[i].cls; });
    spec_of.push_back(&g->spec);
    states.push_back(make_state(g->spec, layout[i].rows, layout[i].cols, layout[i].name));
    if (layout[i].name == cfg.probe) probe = i;
  }
  if (!cfg.probe.empty() && !probe) {
    throw ConfigError("train: probe parameter '" + cfg.probe + "' not in the workload");
  }

  out.params = w->init_params(cfg.workload.seed);
  std::vector<Mat>& params = out.params;
  const int total = cfg.workload.total_steps;
  double init_loss = 0.0;
  int above = 0;

  auto fail = [&](std::string reason) {
    rec.status = RunStatus::Failed;
    rec.reason = std::move(reason);
    rec.final_val_loss = std::numeric_limits<double>::quiet_NaN();
  };

  for (long t = 0; t < total; ++t) {
    const double mult = lr_multiplier(t, cfg.workload.warmup_steps, total);
    StepRow row;
    row.step = t;
    row.lr = mult * cfg.rule.lr;
    try {
      const LossAndGrads lg = w->loss_and_grads(params, w->next_batch(t));
      row.train_loss = lg.loss;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Mat u = step(*spec_of[i], states[i], lg.grads[i], params[i], mult * spec_of[i]->lr);
        if (probe && i == *probe && t % cfg.probe_every == 0 && max_abs(u) > 0.0) {
          const SpectralSpread s = singular_value_spread(u);
          row.max_sv = s.max_sv;
          row.mean_sv = s.mean_sv;
        }
      }
    } catch (const NumericError& e) {
      fail(std::string("numeric error at step ") + std::to_string(t) + ": " + e.what());
      break;
    }
    rec.steps.push_back(row);
    rec.steps_completed = t + 1;
    if (t == 0) init_loss = row.train_loss;
    above = init_loss > 0.0 && row.train_loss > cfg.divergence_factor * init_loss ? above + 1 : 0;
    if (above >= cfg.divergence_patience) {
      fail("diverged: loss above " + format_double(cfg.divergence_factor) + "x the initial loss for " +
           std::to_string(above) + " steps");
      break;
    }
  }

  if (rec.ok()) {
    try {
      rec.final_val_loss = w->validation_loss(params);
    } catch (const NumericError& e) {
      fail(std::string("numeric error in validation: ") + e.what());
    }
  }
  // The reason lands on one key=value line.
  std::replace(rec.reason.begin(), rec.reason.end(), '\n', ' ');
  std::replace(rec.reason.begin(), rec.reason.end(), '#', ' ');
  return out;
}

}  // namespace mw
