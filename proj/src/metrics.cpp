#include "mw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mw {

SpreadSeries spread_series(const RunRecord& r) {
  SpreadSeries s;
  for (const StepRow& row : r.steps) {
    if (!row.max_sv || !row.mean_sv || !(*row.mean_sv > 0.0)) continue;
    s.steps.push_back(row.step);
    s.max_sv.push_back(*row.max_sv);
    s.mean_sv.push_back(*row.mean_sv);
    s.ratio.push_back(*row.max_sv / *row.mean_sv);
  }
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SpreadStats> spread_summary(const std::vector<RunRecord>& records) {
  std::map<std::string, std::pair<std::size_t, std::vector<double>>> pooled;
  for (const RunRecord& r : records) {
    const SpreadSeries s = spread_series(r);
    if (s.ratio.empty()) continue;
    auto& [runs, ratios] = pooled[r.config.rule_name];
    ++runs;
    ratios.insert(ratios.end(), s.ratio.begin(), s.ratio.end());
  }
  std::vector<SpreadStats> out;
  for (const auto& [name, entry] : pooled) {
    const auto& [runs, ratios] = entry;
    SpreadStats st;
    st.optimizer = name;
    st.runs = runs;
    st.samples = ratios.size();
    st.median_ratio = median(ratios);
    st.min_ratio = *std::min_element(ratios.begin(), ratios.end());
    st.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    out.push_back(st);
  }
  return out;
}

std::string spread_table(const std::vector<SpreadStats>& rows) {
  std::ostringstream os;
  os << "optimizer,runs,samples,median_ratio,min_ratio,max_ratio\n";
  for (const SpreadStats& s : rows) {
    os << s.optimizer << "," << s.runs << "," << s.samples << "," << format_double(s.median_ratio)
       << "," << format_double(s.min_ratio) << "," << format_double(s.max_ratio) << "\n";
  }
  return os.str();
}

// --- ablation table ---------------------------------------------------------

std::string_view to_string(BasisFamily f) {
  switch (f) {
    case BasisFamily::Elementwise: return "elementwise";
    case BasisFamily::ShampooBasis: return "shampoo_basis";
    case BasisFamily::NewtonSchulz: return "newton_schulz";
  }
  return "?";
}

std::string_view to_string(NormalizerVariant v) {
  switch (v) {
    case NormalizerVariant::Sign: return "sign";
    case NormalizerVariant::SignLookahead: return "sign_lookahead";
    case NormalizerVariant::VarianceFullTiedBetas: return "variance_full_tied_betas";
    case NormalizerVariant::VarianceFactorized: return "variance_factorized";
    case NormalizerVariant::VarianceFull: return "variance_full";
  }
  return "?";
}

std::optional<AblationCellId> ablation_cell(const UpdateRuleSpec& spec) {
  if (spec.direct_shampoo || spec.sides != PreconditionSides::Both) return std::nullopt;
  BasisFamily family = BasisFamily::Elementwise;
  switch (spec.basis) {
    case BasisKind::Identity: family = BasisFamily::Elementwise; break;
    case BasisKind::ShampooEigenbasis: family = BasisFamily::ShampooBasis; break;
    case BasisKind::NewtonSchulz: family = BasisFamily::NewtonSchulz; break;
  }
  const NormalizerVariant full =
      spec.beta1 == spec.beta2 ? NormalizerVariant::VarianceFullTiedBetas : NormalizerVariant::VarianceFull;

  if (spec.post == PostNormalizerKind::None) {
    switch (spec.normalizer) {
      case NormalizerKind::Sign: return AblationCellId{family, NormalizerVariant::Sign};
      case NormalizerKind::SignLookahead: return AblationCellId{family, NormalizerVariant::SignLookahead};
      case NormalizerKind::VarianceFactorized:
        return AblationCellId{family, NormalizerVariant::VarianceFactorized};
      case NormalizerKind::VarianceFull: return AblationCellId{family, full};
    }
    return std::nullopt;
  }
  // Variance after orthogonalization stands in for the variance normalizer
  // of the Newton-Schulz family.
  if (family != BasisFamily::NewtonSchulz || spec.normalizer != NormalizerKind::Sign) return std::nullopt;
  if (spec.post == PostNormalizerKind::VarianceFullOriginalBasis) return AblationCellId{family, full};
  return AblationCellId{family, NormalizerVariant::VarianceFactorized};
}

std::vector<AblationCell> ablation_table(const std::vector<RunRecord>& records) {
  std::vector<AblationCell> cells;
  for (BasisFamily f : {BasisFamily::Elementwise, BasisFamily::ShampooBasis, BasisFamily::NewtonSchulz}) {
    for (NormalizerVariant v : {NormalizerVariant::Sign, NormalizerVariant::SignLookahead,
                                NormalizerVariant::VarianceFullTiedBetas,
                                NormalizerVariant::VarianceFactorized, NormalizerVariant::VarianceFull}) {
      cells.push_back({{f, v}, 0, std::nullopt});
    }
  }
  for (const RunRecord& r : records) {
    if (!r.ok() || r.config.rule_classes.size() != 4) continue;
    const auto id = ablation_cell(r.config.rule);
    if (!id) continue;
    AblationCell& c = *std::find_if(cells.begin(), cells.end(),
                                    [&](const AblationCell& x) { return x.id == *id; });
    ++c.runs;
    // Ties go to the lexicographically smaller config so the result does not
    // depend on record order.
    if (!c.best || r.final_val_loss < c.best->final_val_loss ||
        (r.final_val_loss == c.best->final_val_loss && to_text(r.config) < to_text(c.best->config))) {
      c.best = r;
    }
  }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "family,normalizer,runs,final_val_loss,optimizer,lr,weight_decay,beta1,beta2,beta3\n";
  for (const AblationCell& c : cells) {
    os << to_string(c.id.family) << "," << to_string(c.id.variant) << "," << c.runs << ",";
    if (!c.best) {
      os << "absent,,,,,,\n";
      continue;
    }
    const UpdateRuleSpec& s = c.best->config.rule;
    os << format_double(c.best->final_val_loss) << "," << c.best->config.rule_name << ","
       << format_double(s.lr) << "," << format_double(s.weight_decay) << "," << format_double(s.beta1)
       << "," << (s.uses_beta2() ? format_double(s.beta2) : "-") << ","
       << (s.uses_beta3() ? format_double(s.beta3) : "-") << "\n";
  }
  return os.str();
}

std::optional<double> error_band(const SweepOutcome& sweep) {
  if (!sweep.best) return std::nullopt;
  const std::size_t b = *sweep.best;
  std::optional<double> band;
  for (std::size_t i = 0; i < sweep.tuples.size(); ++i) {
    if (!sweep.records[i].ok() || !grid_neighbors(sweep.tuples[i], sweep.tuples[b])) continue;
    const double d = std::abs(sweep.records[i].final_val_loss - sweep.records[b].final_val_loss);
    band = band ? std::min(*band, d) : d;
  }
  return band;
}

// --- Adam-equivalent steps --------------------------------------------------

std::vector<long> default_budget_grid(long total_steps) {
  std::vector<long> out;
  for (int k = 5; k <= 15; ++k) out.push_back(std::lround(static_cast<double>(total_steps) * k / 10.0));
  return out;
}

AdamEquivalence adam_equivalent_steps(double target_loss, const std::vector<long>& budgets,
                                      long total_steps, const BudgetRunner& runner) {
  if (budgets.empty()) throw ConfigError("adam equivalence: empty budget grid");
  if (total_steps <= 0) throw ConfigError("adam equivalence: total_steps must be positive");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] <= 0 || (i > 0 && budgets[i] <= budgets[i - 1])) {
      throw ConfigError("adam equivalence: budgets must be positive and strictly increasing");
    }
  }
  const long width = budgets.size() > 1 ? budgets[1] - budgets[0] : budgets[0];
  const double t0 = static_cast<double>(total_steps);

  AdamEquivalence e;
  e.target_loss = target_loss;
  e.total_steps = total_steps;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    const double loss = runner(budgets[i]);
    e.budgets.push_back(budgets[i]);
    e.losses_at_budget.push_back(loss);
    if (std::isfinite(loss) && loss <= target_loss) {
      e.t_upper = budgets[i];
      e.t_lower = i > 0 ? budgets[i - 1] : budgets[i] - width;
      e.lower_fraction = t0 / static_cast<double>(*e.t_upper);
      e.upper_fraction = e.t_lower > 0 ? t0 / static_cast<double>(e.t_lower)
                                       : std::numeric_limits<double>::infinity();
      return e;
    }
  }
  e.t_lower = budgets.back();
  e.lower_fraction = 0.0;
  e.upper_fraction = t0 / static_cast<double>(budgets.back());
  return e;
}

BudgetRunner sweep_budget_runner(const RunConfig& base, const SweepGrid& grid,
                                 const std::filesystem::path& dir, int parallelism) {
  SweepGrid lr_only = grid;
  lr_only.wd_span = lr_only.beta1_span = lr_only.beta2_span = 0;
  return [base, lr_only, dir, parallelism](long budget) {
    RunConfig cfg = base;
    cfg.workload.total_steps = static_cast<int>(budget);
    const SweepOutcome s = run_sweep(lr_only, cfg, dir, parallelism);
    return s.best ? s.records[*s.best].final_val_loss : std::numeric_limits<double>::quiet_NaN();
  };
}

std::string to_text(const AdamEquivalence& e) {
  std::ostringstream os;
  os << "target_loss = " << format_double(e.target_loss) << "\n";
  os << "total_steps = " << e.total_steps << "\n";
  os << "budget,final_val_loss\n";
  for (std::size_t i = 0; i < e.budgets.size(); ++i) {
    os << e.budgets[i] << "," << format_double(e.losses_at_budget[i]) << "\n";
  }
  if (e.reached()) {
    os << "adam steps in (" << e.t_lower << ", " << *e.t_upper << "]\n";
  } else {
    os << "adam steps > " << e.t_lower << " (target not reached)\n";
  }
  os << "equivalent fraction in [" << format_double(e.lower_fraction) << ", "
     << format_double(e.upper_fraction) << ")\n";
  return os.str();
}

}  // namespace mw
