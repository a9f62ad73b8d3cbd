#pragma once

// Acceptance suite. The exact checks compare the kernels against independent
// oracles; the directional checks train the default TinyLM with every
// optimizer of interest and compare tuned final losses.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mw {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

/// "criterion <id> PASS|FAIL <name>: <detail>"
std::string format_result(const CriterionResult& r);

using Logger = std::function<void(const std::string&)>;

/// Criteria 1-8. `scratch` holds the sweep directories of the determinism check.
std::vector<CriterionResult> verify_exact(const std::filesystem::path& scratch, const Logger& log);

struct DirectionalOptions {
  /// Run records are cached here and reused on later invocations.
  std::filesystem::path cache_dir;
  int parallelism = 1;
  /// TinyLM steps per run at the reference budget.
  int total_steps = 1000;
  int warmup_steps = 20;
};

/// Criteria 9-15.
std::vector<CriterionResult> verify_directional(const DirectionalOptions& opt, const Logger& log);

}  // namespace mw
