#pragma once

// Line-oriented configuration text:
//
//   # comment
//   [section]
//   key = value
//
// A run is described by the sections workload, rule, groups, fallback,
// fixed_adam and train. to_text() writes every field in a fixed order, so the
// canonical text and its hash identify a run.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mw/optim.hpp"
#include "mw/workload.hpp"

namespace mw {

/// Parsed key=value text. Keys are stored as "section.key".
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);

  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
  [[nodiscard]] bool has_section(std::string_view section) const;
  /// Value for `key`, marking it consumed. Throws ConfigError when absent.
  std::string take(const std::string& key);
  [[nodiscard]] std::string take_or(const std::string& key, std::string fallback);
  double take_double(const std::string& key, double fallback);
  long take_long(const std::string& key, long fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);
  bool take_bool(const std::string& key, bool fallback);
  /// Throws ConfigError naming the first key nobody consumed.
  void require_all_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

/// Writes a double so that parsing it back gives the same bits.
std::string format_double(double x);
double parse_double(std::string_view s);

/// Adam settings for the embed, output-head and layernorm groups.
struct FixedAdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double wd_embed = 0.0;
  double wd_head = 0.001;
  double wd_layernorm = 0.0;
};

struct RunConfig {
  WorkloadSpec workload;
  /// Short label for reports, e.g. "soap-10". When it names a known rule the
  /// rule section starts from that rule's settings.
  std::string rule_name = "adam";
  UpdateRuleSpec rule = adam_rule();
  /// Matrix classes optimized by `rule`; other matrix classes use `fallback`.
  std::vector<ParamClass> rule_classes = {ParamClass::AttentionQkv, ParamClass::AttentionOut,
                                          ParamClass::MlpIn, ParamClass::MlpOut};
  UpdateRuleSpec fallback = adam_rule();
  FixedAdamConfig fixed_adam;
  /// Parameter whose update spectrum is logged; empty disables probing.
  std::string probe = "blocks.0.mlp.in";
  int probe_every = 10;
  double divergence_factor = 10.0;
  int divergence_patience = 50;

  /// Throws ConfigError.
  void validate() const;
};

/// Reads the run sections of `kv`; other sections are left for the caller.
RunConfig read_run_config(KeyValues& kv);
RunConfig parse_run_config(std::string_view text);
std::string to_text(const RunConfig& cfg);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);
/// Hash of the canonical text.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);

std::string_view to_string(WorkloadKind k);
WorkloadKind parse_workload_kind(std::string_view s);

}  // namespace mw
