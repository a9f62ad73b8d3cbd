#include "mw/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace mw {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const std::string_view item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

void read_rule(KeyValues& kv, const std::string& section, UpdateRuleSpec& r) {
  auto key = [&](const char* k) { return section + "." + k; };
  if (kv.has(key("basis"))) r.basis = parse_basis(kv.take(key("basis")));
  r.refresh_interval = static_cast<int>(kv.take_long(key("refresh_interval"), r.refresh_interval));
  r.ns_iters = static_cast<int>(kv.take_long(key("ns_iters"), r.ns_iters));
  if (kv.has(key("normalizer"))) r.normalizer = parse_normalizer(kv.take(key("normalizer")));
  r.beta3 = kv.take_double(key("beta3"), r.beta3);
  if (kv.has(key("post"))) r.post = parse_post(kv.take(key("post")));
  r.direct_shampoo = kv.take_bool(key("direct_shampoo"), r.direct_shampoo);
  r.lr = kv.take_double(key("lr"), r.lr);
  r.weight_decay = kv.take_double(key("weight_decay"), r.weight_decay);
  r.beta1 = kv.take_double(key("beta1"), r.beta1);
  r.beta2 = kv.take_double(key("beta2"), r.beta2);
  r.eps = kv.take_double(key("eps"), r.eps);
  r.matrix_eps = kv.take_double(key("matrix_eps"), r.matrix_eps);
  if (kv.has(key("sides"))) r.sides = parse_sides(kv.take(key("sides")));
  r.bias_correction = kv.take_bool(key("bias_correction"), r.bias_correction);
}

void write_rule(std::ostringstream& os, const UpdateRuleSpec& r) {
  os << "basis = " << to_string(r.basis) << "\n";
  os << "refresh_interval = " << r.refresh_interval << "\n";
  os << "ns_iters = " << r.ns_iters << "\n";
  os << "normalizer = " << to_string(r.normalizer) << "\n";
  os << "beta3 = " << format_double(r.beta3) << "\n";
  os << "post = " << to_string(r.post) << "\n";
  os << "direct_shampoo = " << bool_text(r.direct_shampoo) << "\n";
  os << "lr = " << format_double(r.lr) << "\n";
  os << "weight_decay = " << format_double(r.weight_decay) << "\n";
  os << "beta1 = " << format_double(r.beta1) << "\n";
  os << "beta2 = " << format_double(r.beta2) << "\n";
  os << "eps = " << format_double(r.eps) << "\n";
  os << "matrix_eps = " << format_double(r.matrix_eps) << "\n";
  os << "sides = " << to_string(r.sides) << "\n";
  os << "bias_correction = " << bool_text(r.bias_correction) << "\n";
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::string section;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + msg);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    if (section.empty()) fail("key outside of any section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    if (kv.values_.contains(key)) fail("duplicate key '" + key + "'");
    kv.values_[key] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

bool KeyValues::has_section(std::string_view section) const {
  const std::string prefix = std::string(section) + ".";
  const auto it = values_.lower_bound(prefix);
  return it != values_.end() && it->first.starts_with(prefix);
}

std::string KeyValues::take(const std::string& key) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValues::take_or(const std::string& key, std::string fallback) {
  return has(key) ? take(key) : std::move(fallback);
}

double KeyValues::take_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  try {
    return parse_double(take(key));
  } catch (const ConfigError& e) {
    throw ConfigError("config: " + key + ": " + e.what());
  }
}

long KeyValues::take_long(const std::string& key, long fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t KeyValues::take_u64(const std::string& key, std::uint64_t fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool KeyValues::take_bool(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const std::string v = take(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + ": expected true or false, got '" + v + "'");
}

void KeyValues::require_all_consumed() const {
  for (const auto& [key, value] : values_) {
    if (!consumed_.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
}

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected a number, got '" + std::string(s) + "'");
  }
  return out;
}

std::string_view to_string(WorkloadKind k) {
  return k == WorkloadKind::NoisyQuadratic ? "noisy_quadratic" : "tinylm";
}

WorkloadKind parse_workload_kind(std::string_view s) {
  if (s == "noisy_quadratic") return WorkloadKind::NoisyQuadratic;
  if (s == "tinylm") return WorkloadKind::TinyLM;
  throw ConfigError("unknown workload kind '" + std::string(s) + "'");
}

void RunConfig::validate() const {
  workload.validate();
  rule.validate();
  fallback.validate();
  if (rule_name.empty() || rule_name.find_first_of(" \t\n=#[]") != std::string::npos) {
    throw ConfigError("rule name must be a nonempty word");
  }
  for (ParamClass c : rule_classes) {
    if (!is_matrix_class(c)) {
      throw ConfigError("rule_classes: '" + std::string(to_string(c)) +
                        "' is always optimized by the fixed Adam group");
    }
  }
  const FixedAdamConfig& f = fixed_adam;
  if (!(f.lr >= 0.0) || !(f.beta1 >= 0.0 && f.beta1 < 1.0) || !(f.beta2 >= 0.0 && f.beta2 < 1.0) ||
      !(f.eps >= 0.0) || !(f.wd_embed >= 0.0) || !(f.wd_head >= 0.0) || !(f.wd_layernorm >= 0.0)) {
    throw ConfigError("fixed_adam: values out of range");
  }
  if (probe_every < 1) throw ConfigError("train: probe_every must be >= 1");
  if (!(divergence_factor > 1.0)) throw ConfigError("train: divergence_factor must be > 1");
  if (divergence_patience < 1) throw ConfigError("train: divergence_patience must be >= 1");
}

RunConfig read_run_config(KeyValues& kv) {
  RunConfig c;
  WorkloadSpec& w = c.workload;
  w.kind = parse_workload_kind(kv.take_or("workload.kind", "tinylm"));
  w.quadratic.dim = static_cast<int>(kv.take_long("workload.dim", w.quadratic.dim));
  w.quadratic.noise_scale = kv.take_double("workload.noise_scale", w.quadratic.noise_scale);
  w.quadratic.condition = kv.take_double("workload.condition", w.quadratic.condition);
  w.lm.layers = static_cast<int>(kv.take_long("workload.layers", w.lm.layers));
  w.lm.d_model = static_cast<int>(kv.take_long("workload.d_model", w.lm.d_model));
  w.lm.heads = static_cast<int>(kv.take_long("workload.heads", w.lm.heads));
  w.lm.vocab = static_cast<int>(kv.take_long("workload.vocab", w.lm.vocab));
  w.lm.seq_len = static_cast<int>(kv.take_long("workload.seq_len", w.lm.seq_len));
  w.batch_size = static_cast<int>(kv.take_long("workload.batch_size", w.batch_size));
  w.total_steps = static_cast<int>(kv.take_long("workload.total_steps", w.total_steps));
  w.warmup_steps = static_cast<int>(kv.take_long("workload.warmup_steps", w.warmup_steps));
  w.seed = kv.take_u64("workload.seed", w.seed);
  w.data_seed = kv.take_u64("workload.data_seed", w.data_seed);

  c.rule_name = kv.take_or("rule.name", c.rule_name);
  try {
    c.rule = named_rule(c.rule_name);
  } catch (const ConfigError&) {
    c.rule = UpdateRuleSpec{};
  }
  read_rule(kv, "rule", c.rule);
  read_rule(kv, "fallback", c.fallback);

  if (kv.has("groups.rule_classes")) {
    c.rule_classes.clear();
    for (const std::string& name : split_list(kv.take("groups.rule_classes"))) {
      c.rule_classes.push_back(parse_param_class(name));
    }
  }

  FixedAdamConfig& f = c.fixed_adam;
  f.lr = kv.take_double("fixed_adam.lr", f.lr);
  f.beta1 = kv.take_double("fixed_adam.beta1", f.beta1);
  f.beta2 = kv.take_double("fixed_adam.beta2", f.beta2);
  f.eps = kv.take_double("fixed_adam.eps", f.eps);
  f.wd_embed = kv.take_double("fixed_adam.wd_embed", f.wd_embed);
  f.wd_head = kv.take_double("fixed_adam.wd_head", f.wd_head);
  f.wd_layernorm = kv.take_double("fixed_adam.wd_layernorm", f.wd_layernorm);

  c.probe = kv.take_or("train.probe", c.probe);
  if (c.probe == "none") c.probe.clear();
  c.probe_every = static_cast<int>(kv.take_long("train.probe_every", c.probe_every));
  c.divergence_factor = kv.take_double("train.divergence_factor", c.divergence_factor);
  c.divergence_patience =
      static_cast<int>(kv.take_long("train.divergence_patience", c.divergence_patience));
  c.validate();
  return c;
}

RunConfig parse_run_config(std::string_view text) {
  KeyValues kv = KeyValues::parse(text);
  RunConfig c = read_run_config(kv);
  kv.require_all_consumed();
  return c;
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  const WorkloadSpec& w = c.workload;
  os << "[workload]\n";
  os << "kind = " << to_string(w.kind) << "\n";
  if (w.kind == WorkloadKind::NoisyQuadratic) {
    os << "dim = " << w.quadratic.dim << "\n";
    os << "noise_scale = " << format_double(w.quadratic.noise_scale) << "\n";
    os << "condition = " << format_double(w.quadratic.condition) << "\n";
  } else {
    os << "layers = " << w.lm.layers << "\n";
    os << "d_model = " << w.lm.d_model << "\n";
    os << "heads = " << w.lm.heads << "\n";
    os << "vocab = " << w.lm.vocab << "\n";
    os << "seq_len = " << w.lm.seq_len << "\n";
  }
  os << "batch_size = " << w.batch_size << "\n";
  os << "total_steps = " << w.total_steps << "\n";
  os << "warmup_steps = " << w.warmup_steps << "\n";
  os << "seed = " << w.seed << "\n";
  os << "data_seed = " << w.data_seed << "\n";

  os << "\n[rule]\n";
  os << "name = " << c.rule_name << "\n";
  write_rule(os, c.rule);

  os << "\n[groups]\nrule_classes = ";
  for (std::size_t i = 0; i < c.rule_classes.size(); ++i) {
    os << (i ? "," : "") << to_string(c.rule_classes[i]);
  }
  os << "\n";

  os << "\n[fallback]\n";
  write_rule(os, c.fallback);

  const FixedAdamConfig& f = c.fixed_adam;
  os << "\n[fixed_adam]\n";
  os << "lr = " << format_double(f.lr) << "\n";
  os << "beta1 = " << format_double(f.beta1) << "\n";
  os << "beta2 = " << format_double(f.beta2) << "\n";
  os << "eps = " << format_double(f.eps) << "\n";
  os << "wd_embed = " << format_double(f.wd_embed) << "\n";
  os << "wd_head = " << format_double(f.wd_head) << "\n";
  os << "wd_layernorm = " << format_double(f.wd_layernorm) << "\n";

  os << "\n[train]\n";
  os << "probe = " << (c.probe.empty() ? "none" : c.probe) << "\n";
  os << "probe_every = " << c.probe_every << "\n";
  os << "divergence_factor = " << format_double(c.divergence_factor) << "\n";
  os << "divergence_patience = " << c.divergence_patience << "\n";
  return os.str();
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(to_text(cfg)); }

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mw
