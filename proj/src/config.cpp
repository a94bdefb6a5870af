#include "neuropgm/config.hpp"

#include <charconv>
#include <sstream>

#include "neuropgm/error.hpp"
#include "neuropgm/io.hpp"

namespace neuropgm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (!quoted && (s[i] == '#' || s[i] == ';')) return s.substr(0, i);
  }
  return s;
}

ConfigScalar parse_scalar(const std::string& raw) {
  const std::string t = trim(raw);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') return t.substr(1, t.size() - 2);
  if (t == "true") return true;
  if (t == "false") return false;
  std::int64_t i;
  auto [pi, ei] = std::from_chars(t.data(), t.data() + t.size(), i);
  if (ei == std::errc() && pi == t.data() + t.size() && !t.empty()) return i;
  double d;
  auto [pd, ed] = std::from_chars(t.data(), t.data() + t.size(), d);
  if (ed == std::errc() && pd == t.data() + t.size() && !t.empty()) return d;
  return t;
}

[[noreturn]] void type_error(const std::string& key, int line, const char* want) {
  fail(ErrorCode::ConfigError, "config line " + std::to_string(line) + ": '" + key + "' must be " + want);
}

}  // namespace

const ConfigValue& Config::at(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::ConfigError, "missing config key '" + key + "'");
  return it->second;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const ConfigValue& v = at(key);
  if (const auto* i = std::get_if<std::int64_t>(&v.value)) return *i;
  type_error(key, v.line, "an integer");
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const ConfigValue& v = at(key);
  if (const auto* d = std::get_if<double>(&v.value)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v.value)) return static_cast<double>(*i);
  type_error(key, v.line, "a number");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const ConfigValue& v = at(key);
  if (const auto* b = std::get_if<bool>(&v.value)) return *b;
  type_error(key, v.line, "true or false");
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  const ConfigValue& v = at(key);
  if (const auto* s = std::get_if<std::string>(&v.value)) return *s;
  type_error(key, v.line, "a string");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  if (!has(key)) return {};
  const ConfigValue& v = at(key);
  std::vector<double> out;
  const auto num = [&](const ConfigScalar& s) {
    if (const auto* d = std::get_if<double>(&s)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
    type_error(key, v.line, "a list of numbers");
  };
  if (const auto* l = std::get_if<ConfigList>(&v.value)) {
    for (const auto& s : *l) out.push_back(num(s));
    return out;
  }
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, double> || std::is_same_v<T, std::int64_t>) out.push_back(static_cast<double>(x));
        else type_error(key, v.line, "a list of numbers");
      },
      v.value);
  return out;
}

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    for (const char* s :
         {"model", "subjects", "timepoints", "voxels", "factors", "snr", "noise_var", "seed", "mean_scale",
          "temporal_phi", "center_spread", "subject_center_var", "width_mean", "width_sd", "subject_width_var",
          "weight_mean", "weight_sd", "drd_mean", "drd_magnitude", "drd_length", "drd_blocks", "drd_block_width",
          "drd_block_level", "drd_test_rows", "nuisance_rank", "nuisance_scale", "ar_phi_min", "ar_phi_max",
          "pattern_within", "pattern_across"})
      k.insert(std::string("simulate.") + s);
    for (const char* s : {"k", "max_iters", "tol", "seed", "method", "diagonal_shared_cov"}) k.insert(std::string("srm.") + s);
    for (const char* s : {"k", "max_iters", "tol", "seed", "subsample", "subject_center_var", "subject_width_var",
                          "weight_mean", "weight_var", "initial_radius", "max_inner_iters", "candidate_fraction"})
      k.insert(std::string("htfa.") + s);
    for (const char* s : {"outer_evals", "inner_iters", "length_min", "length_max", "rho_min", "rho_max", "seed"})
      k.insert(std::string("drd.") + s);
    for (const char* s : {"nuisance_rank", "rounds", "max_iters", "tol", "demean"}) k.insert(std::string("brsa.") + s);
    for (const char* sec : {"mnsrm.", "dpsrm."})
      for (const char* s : {"k", "max_iters", "tol", "seed", "temporal", "voxel_cov"}) k.insert(std::string(sec) + s);
    return k;
  }();
  return keys;
}

Config parse_config_text(const std::string& text, const std::set<std::string>& allowed) {
  Config cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail(ErrorCode::ConfigError, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, where + ": expected 'key = value'");
    const std::string name = trim(line.substr(0, eq));
    const std::string rhs = trim(line.substr(eq + 1));
    if (name.empty()) fail(ErrorCode::ConfigError, where + ": empty key");
    if (rhs.empty()) fail(ErrorCode::ConfigError, where + ": empty value for '" + name + "'");
    const std::string key = section.empty() ? name : section + "." + name;
    if (!allowed.empty() && !allowed.count(key)) fail(ErrorCode::ConfigError, where + ": unknown key '" + key + "'");
    const auto prev = cfg.values().find(key);
    if (prev != cfg.values().end()) {
      fail(ErrorCode::ConfigError, "duplicate key '" + key + "' at lines " + std::to_string(prev->second.line) +
                                       " and " + std::to_string(lineno));
    }
    ConfigValue v;
    v.line = lineno;
    if (rhs.find(',') != std::string::npos && rhs.front() != '"') {
      ConfigList list;
      std::stringstream ls(rhs);
      std::string item;
      while (std::getline(ls, item, ',')) list.push_back(parse_scalar(item));
      v.value = std::move(list);
    } else {
      std::visit([&](auto&& x) { v.value = x; }, parse_scalar(rhs));
    }
    cfg.values().emplace(key, std::move(v));
  }
  return cfg;
}

Config parse_config(const std::string& path, const std::set<std::string>& allowed) {
  return parse_config_text(read_text_file(path), allowed);
}

}  // namespace neuropgm
