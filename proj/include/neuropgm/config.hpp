#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace neuropgm {

using ConfigScalar = std::variant<std::int64_t, double, bool, std::string>;
using ConfigList = std::vector<ConfigScalar>;

struct ConfigValue {
  std::variant<std::int64_t, double, bool, std::string, ConfigList> value;
  int line = 0;
};

/// Parsed `[section]` / `key = value` file. Keys are stored as
/// "section.key"; '#' and ';' start comments.
class Config {
 public:
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const ConfigValue& at(const std::string& key) const;

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;  // accepts integers
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, ConfigValue>& values() const { return values_; }
  std::map<std::string, ConfigValue>& values() { return values_; }

 private:
  std::map<std::string, ConfigValue> values_;
};

/// Keys accepted by the command-line workflow.
const std::set<std::string>& known_config_keys();

/// Throws ConfigError naming the line for malformed lines, unknown keys (when
/// `allowed` is non-empty) and duplicates (both lines).
Config parse_config_text(const std::string& text, const std::set<std::string>& allowed = known_config_keys());
Config parse_config(const std::string& path, const std::set<std::string>& allowed = known_config_keys());

}  // namespace neuropgm
