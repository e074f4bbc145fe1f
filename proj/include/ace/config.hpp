#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/format.hpp"

namespace ace {

/// Flat `key = value` document with `[section]` headers; `#` starts a comment.
/// Keys are addressed as "section.key". Lookups are recorded so unknown keys
/// can be reported after a consumer has read everything it understands.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& is) {
    ConfigFile cfg;
    std::string section;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      }
      const std::string key = std::string(trim(line.substr(0, eq)));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full)) throw ConfigError("config key '" + full + "' given twice");
      cfg.values_[full] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static ConfigFile parse(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second);
  }

  unsigned long long get_unsigned(const std::string& key, unsigned long long fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_unsigned(it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config key '" + key + "' expects true/false");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double_list(it->second);
  }

  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_size_list(it->second);
  }

  // Throws if the file contains keys nobody asked for (typos).
  void reject_unknown() const {
    for (const auto& [key, value] : values_) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace ace
