#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/hash.hpp"

namespace histcode {

/// Flat `key = value` configuration. '#' starts a comment, keys are dotted
/// lowercase, values are free text up to end of line.
class Config {
 public:
  static Config from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      if (cfg.kv_.count(key))
        throw ConfigError("duplicate key: " + key);
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

  std::string get_string(const std::string& key,
                         const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(it->second, &pos, 10);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected unsigned integer, got '" +
                        it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected number, got '" +
                        it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key " + key + ": expected true/false, got '" +
                      it->second + "'");
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  /// Rejects keys outside the documented registry (typo protection).
  void validate_keys(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : kv_)
      if (!allowed.count(key))
        throw ConfigError("unknown config key: " + key);
  }

  /// Hash of the semantic configuration: every key except the `paths.*`
  /// group, which names storage locations and must not change results.
  /// Artifacts produced under different directories therefore carry the
  /// same hash and stay byte-comparable.
  std::string semantic_hash() const {
    Fnv64 h;
    h.update("histcode-config-v1");
    for (const auto& [key, value] : kv_) {
      if (key.rfind("paths.", 0) == 0) continue;
      h.update("\n");
      h.update(key);
      h.update("=");
      h.update(value);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h.digest()));
    return std::string(buf);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  static std::int64_t parse_int(const std::string& key,
                                const std::string& value) {
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(value, &pos, 10);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected integer, got '" + value +
                        "'");
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace histcode
