#pragma once

// Flat key = value configuration files. `[section]` headers are allowed and
// only group keys visually; key names are global. `#` starts a comment.
// Dashes and underscores in keys are interchangeable.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "croco/common.hpp"

namespace croco {

inline std::string canonical_key(std::string_view k) {
  std::string out(k);
  for (char& c : out)
    if (c == '-') c = '_';
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view v = line;
      if (auto h = v.find('#'); h != std::string_view::npos) v = v.substr(0, h);
      v = trim(v);
      if (v.empty()) continue;
      if (v.front() == '[') {
        if (v.back() != ']' || trim(v.substr(1, v.size() - 2)).empty())
          throw Error(origin + ":" + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      const auto eq = v.find('=');
      if (eq == std::string_view::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const auto key = trim(v.substr(0, eq));
      auto value = trim(v.substr(eq + 1));
      if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      const auto k = canonical_key(key);
      if (c.values_.count(k)) throw Error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + k + "'");
      c.values_[k] = std::string(value);
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(std::string_view key) const { return values_.count(canonical_key(key)) > 0; }
  void set(std::string_view key, std::string value) { values_[canonical_key(key)] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Later layers win.
  void merge(const Config& over) {
    for (const auto& [k, v] : over.values_) values_[k] = v;
  }

  std::string str(std::string_view key, std::string fallback) const {
    auto it = values_.find(canonical_key(key));
    return it == values_.end() ? fallback : it->second;
  }

  template <class T>
  T num(std::string_view key, T fallback) const {
    auto it = values_.find(canonical_key(key));
    if (it == values_.end()) return fallback;
    return parse_number<T>(it->second, it->first);
  }

  bool flag(std::string_view key, bool fallback) const {
    auto it = values_.find(canonical_key(key));
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("config key '" + it->first + "': expected a boolean, got '" + v + "'");
  }

  /// Comma-separated list, optionally wrapped in brackets.
  template <class T>
  std::vector<T> list(std::string_view key) const {
    std::vector<T> out;
    auto it = values_.find(canonical_key(key));
    if (it == values_.end()) return out;
    std::string_view v = trim(it->second);
    if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
    while (!trim(v).empty()) {
      const auto comma = v.find(',');
      const auto item = trim(v.substr(0, comma));
      if (item.empty()) throw Error("config key '" + it->first + "': empty list item");
      out.push_back(parse_number<T>(std::string(item), it->first));
      if (comma == std::string_view::npos) break;
      v = v.substr(comma + 1);
    }
    return out;
  }

  /// Sorted `key = value` lines; parses back to the same Config.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  template <class T>
  static T parse_number(const std::string& s, const std::string& key) {
    T v{};
    const auto* b = s.data();
    const auto* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
      throw Error("config key '" + key + "': cannot parse '" + s + "' as a number");
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace croco
