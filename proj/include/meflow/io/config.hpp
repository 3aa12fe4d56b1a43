#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "meflow/io/flo.hpp"

namespace meflow {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// key = value lines with [section] headers; '#' starts a comment
inline std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw std::runtime_error("config: line " + std::to_string(lineno) +
                                 ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: line " + std::to_string(lineno) + ": empty key");
    out[section.empty() ? key : section + "." + key] = val;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  return parse_config(detail::read_file(path));
}

// sectioned text that parse_config reads back unchanged; bare keys lead so
// they never fall under a section header
inline std::string dump_config(const std::map<std::string, std::string>& cfg) {
  std::ostringstream os;
  for (const auto& [key, val] : cfg)
    if (key.find('.') == std::string::npos) os << key << " = " << val << '\n';
  std::string section;
  for (const auto& [key, val] : cfg) {
    const size_t dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << val << '\n';
  }
  return os.str();
}

inline const std::string& config_get(const std::map<std::string, std::string>& cfg,
                                     const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw std::runtime_error("config: missing key '" + key + "'");
  return it->second;
}

inline double config_double(const std::map<std::string, std::string>& cfg,
                            const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("config: key '" + key + "' holds '" + it->second +
                             "', expected a number");
  return v;
}

inline int64_t config_int(const std::map<std::string, std::string>& cfg, const std::string& key,
                          int64_t fallback) {
  const double v = config_double(cfg, key, (double)fallback);
  if (v != std::floor(v))
    throw std::runtime_error("config: key '" + key + "' holds a fraction, expected an integer");
  return (int64_t)v;
}

inline std::string config_str(const std::map<std::string, std::string>& cfg,
                              const std::string& key, const std::string& fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : it->second;
}

}  // namespace meflow
