#include "maskprop/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace maskprop {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

FlatConfig FlatConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str(), path);
}

FlatConfig FlatConfig::from_string(const std::string& text, const std::string& origin) {
  FlatConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) fail(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.kv_.count(key)) fail(origin + ": duplicate key '" + key + "'");
    cfg.kv_[key] = val;
  }
  return cfg;
}

std::string FlatConfig::get_string(const std::string& key) {
  auto it = kv_.find(key);
  if (it == kv_.end()) fail(origin_ + ": missing required key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& fallback) {
  if (!has(key)) return fallback;
  return get_string(key);
}

long FlatConfig::get_int(const std::string& key) {
  const std::string s = get_string(key);
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    fail(origin_ + ": key '" + key + "' is not an integer: '" + s + "'");
  }
  if (pos != s.size()) fail(origin_ + ": key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

long FlatConfig::get_int(const std::string& key, long fallback) {
  if (!has(key)) return fallback;
  return get_int(key);
}

double FlatConfig::get_double(const std::string& key) {
  const std::string s = get_string(key);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    fail(origin_ + ": key '" + key + "' is not a number: '" + s + "'");
  }
  if (pos != s.size()) fail(origin_ + ": key '" + key + "' is not a number: '" + s + "'");
  return v;
}

double FlatConfig::get_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  return get_double(key);
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const std::string s = get_string(key);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  fail(origin_ + ": key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<long> FlatConfig::get_int_list(const std::string& key,
                                           const std::vector<long>& fallback) {
  if (!has(key)) return fallback;
  const std::string s = get_string(key);
  std::vector<long> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stol(item));
    } catch (const std::exception&) {
      fail(origin_ + ": key '" + key + "' is not an integer list: '" + s + "'");
    }
  }
  if (out.empty()) fail(origin_ + ": key '" + key + "' is an empty list");
  return out;
}

void FlatConfig::finish() const {
  std::string unknown;
  for (const auto& [k, v] : kv_)
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) fail(origin_ + ": unknown keys: " + unknown);
}

}  // namespace maskprop
