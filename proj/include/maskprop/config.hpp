#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace maskprop {

// Flat `key = value` config file. '#' starts a comment. Typed getters mark
// keys as consumed; finish() rejects anything left over so typos in
// experiment configs fail loudly.
class FlatConfig {
 public:
  static FlatConfig from_file(const std::string& path);
  static FlatConfig from_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key);
  std::string get_string(const std::string& key, const std::string& fallback);
  long get_int(const std::string& key);
  long get_int(const std::string& key, long fallback);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<long> get_int_list(const std::string& key, const std::vector<long>& fallback);

  // throws listing unconsumed (unknown) keys
  void finish() const;

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace maskprop
