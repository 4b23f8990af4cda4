#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kl/types.hpp"

namespace kl {

/// Flat `key = value` text configuration. `#` starts a comment; blank lines are ignored.
/// Errors carry the source name and 1-based line number.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  /// Later calls override earlier values; used for command-line overrides.
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Whitespace- or comma-separated reals.
  std::vector<double> get_doubles(const std::string& key) const;

  std::vector<std::string> keys() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace kl
