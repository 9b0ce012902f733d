#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "nbploc/errors.hpp"

namespace nbploc {

// Flat key-value configuration text: one `key = value...` per line, `#`
// starts a comment, values may hold several whitespace-separated tokens.
class KeyValueFile {
 public:
  static KeyValueFile load(const std::string& path);
  static KeyValueFile parse(std::istream& in);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace nbploc
