#include "nbploc/config.hpp"

#include <fstream>
#include <sstream>

namespace nbploc {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse(in);
}

KeyValueFile KeyValueFile::parse(std::istream& in) {
  KeyValueFile kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (kv.entries_.count(key) != 0) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key `" + key + "`");
    }
    kv.entries_[key] = value;
  }
  return kv;
}

bool KeyValueFile::has(const std::string& key) const { return entries_.count(key) != 0; }

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key `" + key + "`");
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  const auto values = get_doubles(key);
  if (values.size() != 1) throw ConfigError("key `" + key + "` must hold one number");
  return values[0];
}

double KeyValueFile::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long KeyValueFile::get_int(const std::string& key) const {
  const std::string& raw = get(key);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(raw, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key `" + key + "`: not an integer: " + raw);
  }
  if (trim(raw.substr(pos)) != "") throw ConfigError("key `" + key + "`: trailing junk: " + raw);
  return v;
}

long long KeyValueFile::get_int_or(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KeyValueFile::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key `" + key + "`: not a boolean: " + v);
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
  std::istringstream iss(get(key));
  std::vector<double> out;
  std::string token;
  while (iss >> token) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &pos);
    } catch (const std::exception&) {
      throw ConfigError("key `" + key + "`: not a number: " + token);
    }
    if (pos != token.size()) throw ConfigError("key `" + key + "`: not a number: " + token);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("key `" + key + "` holds no values");
  return out;
}

}  // namespace nbploc
