#include "asckit/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace asckit::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("bad section header at line " + std::to_string(line_no) + " of " + path);
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected `key = value` at line " + std::to_string(line_no) + " of " +
                        path);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("empty key at line " + std::to_string(line_no) + " of " + path);
    }
    values_[section.empty() ? key : section + "." + key] = value;
  }
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string Config::get_str(const std::string& key, const std::string& def) const {
  const auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

std::string Config::require_str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

long long Config::get_int(const std::string& key, long long def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + it->second);
}

std::vector<std::string> Config::get_list(const std::string& key,
                                          const std::vector<std::string>& def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<std::string> out;
  std::stringstream ss(it->second);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& def) const {
  if (!has(key)) return def;
  std::vector<double> out;
  for (const auto& s : get_list(key, {})) {
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a non-numeric element: " + s);
    }
  }
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key, const std::vector<int>& def) const {
  if (!has(key)) return def;
  std::vector<int> out;
  for (const auto& s : get_list(key, {})) {
    try {
      out.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a non-integer element: " + s);
    }
  }
  return out;
}

}  // namespace asckit::cli
