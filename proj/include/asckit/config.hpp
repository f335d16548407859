#pragma once

#include <map>
#include <string>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::cli {

/// Flat key-value configuration with `[section]` headers; keys are addressed
/// as "section.key". `#` and `;` start comments. Command line `--set` flags
/// override file values 1:1.
class Config {
 public:
  Config() = default;

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  long long get_int(const std::string& key, long long def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& def) const;
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& def) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& def) const;

  const std::map<std::string, std::string>& snapshot() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace asckit::cli
