#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace augspec {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// TOML-style key/table file: [section] headers, key = value lines, values
/// are numbers, booleans, quoted strings or flat [a, b, c] lists, comments
/// start with #. Keys are addressed as "section.key".
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::filesystem::path& path);
  static ConfigFile parse_string(const std::string& text);

  bool has(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<long> get_int_list(const std::string& key,
                                 const std::vector<long>& fallback) const;

  /// Required variants throw when the key is missing.
  double require_double(const std::string& key) const;
  std::string require_string(const std::string& key) const;

 private:
  std::map<std::string, std::string> scalars_;
  std::map<std::string, std::vector<std::string>> lists_;
};

/// Key/value sink for the resolved-config copy written next to outputs.
class ResolvedConfig {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long value);
  void set(const std::string& key, const std::vector<double>& values);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace augspec
