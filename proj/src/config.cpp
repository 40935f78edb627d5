#include "augspec/config.hpp"

#include "augspec/linalg.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace augspec {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

double parse_number(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + v +
                      "'");
  }
  return x;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at line " +
                        std::to_string(line_no));
    }
    const std::string key_part = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key_part.empty() || value.empty()) {
      throw ConfigError("config: empty key or value at line " +
                        std::to_string(line_no));
    }
    const std::string key = section.empty() ? key_part : section + "." + key_part;
    if (value.front() == '[') {
      if (value.back() != ']') {
        throw ConfigError("config: unterminated list at line " +
                          std::to_string(line_no));
      }
      std::vector<std::string> items;
      std::string body = value.substr(1, value.size() - 2);
      std::istringstream parts(body);
      std::string item;
      while (std::getline(parts, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(unquote(item));
      }
      cfg.lists_[key] = std::move(items);
    } else {
      cfg.scalars_[key] = unquote(value);
    }
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

bool ConfigFile::has(const std::string& key) const {
  return scalars_.count(key) > 0 || lists_.count(key) > 0;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const auto it = scalars_.find(key);
  if (it == scalars_.end()) return fallback;
  return parse_number(it->second, key);
}

long ConfigFile::get_int(const std::string& key, long fallback) const {
  const auto it = scalars_.find(key);
  if (it == scalars_.end()) return fallback;
  return static_cast<long>(parse_number(it->second, key));
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = scalars_.find(key);
  if (it == scalars_.end()) return fallback;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean");
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  const auto it = scalars_.find(key);
  return it == scalars_.end() ? fallback : it->second;
}

std::vector<double> ConfigFile::get_double_list(
    const std::string& key, const std::vector<double>& fallback) const {
  const auto it = lists_.find(key);
  if (it == lists_.end()) return fallback;
  std::vector<double> out;
  out.reserve(it->second.size());
  for (const auto& item : it->second) out.push_back(parse_number(item, key));
  return out;
}

std::vector<long> ConfigFile::get_int_list(
    const std::string& key, const std::vector<long>& fallback) const {
  const auto it = lists_.find(key);
  if (it == lists_.end()) return fallback;
  std::vector<long> out;
  out.reserve(it->second.size());
  for (const auto& item : it->second) {
    out.push_back(static_cast<long>(parse_number(item, key)));
  }
  return out;
}

double ConfigFile::require_double(const std::string& key) const {
  if (!scalars_.count(key)) throw ConfigError("config: missing key '" + key + "'");
  return get_double(key, 0.0);
}

std::string ConfigFile::require_string(const std::string& key) const {
  const auto it = scalars_.find(key);
  if (it == scalars_.end()) throw ConfigError("config: missing key '" + key + "'");
  return it->second;
}

void ResolvedConfig::set(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

void ResolvedConfig::set(const std::string& key, double value) {
  entries_.emplace_back(key, format_double(value));
}

void ResolvedConfig::set(const std::string& key, long value) {
  entries_.emplace_back(key, std::to_string(value));
}

void ResolvedConfig::set(const std::string& key,
                         const std::vector<double>& values) {
  std::string joined = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ", ";
    joined += format_double(values[i]);
  }
  joined += "]";
  entries_.emplace_back(key, joined);
}

void ResolvedConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("resolved config: cannot open " + path.string());
  std::string section;
  for (const auto& [key, value] : entries_) {
    const auto dot = key.rfind('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section) {
      section = sec;
      out << "[" << section << "]\n";
    }
    out << name << " = " << value << '\n';
  }
}

}  // namespace augspec
