#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace slrgrowth::config {

/// Sectioned key/value configuration ("[section]" headers, "key = value"
/// lines, ';' or '#' comments). Every accessor reports the source on error.
class Ini {
 public:
  static Ini load(const std::string& path);
  static Ini parse(std::istream& in, const std::string& source = "<stream>");

  const std::string& source() const { return source_; }
  std::vector<std::string> sections() const;
  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> find(const std::string& section, const std::string& key) const;

  std::string get(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, std::optional<double> fallback = {}) const;
  long long get_int(const std::string& section, const std::string& key, std::optional<long long> fallback = {}) const;
  bool get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback = {}) const;
  /// Comma-separated list, items trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    std::vector<std::string> fallback = {}) const;

  /// Throws ConfigError naming the first section or key not in `schema`.
  void require_known(const std::map<std::string, std::set<std::string>>& schema) const;

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace slrgrowth::config
