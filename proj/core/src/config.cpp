#include "slrgrowth/config.hpp"

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "slrgrowth/error.hpp"

namespace slrgrowth::config {

namespace pt = boost::property_tree;

Ini Ini::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

Ini Ini::parse(std::istream& in, const std::string& source) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  Ini ini;
  ini.source_ = source;
  for (const auto& [name, sec] : tree) {
    if (sec.empty() && !sec.data().empty())
      throw ConfigError(source + ": key '" + name + "' appears outside any section");
    auto& dst = ini.values_[name];
    for (const auto& [key, v] : sec) dst[key] = boost::algorithm::trim_copy(v.data());
  }
  return ini;
}

std::vector<std::string> Ini::sections() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

bool Ini::has(const std::string& section, const std::string& key) const { return find(section, key).has_value(); }

std::optional<std::string> Ini::find(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

std::string Ini::get(const std::string& section, const std::string& key) const {
  auto v = find(section, key);
  if (!v) throw ConfigError(source_ + ": missing required key [" + section + "] " + key);
  return *v;
}

std::string Ini::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  return find(section, key).value_or(fallback);
}

double Ini::get_double(const std::string& section, const std::string& key, std::optional<double> fallback) const {
  auto v = find(section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(source_ + ": missing required key [" + section + "] " + key);
  }
  double out = 0.0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size())
    throw ConfigError(source_ + ": [" + section + "] " + key + " = '" + *v + "' is not a number");
  return out;
}

long long Ini::get_int(const std::string& section, const std::string& key, std::optional<long long> fallback) const {
  auto v = find(section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(source_ + ": missing required key [" + section + "] " + key);
  }
  long long out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size())
    throw ConfigError(source_ + ": [" + section + "] " + key + " = '" + *v + "' is not an integer");
  return out;
}

bool Ini::get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback) const {
  auto v = find(section, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(source_ + ": missing required key [" + section + "] " + key);
  }
  if (*v == "true" || *v == "yes" || *v == "1") return true;
  if (*v == "false" || *v == "no" || *v == "0") return false;
  throw ConfigError(source_ + ": [" + section + "] " + key + " = '" + *v + "' is not a boolean");
}

std::vector<std::string> Ini::get_list(const std::string& section, const std::string& key,
                                       std::vector<std::string> fallback) const {
  auto v = find(section, key);
  if (!v) return fallback;
  return split_list(*v);
}

void Ini::require_known(const std::map<std::string, std::set<std::string>>& schema) const {
  for (const auto& [sec, keys] : values_) {
    auto s = schema.find(sec);
    if (s == schema.end()) throw ConfigError(source_ + ": unknown section [" + sec + "]");
    for (const auto& [k, v] : keys)
      if (!s->second.contains(k)) throw ConfigError(source_ + ": unknown key '" + k + "' in [" + sec + "]");
  }
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    boost::algorithm::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace slrgrowth::config
