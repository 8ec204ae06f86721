#include "rvsa/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rvsa {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(t.substr(1, t.size() - 2));
      cfg.sections_[section];
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.sections_[section].count(key))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                               key + "'");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

long ConfigFile::get_int(const std::string& section, const std::string& key,
                         long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  std::size_t pos = 0;
  long out = std::stol(v, &pos);
  if (pos != v.size())
    throw std::runtime_error(origin_ + ": key '" + key + "' is not an integer: " + v);
  return out;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  std::size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size())
    throw std::runtime_error(origin_ + ": key '" + key + "' is not a number: " + v);
  return out;
}

void ConfigFile::validate(const std::map<std::string, std::set<std::string>>& allowed) const {
  for (const auto& [section, keys] : sections_) {
    auto a = allowed.find(section);
    if (a == allowed.end())
      throw std::runtime_error(origin_ + ": unknown section [" + section + "]");
    for (const auto& [key, value] : keys)
      if (!a->second.count(key))
        throw std::runtime_error(origin_ + ": unknown key '" + key + "' in section [" +
                                 section + "]");
  }
}

}  // namespace rvsa
