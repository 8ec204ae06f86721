#pragma once

#include <map>
#include <set>
#include <string>

namespace rvsa {

/// INI-style configuration: `[section]` headers, `key = value` lines, `#`
/// comments. Keys before the first header live in section "".
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;

  /// Errors on any key not in the allowed set for its section. Sections not
  /// listed in `allowed` are themselves errors.
  void validate(const std::map<std::string, std::set<std::string>>& allowed) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string origin_;
};

}  // namespace rvsa
