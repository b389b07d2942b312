#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace progan {

/// Flat `key = value` configuration. Blank lines and lines starting with '#'
/// are ignored; later assignments override earlier ones. Lookups record which
/// keys were consumed so that typos can be reported.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> string(const std::string& key) const;
  std::optional<std::int64_t> integer(const std::string& key) const;
  std::optional<std::uint64_t> unsigned_integer(const std::string& key) const;
  std::optional<double> real(const std::string& key) const;
  std::optional<bool> boolean(const std::string& key) const;  // true/false/1/0/yes/no/on/off
  /// Comma-separated integers.
  std::optional<std::vector<std::int64_t>> integers(const std::string& key) const;

  /// Keys never looked up so far.
  std::vector<std::string> unused() const;

 private:
  const std::string* raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace progan
