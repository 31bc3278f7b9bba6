#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmbcli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// INI configuration with a fixed schema. Every value read through the typed getters
/// (including defaults) is recorded so the run can write back the fully resolved file.
class Config {
 public:
  static Config load(const std::filesystem::path& file);
  static Config parse(const std::string& text, const std::filesystem::path& base_dir = ".");

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::optional<std::string>& fallback = std::nullopt);
  double get_double(const std::string& section, const std::string& key, const std::optional<double>& fallback = std::nullopt);
  std::uint64_t get_uint(const std::string& section, const std::string& key,
                         const std::optional<std::uint64_t>& fallback = std::nullopt);
  bool get_bool(const std::string& section, const std::string& key, const std::optional<bool>& fallback = std::nullopt);
  /// Relative paths are taken from the config file's directory; resolved as absolute.
  std::filesystem::path get_path(const std::string& section, const std::string& key);
  std::vector<std::filesystem::path> get_path_list(const std::string& section, const std::string& key);
  std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                      const std::optional<std::vector<double>>& fallback = std::nullopt);

  /// Replaces a value as if it had been in the file (command-line overrides).
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Sections and keys in first-read order.
  std::string resolved_ini() const;

 private:
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;
  void record(const std::string& section, const std::string& key, const std::string& value);

  std::map<std::string, std::map<std::string, std::string>> values_;
  std::filesystem::path base_dir_;
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> resolved_;
};

std::string format_double(double value);

}  // namespace lmbcli
