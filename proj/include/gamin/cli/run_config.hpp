#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace gamin::cli {

struct KeySpec {
  std::string key;
  std::string default_value;  // empty: unset
  std::string help;
};

// Flat key=value settings for one command. Values are resolved as
// defaults <- config file <- explicit overrides.
class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> keys);

  // Lines of `key = value`; '#' starts a comment; blank lines are skipped.
  // Throws ConfigError naming the source and line for unknown keys or lines
  // without '='.
  void parse_text(std::string_view text, const std::string& source);
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;  // known and non-empty
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::vector<KeySpec>& keys() const { return keys_; }
  // Every key in declaration order, one `key=value` per line; feeding it back
  // through parse_text reproduces this configuration.
  std::string resolved() const;

 private:
  const KeySpec& spec(const std::string& key) const;

  std::vector<KeySpec> keys_;
  std::map<std::string, std::string> values_;
};

}  // namespace gamin::cli
