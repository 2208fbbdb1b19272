#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fedpac/orchestrator.hpp"

namespace fedpac {

/// Bad config text or value. key() names the offending setting.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  ExperimentConfig experiment;
  std::string output_dir;  // empty: fall back to $FEDPAC_OUTPUT_DIR, then "."
};

// Format: one `key = value` per line, `#` starts a comment. Lists are comma
// separated; nested lists (partition.dominant, partition.label_permutation,
// partition.group_weights) separate groups with ';'.

/// Applies one setting to `config`. Throws ConfigError for unknown keys or
/// unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its effective value, in the same format parse_config reads.
std::string render_config(const RunConfig& config);

}  // namespace fedpac
