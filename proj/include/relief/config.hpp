#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "relief/relief.hpp"

namespace relief {

/// Flat key=value run configuration. Keys mirror the hyper-parameter names
/// (gamma, gae_lambda, clip, l, alpha_d, z_max, q, ...). Unknown keys and
/// malformed values raise ConfigError.
class RunConfig {
 public:
  RunConfig() = default;

  ReliefConfig& relief() { return relief_; }
  const ReliefConfig& relief() const { return relief_; }

  /// Sets one key from its textual value.
  void set(const std::string& key, const std::string& value);
  /// Parses `key = value` lines; '#' starts a comment.
  void merge(std::istream& in, const std::string& source = "<config>");
  void merge_file(const std::filesystem::path& path);

  /// Every key with its current value, sorted by key.
  std::map<std::string, std::string> entries() const;
  /// entries() as `key = value` lines; merging it back reproduces the config.
  std::string snapshot() const;

  static const std::vector<std::string>& keys();

  void validate() const { relief_.validate(); }

 private:
  ReliefConfig relief_;
};

double parse_double(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace relief
