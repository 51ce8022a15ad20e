// SPDX-License-Identifier: Apache-2.0
//
// Flat run configuration: a JSON object or key=value lines, checked against a
// per-command schema of typed keys with defaults.
#pragma once

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace g2v::cli {

enum class KeyType { kInt, kFloat, kBool, kString };

struct KeySpec {
  std::string name;
  KeyType type = KeyType::kString;
  nlohmann::json fallback;  // null = required
  std::string help;
};

using Schema = std::vector<KeySpec>;

/// Raw key -> value map. Values from key=value text stay strings until typed.
nlohmann::json parse_config_text(const std::string& text);
nlohmann::json read_config_file(const std::filesystem::path& path);

std::size_t edit_distance(const std::string& a, const std::string& b);
/// Closest schema key within a small edit distance, or empty.
std::string suggest_key(const std::string& key, const Schema& schema);

struct RunConfig {
  nlohmann::json values = nlohmann::json::object();  // every schema key, typed
  std::set<std::string> explicit_keys;

  long long get_int(const std::string& k) const;
  std::size_t get_size(const std::string& k) const;
  double get_float(const std::string& k) const;
  bool get_bool(const std::string& k) const;
  std::string get_string(const std::string& k) const;
};

/// Rejects unknown keys (with a suggestion) and type mismatches; fills defaults.
RunConfig validate_config(const nlohmann::json& raw, const Schema& schema);

/// One "key = value" line per key, defaults marked.
void echo_config(const RunConfig& cfg, const Schema& schema, std::ostream& out);

}  // namespace g2v::cli
