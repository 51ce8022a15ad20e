// SPDX-License-Identifier: Apache-2.0
#include "g2v/cli/config.hpp"

#include "g2v/error.hpp"
#include "g2v/io/digest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace g2v::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt: return "integer";
    case KeyType::kFloat: return "number";
    case KeyType::kBool: return "boolean";
    case KeyType::kString: return "string";
  }
  return "?";
}

json coerce(const KeySpec& spec, const json& v) {
  auto mismatch = [&]() {
    return ConfigError("type mismatch for '" + spec.name + "': expected " + type_name(spec.type) + ", got " +
                       v.dump());
  };
  if (v.is_string() && spec.type != KeyType::kString) {
    const std::string s = trim(v.get<std::string>());
    switch (spec.type) {
      case KeyType::kInt: {
        long long x = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw mismatch();
        return x;
      }
      case KeyType::kFloat: {
        double x = 0.0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(x)) throw mismatch();
        return x;
      }
      case KeyType::kBool:
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw mismatch();
      default: break;
    }
  }
  switch (spec.type) {
    case KeyType::kInt:
      if (v.is_number_integer()) return v;
      if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return static_cast<long long>(v.get<double>());
      throw mismatch();
    case KeyType::kFloat:
      if (v.is_number()) return v.get<double>();
      throw mismatch();
    case KeyType::kBool:
      if (v.is_boolean()) return v;
      throw mismatch();
    case KeyType::kString:
      if (v.is_string()) return v;
      throw mismatch();
  }
  throw mismatch();
}

}  // namespace

json parse_config_text(const std::string& text) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& [k, v] : j.items())
      if (v.is_object() || v.is_array() || v.is_null()) throw ConfigError("config must be flat; key '" + k + "' is nested");
    return j;
  }
  json j = json::object();
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(no) + " is not key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(no) + " has an empty key");
    if (j.contains(key)) throw ConfigError("duplicate config key '" + key + "'");
    j[key] = trim(line.substr(eq + 1));
  }
  return j;
}

json read_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config_text(io::read_file(path));
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string suggest_key(const std::string& key, const Schema& schema) {
  std::string best;
  std::size_t best_d = std::max<std::size_t>(3, key.size() / 3) + 1;
  for (const auto& s : schema) {
    const std::size_t d = edit_distance(key, s.name);
    if (d < best_d) {
      best_d = d;
      best = s.name;
    }
  }
  return best;
}

RunConfig validate_config(const json& raw, const Schema& schema) {
  RunConfig cfg;
  for (const auto& [k, v] : raw.items()) {
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const KeySpec& s) { return s.name == k; });
    if (it == schema.end()) {
      const std::string hint = suggest_key(k, schema);
      throw ConfigError("unknown config key '" + k + "'" + (hint.empty() ? "" : " (did you mean '" + hint + "'?)"));
    }
    cfg.values[k] = coerce(*it, v);
    cfg.explicit_keys.insert(k);
  }
  for (const auto& s : schema) {
    if (cfg.values.contains(s.name)) continue;
    if (s.fallback.is_null()) throw ConfigError("missing required config key '" + s.name + "' (" + s.help + ")");
    cfg.values[s.name] = coerce(s, s.fallback);
  }
  return cfg;
}

void echo_config(const RunConfig& cfg, const Schema& schema, std::ostream& out) {
  for (const auto& s : schema) {
    out << "  " << s.name << " = " << cfg.values.at(s.name).dump();
    if (!cfg.explicit_keys.count(s.name)) out << "  (default)";
    out << '\n';
  }
}

long long RunConfig::get_int(const std::string& k) const { return values.at(k).get<long long>(); }
std::size_t RunConfig::get_size(const std::string& k) const {
  const long long v = get_int(k);
  if (v < 0) throw ConfigError("'" + k + "' must be non-negative");
  return static_cast<std::size_t>(v);
}
double RunConfig::get_float(const std::string& k) const { return values.at(k).get<double>(); }
bool RunConfig::get_bool(const std::string& k) const { return values.at(k).get<bool>(); }
std::string RunConfig::get_string(const std::string& k) const { return values.at(k).get<std::string>(); }

}  // namespace g2v::cli
