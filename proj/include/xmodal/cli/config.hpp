#pragma once

// Effective run configuration: command defaults, then a config file (plain
// JSON or a previous artifact), then command-line flags. Flag wins.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/errors.hpp"

namespace xmodal::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class OptType { str, uint, real, boolean, uint_list, real_list, str_list, layers };

struct OptionSpec {
  std::string key;  // config key; the flag is --key with '_' -> '-'
  OptType type;
  std::string help;
};

inline std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (auto& ch : f)
    if (ch == '_') ch = '-';
  return f;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty item in list '" + s + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
}

}  // namespace detail

// Converts a raw flag value to the JSON shape stored in configs.
inline nlohmann::json parse_flag(const OptionSpec& spec, const std::string& raw) {
  switch (spec.type) {
    case OptType::str: return raw;
    case OptType::uint: return detail::parse_uint(spec.key, raw);
    case OptType::real:
      try {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
      } catch (const std::exception&) {
        throw ConfigError(spec.key + ": expected a number, got '" + raw + "'");
      }
    case OptType::boolean:
      if (raw == "true" || raw == "1" || raw == "yes") return true;
      if (raw == "false" || raw == "0" || raw == "no") return false;
      throw ConfigError(spec.key + ": expected true or false, got '" + raw + "'");
    case OptType::uint_list: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& s : detail::split_list(raw)) a.push_back(detail::parse_uint(spec.key, s));
      return a;
    }
    case OptType::real_list: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& s : detail::split_list(raw)) a.push_back(parse_flag({spec.key, OptType::real, ""}, s));
      return a;
    }
    case OptType::str_list: return detail::split_list(raw);
    case OptType::layers:
      if (raw == "all") return "all";
      return parse_flag({spec.key, OptType::uint_list, ""}, raw);
  }
  return raw;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
  std::stringstream text;
  text << in.rdbuf();
  auto j = nlohmann::json::parse(text.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config file '" + path.string() + "' is not a JSON object");
  return j;
}

// The config stored in a file: a plain object, or the "config" member of an
// artifact written by the same command.
inline nlohmann::json config_from_file(const std::filesystem::path& path, const std::string& command) {
  auto j = read_json_file(path);
  if (!j.contains("xmodal_artifact")) return j;
  const auto& tag = j["xmodal_artifact"];
  const std::string producer = tag.is_object() ? tag.value("command", std::string()) : std::string();
  if (producer != command) {
    throw ConfigError("'" + path.string() + "' is an artifact of '" + producer + "', not '" + command + "'");
  }
  if (!j.contains("config") || !j["config"].is_object()) throw ConfigError("artifact '" + path.string() + "' has no config");
  return j["config"];
}

inline void check_keys(const nlohmann::json& defaults, const nlohmann::json& layer, const std::string& origin) {
  for (const auto& [key, value] : layer.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown " + origin + " key '" + key + "'");
  }
}

inline nlohmann::json effective_config(const nlohmann::json& defaults, const nlohmann::json& file_config,
                                       const nlohmann::json& flags) {
  check_keys(defaults, file_config, "config");
  check_keys(defaults, flags, "flag");
  nlohmann::json out = defaults;
  out.merge_patch(file_config);
  // merge_patch drops keys set to null; flags never carry null.
  for (const auto& [key, value] : flags.items()) out[key] = value;
  for (const auto& [key, value] : defaults.items())
    if (!out.contains(key)) out[key] = nullptr;
  return out;
}

template <typename T>
T get(const nlohmann::json& config, const std::string& key) {
  try {
    return config.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type or is missing");
  }
}

inline bool has(const nlohmann::json& config, const std::string& key) {
  return config.contains(key) && !config.at(key).is_null();
}

inline std::filesystem::path existing_path(const nlohmann::json& config, const std::string& key) {
  if (!has(config, key)) throw ValidationError("--" + key + " is required");
  std::filesystem::path p = get<std::string>(config, key);
  if (!std::filesystem::exists(p)) throw ValidationError(key + " '" + p.string() + "' does not exist");
  return p;
}

inline nlohmann::json artifact(const std::string& command, const nlohmann::json& config, nlohmann::json result) {
  return {{"xmodal_artifact", {{"command", command}, {"version", kVersion}}},
          {"config", config},
          {"result", std::move(result)}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace xmodal::cli
