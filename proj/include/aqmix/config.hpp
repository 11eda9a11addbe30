#pragma once

// Flat "key = value" run configuration. Blank lines and '#' comments are
// ignored; unknown or repeated keys are errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/errors.hpp"

namespace aqmix {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size())
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AQMIX_SIZE_KEY(field)                                                                \
  ConfigKey{#field, [](RunConfig& c, const std::string& v) {                                  \
              c.field = parse_unsigned<std::size_t>(#field, v);                              \
            },                                                                              \
            [](const RunConfig& c) { return std::to_string(c.field); }}
#define AQMIX_REAL_KEY(key, field)                                                           \
  ConfigKey{key, [](RunConfig& c, const std::string& v) { c.field = parse_real(key, v); },    \
            [](const RunConfig& c) { return format_double(c.field); }}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      AQMIX_SIZE_KEY(n_agents),
      AQMIX_SIZE_KEY(rounds),
      AQMIX_SIZE_KEY(gnn_layers),
      AQMIX_SIZE_KEY(gnn_hidden),
      AQMIX_SIZE_KEY(gru_hidden),
      AQMIX_SIZE_KEY(head_hidden),
      AQMIX_SIZE_KEY(mix_hidden),
      AQMIX_SIZE_KEY(hyper_hidden),
      AQMIX_REAL_KEY("learning_rate", learning_rate),
      AQMIX_REAL_KEY("gamma", gamma),
      AQMIX_SIZE_KEY(buffer_capacity),
      AQMIX_SIZE_KEY(batch_size),
      AQMIX_REAL_KEY("clip_norm", clip_norm),
      AQMIX_SIZE_KEY(target_interval),
      AQMIX_REAL_KEY("epsilon_start", epsilon_start),
      AQMIX_REAL_KEY("epsilon_end", epsilon_end),
      AQMIX_SIZE_KEY(episodes),
      ConfigKey{"init",
                [](RunConfig& c, const std::string& v) {
                  if (v == "xavier") c.init = InitMode::xavier;
                  else if (v == "zero") c.init = InitMode::zero;
                  else throw ConfigError("config: 'init' must be xavier or zero, got '" + v + "'");
                },
                [](const RunConfig& c) {
                  return std::string(c.init == InitMode::zero ? "zero" : "xavier");
                }},
      AQMIX_REAL_KEY("w_acc", w_acc),
      AQMIX_REAL_KEY("w_tok", w_tok),
      AQMIX_REAL_KEY("max_tokens", max_tokens),
      AQMIX_REAL_KEY("base_tokens", env.base_tokens),
      AQMIX_REAL_KEY("edge_tokens", env.edge_tokens),
      AQMIX_REAL_KEY("reliability", env.reliability),
      AQMIX_REAL_KEY("adversary_prob", env.adversary_prob),
      ConfigKey{"seed",
                [](RunConfig& c, const std::string& v) {
                  c.seed = parse_unsigned<std::uint64_t>("seed", v);
                },
                [](const RunConfig& c) { return std::to_string(c.seed); }},
      AQMIX_SIZE_KEY(checkpoint_interval),
      ConfigKey{"suite", [](RunConfig& c, const std::string& v) { c.suite = v; },
                [](const RunConfig& c) { return c.suite; }},
  };
  return keys;
}

#undef AQMIX_SIZE_KEY
#undef AQMIX_REAL_KEY

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(k.name);
  return out;
}

// Keys not mentioned keep their defaults. The result is validated.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::map<std::string, const detail::ConfigKey*> by_name;
  for (const auto& k : detail::config_keys()) by_name[k.name] = &k;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string text = detail::trim(raw);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    auto it = by_name.find(key);
    if (it == by_name.end())
      throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + key + "'");
    try {
      it->second->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// Relative suite paths are taken relative to the config file's directory.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  RunConfig cfg = parse_config(in);
  if (!cfg.suite.empty() && std::filesystem::path(cfg.suite).is_relative())
    cfg.suite = (path.parent_path() / cfg.suite).lexically_normal().string();
  return cfg;
}

// Canonical text: every key in documented order; parses back to an equal
// config.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace aqmix
