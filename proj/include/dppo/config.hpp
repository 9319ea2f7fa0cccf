#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dppo/error.hpp"
#include "dppo/eval.hpp"
#include "dppo/maps.hpp"
#include "dppo/nav_env.hpp"
#include "dppo/nn.hpp"
#include "dppo/ppo.hpp"
#include "dppo/text.hpp"
#include "dppo/world.hpp"

namespace dppo {

struct EvalSettings {
  int n_episodes = 10;
  int window = 50;
  eval::ActionMode mode = eval::ActionMode::kArgmax;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct RunConfig {
  std::string map_path;  ///< empty selects the bundled corridor map
  EnvConfig env;
  nn::ArchConfig net;
  ppo::PPOConfig ppo;
  EvalSettings eval;
  std::uint64_t master_seed = 0;
  std::string output_dir = "dppo_run";

  /// Base spawn seed for evaluation runs, derived from the master seed.
  std::uint64_t eval_seed() const { return derive_seed(master_seed, Stream::kEvalSeeds); }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace config_detail {

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> parse;
  std::function<std::string(const RunConfig&)> emit;
};

[[noreturn]] inline void type_error(const std::string& key, std::string_view value, const char* expected) {
  throw ConfigError(key, std::string("expected ") + expected + ", got '" + std::string(value) + "'");
}

template <class Get>
Field real(std::string key, Get get) {
  return {key,
          [key, get](RunConfig& c, std::string_view v) {
            const auto x = text::parse_double(v);
            if (!x) type_error(key, v, "a real number");
            get(c) = *x;
          },
          [get](const RunConfig& c) { return text::format_double(get(c)); }};
}

template <class Get>
Field integer(std::string key, Get get) {
  return {key,
          [key, get](RunConfig& c, std::string_view v) {
            const auto x = text::parse_int(v);
            if (!x) type_error(key, v, "an integer");
            using T = std::remove_reference_t<decltype(get(c))>;
            if (*x < std::numeric_limits<T>::min() || *x > std::numeric_limits<T>::max())
              throw ConfigError(key, "integer out of range");
            get(c) = static_cast<T>(*x);
          },
          [get](const RunConfig& c) { return std::to_string(get(c)); }};
}

template <std::size_t N, class Get>
Field int_list(std::string key, Get get) {
  return {key,
          [key, get](RunConfig& c, std::string_view v) {
            const auto parts = text::split_ws(v);
            if (parts.size() != N) throw ConfigError(key, "expected " + std::to_string(N) + " integers");
            auto& arr = get(c);
            for (std::size_t i = 0; i < N; ++i) {
              const auto x = text::parse_int(parts[i]);
              if (!x || *x < 1 || *x > (1 << 20)) type_error(key, v, "positive integers");
              arr[i] = static_cast<int>(*x);
            }
          },
          [get](const RunConfig& c) {
            std::string out;
            for (int x : get(c)) out += (out.empty() ? "" : " ") + std::to_string(x);
            return out;
          }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"map_path", [](RunConfig& c, std::string_view v) { c.map_path = std::string(v); },
                 [](const RunConfig& c) { return c.map_path; }});
    f.push_back({"master_seed",
                 [](RunConfig& c, std::string_view v) {
                   const auto x = text::parse_uint(v);
                   if (!x) type_error("master_seed", v, "an unsigned integer");
                   c.master_seed = *x;
                 },
                 [](const RunConfig& c) { return std::to_string(c.master_seed); }});
    f.push_back({"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
                 [](const RunConfig& c) { return c.output_dir; }});

    f.push_back(integer("camera.width", [](auto& c) -> auto& { return c.env.camera.width; }));
    f.push_back(integer("camera.height", [](auto& c) -> auto& { return c.env.camera.height; }));
    f.push_back(real("camera.horizontal_fov", [](auto& c) -> auto& { return c.env.camera.horizontal_fov; }));
    f.push_back(real("camera.vertical_fov", [](auto& c) -> auto& { return c.env.camera.vertical_fov; }));

    f.push_back(real("action.forward_step", [](auto& c) -> auto& { return c.env.actions.forward_step; }));
    f.push_back(real("action.yaw_bin", [](auto& c) -> auto& { return c.env.actions.yaw_bin; }));
    f.push_back(real("action.climb_bin", [](auto& c) -> auto& { return c.env.actions.climb_bin; }));

    f.push_back(integer("env.max_steps", [](auto& c) -> auto& { return c.env.max_steps; }));
    f.push_back(real("env.collision_radius", [](auto& c) -> auto& { return c.env.spawn.radius; }));
    f.push_back(integer("env.spawn_attempts", [](auto& c) -> auto& { return c.env.spawn.max_attempts; }));

    f.push_back(real("reward.tau", [](auto& c) -> auto& { return c.env.reward.tau; }));
    f.push_back(real("reward.d_min", [](auto& c) -> auto& { return c.env.reward.d_min; }));

    f.push_back(integer("net.input_size", [](auto& c) -> auto& { return c.net.input_size; }));
    f.push_back(int_list<4>("net.filters", [](auto& c) -> auto& { return c.net.filters; }));
    f.push_back(int_list<4>("net.kernels", [](auto& c) -> auto& { return c.net.kernels; }));
    f.push_back(int_list<3>("net.dense", [](auto& c) -> auto& { return c.net.dense; }));

    f.push_back(real("ppo.gamma", [](auto& c) -> auto& { return c.ppo.gamma; }));
    f.push_back(real("ppo.gae_lambda", [](auto& c) -> auto& { return c.ppo.gae_lambda; }));
    f.push_back(real("ppo.clip_epsilon", [](auto& c) -> auto& { return c.ppo.clip_epsilon; }));
    f.push_back(real("ppo.learning_rate", [](auto& c) -> auto& { return c.ppo.learning_rate; }));
    f.push_back(integer("ppo.epochs_per_update", [](auto& c) -> auto& { return c.ppo.epochs_per_update; }));
    f.push_back(integer("ppo.minibatch_size", [](auto& c) -> auto& { return c.ppo.minibatch_size; }));
    f.push_back(integer("ppo.rollout_horizon", [](auto& c) -> auto& { return c.ppo.rollout_horizon; }));
    f.push_back(real("ppo.value_coef", [](auto& c) -> auto& { return c.ppo.value_coef; }));
    f.push_back(real("ppo.entropy_coef", [](auto& c) -> auto& { return c.ppo.entropy_coef; }));
    f.push_back(
        integer("ppo.total_episodes", [](auto& c) -> auto& { return c.ppo.total_episodes; }));
    f.push_back(real("ppo.reward_scale", [](auto& c) -> auto& { return c.ppo.reward_scale; }));
    f.push_back(integer("ppo.checkpoint_every", [](auto& c) -> auto& { return c.ppo.checkpoint_every; }));

    f.push_back(integer("eval.n_episodes", [](auto& c) -> auto& { return c.eval.n_episodes; }));
    f.push_back(integer("eval.window", [](auto& c) -> auto& { return c.eval.window; }));
    f.push_back({"eval.mode",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.eval.mode = eval::parse_mode(v);
                   } catch (const DomainError&) {
                     type_error("eval.mode", v, "argmax or sample");
                   }
                 },
                 [](const RunConfig& c) { return std::string(eval::to_string(c.eval.mode)); }});
    return f;
  }();
  return table;
}

}  // namespace config_detail

/// Range checks owned by each module; errors name the key.
inline void validate(const RunConfig& c) {
  try {
    c.env.camera.validate();
  } catch (const DomainError& e) {
    throw ConfigError("camera", e.what());
  }
  if (!(c.env.actions.forward_step > 0.0)) throw ConfigError("action.forward_step", "must be positive");
  if (!(c.env.actions.yaw_bin >= 0.0)) throw ConfigError("action.yaw_bin", "must be non-negative");
  if (!(c.env.actions.climb_bin >= 0.0)) throw ConfigError("action.climb_bin", "must be non-negative");
  if (c.env.max_steps < 1) throw ConfigError("env.max_steps", "must be positive");
  if (!(c.env.spawn.radius > 0.0)) throw ConfigError("env.collision_radius", "must be positive");
  if (c.env.spawn.max_attempts < 1) throw ConfigError("env.spawn_attempts", "must be positive");
  if (!(c.env.reward.tau > 0.0 && c.env.reward.tau < 1.0)) throw ConfigError("reward.tau", "must lie in (0, 1)");
  if (!(c.env.reward.d_min > 0.0)) throw ConfigError("reward.d_min", "must be positive");
  c.net.validate();
  if (c.env.camera.width != c.net.input_size)
    throw ConfigError("camera.width", "must equal net.input_size (" + std::to_string(c.net.input_size) + ")");
  if (c.env.camera.height != c.net.input_size)
    throw ConfigError("camera.height", "must equal net.input_size (" + std::to_string(c.net.input_size) + ")");
  c.ppo.validate();
  if (c.eval.n_episodes < 1) throw ConfigError("eval.n_episodes", "must be positive");
  if (c.eval.window < 1) throw ConfigError("eval.window", "must be positive");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (!c.map_path.empty() && !std::filesystem::is_regular_file(c.map_path))
    throw ConfigError("map_path", "map file not found: " + c.map_path);
}

/// Parses `key = value` lines (`#` comments, dotted keys). Unknown or repeated
/// keys are errors; absent keys keep their defaults. Relative `map_path` values
/// resolve against `base_dir`.
inline RunConfig parse_config(std::string_view source, const std::filesystem::path& base_dir = {}) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  const auto& table = config_detail::fields();
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= source.size()) {
    const std::size_t end = std::min(source.find('\n', pos), source.size());
    const std::string_view raw = source.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string_view line = text::trim(text::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("", "expected 'key = value'", line_no);
    const std::string key(text::trim(line.substr(0, eq)));
    const std::string_view value = text::trim(line.substr(eq + 1));
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(key, "unknown key", line_no);
    if (seen.count(key)) throw ConfigError(key, "duplicate key (first set on line " +
                                                    std::to_string(seen[key]) + ")", line_no);
    seen[key] = line_no;
    try {
      it->parse(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key, e.message(), line_no);
    }
  }
  if (!cfg.map_path.empty()) {
    std::filesystem::path p(cfg.map_path);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    cfg.map_path = std::filesystem::absolute(p).lexically_normal().string();
  }
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    const auto hit = seen.find(e.key());
    if (hit != seen.end() && e.line() == 0) throw ConfigError(e.key(), e.message(), hit->second);
    throw;
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

/// Every effective value, one `key = value` line each, in a fixed order.
inline std::string emit_config(const RunConfig& cfg) {
  std::string out = "# resolved configuration\n";
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.emit(cfg) + "\n";
  return out;
}

inline WorldMap load_world(const RunConfig& cfg) {
  return cfg.map_path.empty() ? parse_map(maps::kCorridor, "<corridor>") : load_map(cfg.map_path);
}

}  // namespace dppo
