#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dppo/error.hpp"
#include "dppo/metrics.hpp"
#include "dppo/nav_env.hpp"
#include "dppo/nn.hpp"
#include "dppo/reward.hpp"
#include "dppo/rng.hpp"

namespace dppo::eval {

enum class ActionMode { kArgmax, kSample };

inline ActionMode parse_mode(std::string_view s) {
  if (s == "argmax") return ActionMode::kArgmax;
  if (s == "sample") return ActionMode::kSample;
  throw DomainError("unknown action mode '" + std::string(s) + "' (expected argmax|sample)");
}

inline std::string_view to_string(ActionMode m) { return m == ActionMode::kArgmax ? "argmax" : "sample"; }

enum class Baseline { kRandom, kStraight };

inline Baseline parse_baseline(std::string_view s) {
  if (s == "random") return Baseline::kRandom;
  if (s == "straight") return Baseline::kStraight;
  throw DomainError("unknown baseline '" + std::string(s) + "' (expected random|straight)");
}

inline std::string_view to_string(Baseline b) { return b == Baseline::kRandom ? "random" : "straight"; }

/// Maps a normalized depth frame to an action index.
using Policy = std::function<int(const DepthImage& normalized, Rng& rng)>;

inline Policy network_policy(const nn::NetworkWeights& weights, ActionMode mode) {
  return [&weights, mode, tape = std::make_shared<nn::GradientTape>()](const DepthImage& obs, Rng& rng) {
    nn::forward(weights, obs.values, *tape);
    return mode == ActionMode::kArgmax ? nn::argmax_action(tape->output) : nn::sample_action(tape->output, rng);
  };
}

inline Policy baseline_policy(Baseline b) {
  if (b == Baseline::kStraight) return [](const DepthImage&, Rng&) { return ActionGrid::kStraight; };
  return [](const DepthImage&, Rng& rng) { return static_cast<int>(rng.below(ActionGrid::kCount)); };
}

struct TrajectoryRow {
  std::uint64_t episode = 0;
  int t = 0;  ///< 0-based step; pose is the state after the step
  AgentPose pose;
  int action = 0;
  double reward = 0.0;
};

using TrajectorySink = std::function<void(const TrajectoryRow&)>;

/// Episode i spawns with seed base_seed + i and draws actions from
/// Rng(derive_seed(base_seed + i, kEvalAction)). Records are in episode order.
inline std::vector<EpisodeRecord> run_eval(const WorldMap& map, const EnvConfig& env_cfg, const Policy& policy,
                                           int n_episodes, std::uint64_t base_seed,
                                           const TrajectorySink& trajectory = {}) {
  if (n_episodes < 1) throw DomainError("n_episodes must be at least 1");
  NavigationEnv env(map, env_cfg);
  std::vector<EpisodeRecord> records;
  records.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(seed, Stream::kEvalAction));
    DepthImage obs = normalize_depth(env.reset(seed), env.max_range());
    EpisodeRecord rec;
    rec.episode_index = static_cast<std::uint64_t>(i);
    rec.seed = seed;
    bool done = false;
    while (!done) {
      const int action = policy(obs, rng);
      const StepResult r = env.step(action);
      rec.path_length += r.distance;
      rec.total_return += r.reward;
      ++rec.steps;
      if (trajectory) trajectory({rec.episode_index, rec.steps - 1, env.pose(), action, r.reward});
      done = r.done;
      rec.collided = r.collided;
      if (!done) obs = normalize_depth(r.observation, env.max_range());
    }
    records.push_back(rec);
  }
  return records;
}

inline std::vector<EpisodeRecord> run_eval(const WorldMap& map, const EnvConfig& env_cfg,
                                           const nn::NetworkWeights& weights, int n_episodes,
                                           std::uint64_t base_seed, ActionMode mode = ActionMode::kArgmax,
                                           const TrajectorySink& trajectory = {}) {
  return run_eval(map, env_cfg, network_policy(weights, mode), n_episodes, base_seed, trajectory);
}

struct Comparison {
  SafeFlight policy;
  SafeFlight baseline;
  Baseline baseline_kind = Baseline::kRandom;
  double ratio = 0.0;  ///< policy MSF mean / baseline MSF mean
};

/// Both policies fly the same spawn seeds.
inline Comparison compare_policies(const WorldMap& map, const EnvConfig& env_cfg, const Policy& policy,
                                   const Policy& baseline, int n_episodes, std::uint64_t seed) {
  Comparison c;
  c.policy = mean_safe_flight(run_eval(map, env_cfg, policy, n_episodes, seed));
  c.baseline = mean_safe_flight(run_eval(map, env_cfg, baseline, n_episodes, seed));
  c.ratio = c.policy.mean / c.baseline.mean;
  return c;
}

inline Comparison compare_policies(const WorldMap& map, const EnvConfig& env_cfg, const nn::NetworkWeights& weights,
                                   Baseline baseline, int n_episodes, std::uint64_t seed,
                                   ActionMode mode = ActionMode::kArgmax) {
  Comparison c = compare_policies(map, env_cfg, network_policy(weights, mode), baseline_policy(baseline),
                                  n_episodes, seed);
  c.baseline_kind = baseline;
  return c;
}

}  // namespace dppo::eval
