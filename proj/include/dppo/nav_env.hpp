#pragma once

#include <concepts>
#include <cstdint>

#include "dppo/error.hpp"
#include "dppo/reward.hpp"
#include "dppo/world.hpp"

namespace dppo {

struct EnvConfig {
  CameraModel camera;
  ActionGrid actions;
  RewardConfig reward;
  SpawnSettings spawn;
  int max_steps = 500;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

struct StepResult {
  DepthImage observation;  ///< metric ranges
  double reward = 0.0;
  bool done = false;
  bool collided = false;
  double distance = 0.0;  ///< path length covered by this step
};

/// Anything the trainer and evaluator can drive.
template <class E>
concept Environment = requires(E& env, std::uint64_t seed, int action) {
  { env.reset(seed) } -> std::convertible_to<DepthImage>;
  { env.step(action) } -> std::convertible_to<StepResult>;
  { env.max_range() } -> std::convertible_to<double>;
};

/// Single-MAV episode driver: apply_action -> check_collision -> render_depth
/// -> reward. Not thread-safe; use one instance per thread.
class NavigationEnv {
 public:
  NavigationEnv(WorldMap map, EnvConfig cfg) : map_(std::move(map)), cfg_(cfg) {
    map_.validate();
    cfg_.camera.validate();
    if (cfg_.max_steps < 1) throw DomainError("max_steps must be positive");
  }

  DepthImage reset(std::uint64_t spawn_seed) {
    pose_ = spawn(map_, spawn_seed, cfg_.spawn);
    steps_ = 0;
    path_length_ = 0.0;
    done_ = false;
    collided_ = false;
    return render_depth(pose_, map_, cfg_.camera);
  }

  /// Resumes an episode at `pose` with `steps` already taken.
  DepthImage restore(const AgentPose& pose, int steps, double path_length) {
    if (check_collision(pose, map_, cfg_.spawn.radius)) throw InvalidPoseError("restored pose collides");
    pose_ = pose;
    steps_ = steps;
    path_length_ = path_length;
    done_ = steps_ >= cfg_.max_steps;
    collided_ = false;
    return render_depth(pose_, map_, cfg_.camera);
  }

  StepResult step(int action_index) {
    if (done_) throw EpisodeFinishedError("step called on a finished episode");
    const ActionCommand cmd = decode_action(action_index, cfg_.actions);
    pose_ = apply_action(pose_, cmd, map_.bounds);
    ++steps_;
    StepResult r;
    r.distance = cmd.forward_step;
    path_length_ += r.distance;
    r.collided = check_collision(pose_, map_, cfg_.spawn.radius);

    AgentPose view = pose_;
    const Box& b = map_.bounds;
    view.position = {std::clamp(view.position.x, b.lo.x, b.hi.x), std::clamp(view.position.y, b.lo.y, b.hi.y),
                     std::clamp(view.position.z, b.lo.z, b.hi.z)};
    r.observation = render_depth(view, map_, cfg_.camera);
    r.reward = frame_reward(r.observation, r.collided, cfg_.reward).value;
    r.done = r.collided || steps_ >= cfg_.max_steps;
    done_ = r.done;
    collided_ = r.collided;
    return r;
  }

  double max_range() const { return map_.max_range; }
  const WorldMap& map() const { return map_; }
  const EnvConfig& config() const { return cfg_; }
  const AgentPose& pose() const { return pose_; }
  int steps() const { return steps_; }
  double path_length() const { return path_length_; }
  bool done() const { return done_; }
  bool collided() const { return collided_; }

 private:
  WorldMap map_;
  EnvConfig cfg_;
  AgentPose pose_;
  int steps_ = 0;
  double path_length_ = 0.0;
  bool done_ = true;
  bool collided_ = false;
};

static_assert(Environment<NavigationEnv>);

}  // namespace dppo
