#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dppo/adam.hpp"
#include "dppo/checkpoint.hpp"
#include "dppo/error.hpp"
#include "dppo/metrics.hpp"
#include "dppo/nav_env.hpp"
#include "dppo/nn.hpp"
#include "dppo/reward.hpp"
#include "dppo/rng.hpp"

namespace dppo::ppo {

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double learning_rate = 3e-4;
  int epochs_per_update = 4;
  int minibatch_size = 64;
  int rollout_horizon = 2048;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  std::int64_t total_episodes = 1000;
  /// Multiplies rewards before returns/advantages are formed (value targets
  /// only; logged returns stay raw).
  double reward_scale = 1.0;
  int checkpoint_every = 10;  ///< updates between periodic checkpoints

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma", "must lie in (0, 1]");
    if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda", "must lie in (0, 1]");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("ppo.clip_epsilon", "must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate", "must be positive");
    if (epochs_per_update < 1) throw ConfigError("ppo.epochs_per_update", "must be positive");
    if (minibatch_size < 1) throw ConfigError("ppo.minibatch_size", "must be positive");
    if (rollout_horizon < 1) throw ConfigError("ppo.rollout_horizon", "must be positive");
    if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef", "must be non-negative");
    if (!(entropy_coef >= 0.0)) throw ConfigError("ppo.entropy_coef", "must be non-negative");
    if (total_episodes < 0) throw ConfigError("ppo.total_episodes", "must be non-negative");
    if (!(reward_scale > 0.0)) throw ConfigError("ppo.reward_scale", "must be positive");
    if (checkpoint_every < 1) throw ConfigError("ppo.checkpoint_every", "must be positive");
  }

  friend bool operator==(const PPOConfig&, const PPOConfig&) = default;
};

struct Transition {
  std::vector<double> observation;  ///< normalized depth, row-major
  int action = 0;
  double log_prob_old = 0.0;
  double reward = 0.0;  ///< raw environment reward
  double value_old = 0.0;
  bool done = false;
  std::int64_t t = 0;  ///< step index within its episode

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<double> returns;
  std::vector<double> advantages;
  /// V(s_T) for the state after the last transition; 0 when it ended an episode.
  double bootstrap_value = 0.0;

  std::size_t size() const { return transitions.size(); }
  bool prepared() const { return returns.size() == size() && advantages.size() == size(); }

  friend bool operator==(const RolloutBuffer&, const RolloutBuffer&) = default;
};

/// G_t = r_t + gamma * G_{t+1}; G resets to 0 after a terminal step and starts
/// from `bootstrap` past the end. An empty `dones` means no terminals.
inline std::vector<double> discounted_return(std::span<const double> rewards, double gamma, double bootstrap = 0.0,
                                             const std::vector<bool>& dones = {}) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("gamma must lie in (0, 1]");
  std::vector<double> out(rewards.size());
  double next = bootstrap;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const bool terminal = !dones.empty() && dones[i];
    out[i] = rewards[i] + (terminal ? 0.0 : gamma * next);
    next = out[i];
  }
  return out;
}

/// Shifts to zero mean and scales to unit (population) variance. A constant
/// batch is only centered.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= n;
  const double sd = std::sqrt(var);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

/// GAE over the buffer:
///   delta_t = s*r_t + gamma * V_{t+1} * (1 - done_t) - V_t
///   A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
/// returns_t = A_t + V_t (before normalization); advantages are then
/// normalized when `normalize` is set. `s` is `reward_scale`.
inline void gae_advantages(RolloutBuffer& buf, double gamma, double lambda, bool normalize = true,
                           double reward_scale = 1.0) {
  const std::size_t n = buf.size();
  buf.advantages.assign(n, 0.0);
  buf.returns.assign(n, 0.0);
  double next_value = buf.bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Transition& tr = buf.transitions[i];
    const double live = tr.done ? 0.0 : 1.0;
    const double delta = reward_scale * tr.reward + gamma * next_value * live - tr.value_old;
    const double adv = delta + gamma * lambda * live * next_adv;
    buf.advantages[i] = adv;
    buf.returns[i] = adv + tr.value_old;
    next_value = tr.value_old;
    next_adv = adv;
  }
  if (normalize) normalize_advantages(buf.advantages);
}

/// -min(r * A, clip(r, 1 - eps, 1 + eps) * A)
inline double clipped_surrogate_loss(double ratio, double advantage, double clip_epsilon) {
  if (!(ratio > 0.0)) throw DomainError("probability ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return -std::min(ratio * advantage, clipped * advantage);
}

/// Per-sample pieces of the PPO objective.
struct SampleLoss {
  double policy_loss = 0.0;
  double value_loss = 0.0;  ///< (V - G)^2
  double entropy = 0.0;
  double ratio = 1.0;
  double total = 0.0;  ///< policy + c_v * value - c_e * entropy
};

/// Evaluates one sample's loss from a network output and, when `grad_logits`
/// is non-empty, writes `weight` * d(total)/d(logits) into it and returns the
/// matching d(total)/dV through `grad_value`.
inline SampleLoss sample_loss(const nn::PolicyOutput& out, int action, double log_prob_old, double advantage,
                              double target, const PPOConfig& cfg, double weight = 1.0,
                              std::span<double> grad_logits = {}, double* grad_value = nullptr) {
  SampleLoss s;
  s.ratio = std::exp(out.log_probs[action] - log_prob_old);
  s.policy_loss = clipped_surrogate_loss(s.ratio, advantage, cfg.clip_epsilon);
  s.value_loss = (out.value - target) * (out.value - target);
  s.entropy = out.entropy();
  s.total = s.policy_loss + cfg.value_coef * s.value_loss - cfg.entropy_coef * s.entropy;
  if (!grad_logits.empty()) {
    const double clipped = std::clamp(s.ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    // The unclipped branch carries the gradient whenever it attains the min.
    const double dlogp = s.ratio * advantage <= clipped * advantage ? -advantage * s.ratio : 0.0;
    for (std::size_t j = 0; j < out.probs.size(); ++j) {
      const double p = out.probs[j];
      const double onehot = static_cast<int>(j) == action ? 1.0 : 0.0;
      double g = dlogp * (onehot - p);
      g += cfg.entropy_coef * p * (out.log_probs[j] + s.entropy);
      grad_logits[j] = weight * g;
    }
    if (grad_value) *grad_value = weight * 2.0 * cfg.value_coef * (out.value - target);
  }
  return s;
}

/// Means over every sample processed by an update.
struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;  ///< E[(r - 1) - log r]
  double total_loss = 0.0;
  std::size_t samples = 0;

  friend bool operator==(const UpdateStats&, const UpdateStats&) = default;
};

/// Mean loss over `indices` of a prepared buffer; accumulates the gradient of
/// that mean into `grads` when provided.
inline UpdateStats minibatch_loss(const nn::NetworkWeights& weights, const RolloutBuffer& buf,
                                  std::span<const std::size_t> indices, const PPOConfig& cfg,
                                  nn::NetworkWeights* grads = nullptr, nn::GradientTape* scratch = nullptr) {
  if (!buf.prepared()) throw DomainError("rollout buffer has no returns/advantages");
  UpdateStats st;
  if (indices.empty()) return st;
  nn::GradientTape local;
  nn::GradientTape& tape = scratch ? *scratch : local;
  const double weight = 1.0 / static_cast<double>(indices.size());
  std::vector<double> g_logits(static_cast<std::size_t>(weights.arch.actions));
  for (std::size_t idx : indices) {
    const Transition& tr = buf.transitions[idx];
    nn::forward(weights, tr.observation, tape);
    double g_value = 0.0;
    const SampleLoss s = sample_loss(tape.output, tr.action, tr.log_prob_old, buf.advantages[idx], buf.returns[idx],
                                     cfg, weight, grads ? std::span<double>(g_logits) : std::span<double>(),
                                     &g_value);
    if (grads) nn::accumulate_gradients(weights, tape, g_logits, g_value, *grads);
    st.policy_loss += s.policy_loss;
    st.value_loss += s.value_loss;
    st.entropy += s.entropy;
    st.total_loss += s.total;
    st.clip_frac += std::abs(s.ratio - 1.0) > cfg.clip_epsilon ? 1.0 : 0.0;
    st.approx_kl += (s.ratio - 1.0) - std::log(s.ratio);
  }
  st.samples = indices.size();
  for (double* v : {&st.policy_loss, &st.value_loss, &st.entropy, &st.total_loss, &st.clip_frac, &st.approx_kl})
    *v *= weight;
  return st;
}

/// Clipped-surrogate objective (not negated) over the whole buffer.
inline double surrogate_objective(const nn::NetworkWeights& weights, const RolloutBuffer& buf,
                                  const PPOConfig& cfg) {
  std::vector<std::size_t> all(buf.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return -minibatch_loss(weights, buf, all, cfg).policy_loss;
}

/// epochs_per_update passes over shuffled minibatches, one Adam step each.
/// On a non-finite loss or gradient the weights and optimizer state are
/// restored and NonFiniteError is thrown.
inline UpdateStats ppo_update(nn::NetworkWeights& weights, nn::AdamState& adam, const RolloutBuffer& buf,
                              const PPOConfig& cfg, std::uint64_t shuffle_seed) {
  if (!buf.prepared()) throw DomainError("rollout buffer has no returns/advantages");
  const nn::NetworkWeights saved_weights = weights;
  const nn::AdamState saved_adam = adam;
  const auto abort = [&](const std::string& why) {
    weights = saved_weights;
    adam = saved_adam;
    throw NonFiniteError("ppo update aborted: " + why);
  };

  Rng rng(shuffle_seed);
  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::NetworkWeights grads = weights.zeros_like();
  nn::GradientTape tape;
  UpdateStats total;
  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      grads.set_zero();
      const UpdateStats st = minibatch_loss(weights, buf, batch, cfg, &grads, &tape);
      if (!std::isfinite(st.total_loss)) abort("non-finite loss");
      try {
        nn::adam_step(weights, grads, adam, cfg.learning_rate);
      } catch (const NonFiniteError&) {
        abort("non-finite gradient");
      }
      const double n = static_cast<double>(st.samples);
      total.policy_loss += st.policy_loss * n;
      total.value_loss += st.value_loss * n;
      total.entropy += st.entropy * n;
      total.clip_frac += st.clip_frac * n;
      total.approx_kl += st.approx_kl * n;
      total.total_loss += st.total_loss * n;
      total.samples += st.samples;
    }
  }
  if (total.samples > 0) {
    const double inv = 1.0 / static_cast<double>(total.samples);
    for (double* v : {&total.policy_loss, &total.value_loss, &total.entropy, &total.clip_frac, &total.approx_kl,
                      &total.total_loss})
      *v *= inv;
  }
  return total;
}

/// Drives one environment across rollouts; episodes continue across rollout
/// boundaries and restart from a seeded spawn when they end.
template <Environment Env>
class RolloutCollector {
 public:
  RolloutCollector(Env& env, std::uint64_t master_seed, std::uint64_t next_episode = 0)
      : env_(env), master_seed_(master_seed), episode_index_(next_episode) {}

  /// Continues a checkpointed open episode (navigation environments only).
  void resume(const OpenEpisode& open)
    requires requires(Env& e) { e.restore(AgentPose{}, 0, 0.0); }
  {
    obs_ = normalize_depth(env_.restore(open.pose, static_cast<int>(open.steps), open.path_length), env_.max_range());
    steps_ = static_cast<int>(open.steps);
    path_length_ = open.path_length;
    return_ = open.episode_return;
    active_ = true;
  }

  std::optional<OpenEpisode> open_episode() const
    requires requires(const Env& e) { e.pose(); }
  {
    if (!active_) return std::nullopt;
    return OpenEpisode{env_.pose(), static_cast<std::uint64_t>(steps_), path_length_, return_};
  }

  std::uint64_t next_episode_index() const { return episode_index_; }

  /// Exactly `horizon` transitions; finished episodes are appended to `finished`.
  RolloutBuffer collect(const nn::NetworkWeights& weights, int horizon, Rng& rng,
                        std::vector<EpisodeRecord>* finished = nullptr) {
    if (horizon < 1) throw DomainError("rollout horizon must be at least 1");
    RolloutBuffer buf;
    buf.transitions.reserve(static_cast<std::size_t>(horizon));
    nn::GradientTape tape;
    for (int h = 0; h < horizon; ++h) {
      if (!active_) start_episode();
      nn::forward(weights, obs_.values, tape);
      const nn::PolicyOutput& out = tape.output;
      const int action = nn::sample_action(out, rng);
      Transition tr;
      tr.observation = obs_.values;
      tr.action = action;
      tr.log_prob_old = out.log_probs[action];
      tr.value_old = out.value;
      tr.t = steps_;
      const StepResult r = env_.step(action);
      tr.reward = r.reward;
      tr.done = r.done;
      buf.transitions.push_back(std::move(tr));
      ++steps_;
      path_length_ += r.distance;
      return_ += r.reward;
      if (r.done) {
        if (finished) {
          finished->push_back({episode_index_, path_length_, steps_, r.collided, return_, spawn_seed_});
        }
        ++episode_index_;
        active_ = false;
      } else {
        obs_ = normalize_depth(r.observation, env_.max_range());
      }
    }
    if (active_) {
      nn::forward(weights, obs_.values, tape);
      buf.bootstrap_value = tape.output.value;
    }
    return buf;
  }

 private:
  void start_episode() {
    spawn_seed_ = derive_seed(master_seed_, Stream::kSpawn, episode_index_);
    obs_ = normalize_depth(env_.reset(spawn_seed_), env_.max_range());
    steps_ = 0;
    path_length_ = 0.0;
    return_ = 0.0;
    active_ = true;
  }

  Env& env_;
  std::uint64_t master_seed_;
  std::uint64_t episode_index_;
  std::uint64_t spawn_seed_ = 0;
  DepthImage obs_;
  int steps_ = 0;
  double path_length_ = 0.0;
  double return_ = 0.0;
  bool active_ = false;
};

/// Free function form: one rollout from the collector's current state.
template <Environment Env>
RolloutBuffer collect_rollout(RolloutCollector<Env>& collector, const nn::NetworkWeights& weights, int horizon,
                              Rng& rng, std::vector<EpisodeRecord>* finished = nullptr) {
  return collector.collect(weights, horizon, rng, finished);
}

struct TrainingHooks {
  /// Called once per logged episode with the trailing moving-average return.
  std::function<void(const EpisodeRecord&, double moving_avg)> on_episode;
  std::function<void(std::uint64_t update, const UpdateStats&)> on_update;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

/// Alternates collect -> GAE -> update until `total_episodes` episodes have been
/// logged. Random streams per update index and spawn seeds per episode index
/// make a resumed run identical to an uninterrupted one.
template <Environment Env>
Checkpoint train(Env& env, const nn::ArchConfig& arch, const PPOConfig& cfg, std::uint64_t master_seed,
                 int moving_avg_window, const TrainingHooks& hooks = {},
                 const std::optional<Checkpoint>& resume = std::nullopt) {
  cfg.validate();
  if (moving_avg_window < 1) throw DomainError("moving-average window must be at least 1");
  Checkpoint state;
  if (resume) {
    state = *resume;
    if (!(state.weights.arch == arch)) throw ShapeMismatchError("checkpoint architecture differs from config");
  } else {
    state.weights = nn::init_weights(master_seed, arch);
    state.optimizer = nn::AdamState::for_weights(state.weights);
  }
  const auto total = static_cast<std::uint64_t>(cfg.total_episodes);

  RolloutCollector<Env> collector(env, master_seed, state.progress.episodes);
  if constexpr (requires { collector.resume(OpenEpisode{}); }) {
    if (state.progress.open_episode) collector.resume(*state.progress.open_episode);
  }
  const auto snapshot = [&] {
    if constexpr (requires { collector.open_episode(); }) state.progress.open_episode = collector.open_episode();
    if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  };
  if (!resume) snapshot();

  std::vector<EpisodeRecord> finished;
  while (state.progress.episodes < total) {
    const std::uint64_t update = state.progress.updates;
    Rng rng(derive_seed(master_seed, Stream::kRollout, update));
    finished.clear();
    RolloutBuffer buf = collector.collect(state.weights, cfg.rollout_horizon, rng, &finished);
    for (const auto& rec : finished) {
      if (rec.episode_index >= total) continue;
      state.progress.episode_returns.push_back(rec.total_return);
      const auto& hist = state.progress.episode_returns;
      const double ma = trailing_mean(hist, hist.size() - 1, moving_avg_window);
      if (hooks.on_episode) hooks.on_episode(rec, ma);
    }
    state.progress.episodes = collector.next_episode_index();
    gae_advantages(buf, cfg.gamma, cfg.gae_lambda, true, cfg.reward_scale);
    const UpdateStats stats =
        ppo_update(state.weights, state.optimizer, buf, cfg, derive_seed(master_seed, Stream::kShuffle, update));
    state.progress.updates = update + 1;
    if (hooks.on_update) hooks.on_update(update, stats);
    if (state.progress.updates % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 ||
        state.progress.episodes >= total) {
      snapshot();
    }
  }
  if constexpr (requires { collector.open_episode(); }) state.progress.open_episode = collector.open_episode();
  return state;
}

}  // namespace dppo::ppo
