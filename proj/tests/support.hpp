#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dppo/dppo.hpp"

namespace support {

/// One-step environment: action `good` earns 100, every other action collides.
struct OneStepEnv {
  int size = 16;
  int good = 17;

  dppo::DepthImage reset(std::uint64_t seed) {
    dppo::DepthImage img(size, size);
    dppo::Rng rng(seed);
    for (double& v : img.values) v = 0.5 + 0.5 * rng.uniform();
    return img;
  }
  dppo::StepResult step(int action) {
    dppo::StepResult r;
    r.observation = dppo::DepthImage(size, size, 1.0);
    r.collided = action != good;
    r.reward = r.collided ? -10.0 : 100.0;
    r.done = true;
    r.distance = 0.5;
    return r;
  }
  double max_range() const { return 1.0; }
};
static_assert(dppo::Environment<OneStepEnv>);

/// Every action collides immediately.
struct AlwaysCollideEnv {
  int size = 16;
  dppo::DepthImage reset(std::uint64_t) { return dppo::DepthImage(size, size, 0.5); }
  dppo::StepResult step(int) {
    dppo::StepResult r;
    r.observation = dppo::DepthImage(size, size, 0.5);
    r.collided = true;
    r.done = true;
    r.reward = -10.0;
    r.distance = 0.5;
    return r;
  }
  double max_range() const { return 1.0; }
};
static_assert(dppo::Environment<AlwaysCollideEnv>);

/// A prepared buffer of random observations with stale log-probs, so some
/// samples sit on each side of the clip range.
inline dppo::ppo::RolloutBuffer random_buffer(const dppo::nn::NetworkWeights& w, std::size_t n, std::uint64_t seed) {
  dppo::Rng rng(seed);
  dppo::ppo::RolloutBuffer buf;
  const int pixels = w.arch.input_size * w.arch.input_size;
  for (std::size_t i = 0; i < n; ++i) {
    dppo::ppo::Transition t;
    t.observation.resize(static_cast<std::size_t>(pixels));
    for (double& v : t.observation) v = rng.uniform();
    const auto out = dppo::nn::forward(w, t.observation);
    t.action = static_cast<int>(rng.below(static_cast<std::uint64_t>(w.arch.actions)));
    t.log_prob_old = out.log_probs[t.action] + rng.uniform(-0.5, 0.5);
    t.value_old = out.value;
    t.reward = rng.uniform(-1.0, 1.0);
    buf.transitions.push_back(std::move(t));
    buf.advantages.push_back(rng.uniform(-2.0, 2.0));
    buf.returns.push_back(rng.uniform(-1.0, 1.0));
  }
  return buf;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t passed = 0;
  /// Entries sampled per layer (weight + bias pair), in tensor order.
  std::vector<std::size_t> per_layer;
  std::vector<std::size_t> layer_sizes;
  double worst = 0.0;
  std::vector<std::string> failures;

  double pass_rate() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 0.0; }
  /// Every layer had at least `n` entries checked, or all of them when smaller.
  bool covers(std::size_t n) const {
    for (std::size_t i = 0; i < per_layer.size(); ++i)
      if (per_layer[i] < std::min(n, layer_sizes[i])) return false;
    return !per_layer.empty();
  }
};

/// Compares analytic gradients of the full PPO loss against central
/// differences with step h, sampling up to `per_tensor` entries of every tensor.
inline GradCheck check_gradients(dppo::nn::NetworkWeights w, const dppo::ppo::RolloutBuffer& buf,
                                 const dppo::ppo::PPOConfig& cfg, std::size_t per_tensor, std::uint64_t seed,
                                 double h = 1e-4, double rel_tol = 1e-4, double abs_tol = 1e-8) {
  std::vector<std::size_t> all(buf.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto grads = w.zeros_like();
  dppo::ppo::minibatch_loss(w, buf, all, cfg, &grads);
  const auto loss = [&] { return dppo::ppo::minibatch_loss(w, buf, all, cfg).total_loss; };

  GradCheck r;
  r.per_layer.assign(w.params.size() / 2, 0);
  r.layer_sizes.assign(w.params.size() / 2, 0);
  dppo::Rng rng(seed);
  const auto names = dppo::nn::NetworkWeights::names();
  for (std::size_t ti = 0; ti < w.params.size(); ++ti) {
    const auto values = w.params[ti].values();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    idx.resize(std::min(idx.size(), per_tensor));
    r.per_layer[ti / 2] += idx.size();
    r.layer_sizes[ti / 2] += values.size();
    for (std::size_t k : idx) {
      const double saved = values[k];
      values[k] = saved + h;
      const double up = loss();
      values[k] = saved - h;
      const double down = loss();
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads.params[ti].values()[k];
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      bool ok;
      double err;
      if (scale < abs_tol) {
        err = std::abs(analytic - numeric);
        ok = err <= abs_tol;
      } else {
        err = std::abs(analytic - numeric) / scale;
        ok = err <= rel_tol;
      }
      ++r.checked;
      if (ok) {
        ++r.passed;
      } else {
        r.failures.push_back(names[ti] + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) +
                             " numeric " + std::to_string(numeric));
      }
      if (scale >= abs_tol) r.worst = std::max(r.worst, err);
    }
  }
  return r;
}

}  // namespace support
