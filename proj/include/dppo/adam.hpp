#pragma once

#include <cmath>
#include <cstdint>

#include "dppo/error.hpp"
#include "dppo/nn.hpp"

namespace dppo::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates, shaped like the weights.
struct AdamState {
  std::uint64_t step = 0;
  NetworkWeights first_moment;
  NetworkWeights second_moment;

  static AdamState for_weights(const NetworkWeights& w) {
    return {0, w.zeros_like(), w.zeros_like()};
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step. Rejects non-finite gradients before touching
/// any state.
inline void adam_step(NetworkWeights& weights, const NetworkWeights& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (grads.params.size() != weights.params.size() || state.first_moment.params.size() != weights.params.size())
    throw ShapeMismatchError("adam: gradient/state layout does not match weights");
  for (std::size_t i = 0; i < weights.params.size(); ++i) {
    if (grads.params[i].shape() != weights.params[i].shape())
      throw ShapeMismatchError("adam: gradient shape mismatch at tensor " + std::to_string(i));
  }
  if (!grads.all_finite()) throw NonFiniteError("adam: non-finite gradient");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < weights.params.size(); ++i) {
    double* w = weights.params[i].data();
    const double* g = grads.params[i].data();
    double* m = state.first_moment.params[i].data();
    double* v = state.second_moment.params[i].data();
    const std::size_t n = weights.params[i].size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace dppo::nn
