#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dppo/error.hpp"
#include "dppo/rng.hpp"
#include "dppo/tensor.hpp"
#include "dppo/world.hpp"

namespace dppo::nn {

inline constexpr int kConvStages = 4;
inline constexpr int kDenseLayers = 3;

/// Shared-trunk actor-critic CNN:
///   [conv k_i x k_i, same padding -> 2x2 max-pool -> ReLU] x 4
///   -> flatten -> [dense -> ReLU] x 3 -> {policy logits, value}
struct ArchConfig {
  int input_size = 128;
  std::array<int, kConvStages> filters{96, 64, 64, 64};
  std::array<int, kConvStages> kernels{7, 5, 3, 3};
  std::array<int, kDenseLayers> dense{1024, 256, 128};
  int actions = ActionGrid::kCount;

  /// Reduced configuration used by the gradient-check suites.
  static ArchConfig reduced(int input_size = 16) {
    ArchConfig a;
    a.input_size = input_size;
    a.filters = {8, 8, 8, 8};
    a.dense = {32, 16, 8};
    return a;
  }

  int pooled_size() const { return input_size >> kConvStages; }
  int flatten_width() const { return pooled_size() * pooled_size() * filters.back(); }

  void validate() const {
    constexpr int kStride = 1 << kConvStages;
    if (input_size < kStride || input_size % kStride != 0)
      throw ConfigError("net.input_size", "must be a positive multiple of 16");
    for (int i = 0; i < kConvStages; ++i) {
      if (filters[i] < 1) throw ConfigError("net.filters", "filter counts must be positive");
      if (kernels[i] < 1 || kernels[i] % 2 == 0)
        throw ConfigError("net.kernels", "kernel sizes must be odd and positive");
    }
    for (int w : dense)
      if (w < 1) throw ConfigError("net.dense", "dense widths must be positive");
    if (actions < 2) throw ConfigError("net.actions", "need at least two actions");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Every learnable tensor in a fixed order:
///   conv{0..3}.kernel [F, C, k, k], conv{i}.bias [F],
///   dense{0..2}.weight [out, in], dense{j}.bias [out],
///   policy.weight [A, last], policy.bias [A], value.weight [1, last], value.bias [1]
struct NetworkWeights {
  ArchConfig arch;
  std::vector<Tensor> params;

  static constexpr std::size_t kConvBase = 0;
  static constexpr std::size_t kDenseBase = 2 * kConvStages;
  static constexpr std::size_t kPolicy = kDenseBase + 2 * kDenseLayers;
  static constexpr std::size_t kValue = kPolicy + 2;
  static constexpr std::size_t kTensorCount = kValue + 2;

  Tensor& conv_kernel(int i) { return params[kConvBase + 2 * i]; }
  Tensor& conv_bias(int i) { return params[kConvBase + 2 * i + 1]; }
  const Tensor& conv_kernel(int i) const { return params[kConvBase + 2 * i]; }
  const Tensor& conv_bias(int i) const { return params[kConvBase + 2 * i + 1]; }
  /// Dense layers 0..2 are the trunk; 3 is the policy head and 4 the value head.
  Tensor& dense_weight(int j) { return params[kDenseBase + 2 * j]; }
  Tensor& dense_bias(int j) { return params[kDenseBase + 2 * j + 1]; }
  const Tensor& dense_weight(int j) const { return params[kDenseBase + 2 * j]; }
  const Tensor& dense_bias(int j) const { return params[kDenseBase + 2 * j + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params) n += t.size();
    return n;
  }

  static std::vector<std::vector<std::size_t>> shapes(const ArchConfig& a) {
    std::vector<std::vector<std::size_t>> out;
    std::size_t channels = 1;
    for (int i = 0; i < kConvStages; ++i) {
      const auto f = static_cast<std::size_t>(a.filters[i]);
      const auto k = static_cast<std::size_t>(a.kernels[i]);
      out.push_back({f, channels, k, k});
      out.push_back({f});
      channels = f;
    }
    auto in = static_cast<std::size_t>(a.flatten_width());
    for (int w : a.dense) {
      out.push_back({static_cast<std::size_t>(w), in});
      out.push_back({static_cast<std::size_t>(w)});
      in = static_cast<std::size_t>(w);
    }
    out.push_back({static_cast<std::size_t>(a.actions), in});
    out.push_back({static_cast<std::size_t>(a.actions)});
    out.push_back({1, in});
    out.push_back({1});
    return out;
  }

  static std::vector<std::string> names() {
    std::vector<std::string> out;
    for (int i = 0; i < kConvStages; ++i) {
      out.push_back("conv" + std::to_string(i) + ".kernel");
      out.push_back("conv" + std::to_string(i) + ".bias");
    }
    for (int j = 0; j < kDenseLayers; ++j) {
      out.push_back("dense" + std::to_string(j) + ".weight");
      out.push_back("dense" + std::to_string(j) + ".bias");
    }
    for (const char* n : {"policy.weight", "policy.bias", "value.weight", "value.bias"}) out.push_back(n);
    return out;
  }

  static NetworkWeights zeros(const ArchConfig& a) {
    a.validate();
    NetworkWeights w;
    w.arch = a;
    for (auto& s : shapes(a)) w.params.emplace_back(std::move(s));
    return w;
  }

  NetworkWeights zeros_like() const {
    NetworkWeights w;
    w.arch = arch;
    for (const auto& t : params) w.params.emplace_back(t.shape());
    return w;
  }

  void set_zero() {
    for (auto& t : params) t.fill(0.0);
  }

  bool all_finite() const {
    return std::all_of(params.begin(), params.end(), [](const Tensor& t) { return t.all_finite(); });
  }

  /// Throws unless the tensors have exactly the shapes `arch` implies.
  void check_shapes() const {
    const auto expected = shapes(arch);
    if (params.size() != expected.size())
      throw ShapeMismatchError("expected " + std::to_string(expected.size()) + " tensors, got " +
                               std::to_string(params.size()));
    const auto labels = names();
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (params[i].shape() != expected[i])
        throw ShapeMismatchError(labels[i] + " has shape " + params[i].shape_string() + ", expected " +
                                 Tensor(expected[i]).shape_string());
    }
  }

  friend bool operator==(const NetworkWeights&, const NetworkWeights&) = default;
};

/// He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases. The
/// policy head is further scaled by 0.01 so the initial policy is near uniform.
inline NetworkWeights init_weights(std::uint64_t rng_seed, const ArchConfig& arch) {
  NetworkWeights w = NetworkWeights::zeros(arch);
  Rng rng(derive_seed(rng_seed, Stream::kInit));
  const auto fill = [&](Tensor& t, double gain) {
    std::size_t fan_in = 1;
    for (std::size_t a = 1; a < t.rank(); ++a) fan_in *= t.dim(a);
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
  };
  for (int i = 0; i < kConvStages; ++i) fill(w.conv_kernel(i), 1.0);
  for (int j = 0; j < kDenseLayers; ++j) fill(w.dense_weight(j), 1.0);
  fill(w.dense_weight(kDenseLayers), 0.01);
  fill(w.dense_weight(kDenseLayers + 1), 1.0);
  return w;
}

/// pi(a|s) and V(s) for one observation.
struct PolicyOutput {
  std::vector<double> probs;
  std::vector<double> log_probs;
  double value = 0.0;

  double entropy() const {
    double h = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) h -= probs[i] * log_probs[i];
    return h;
  }
};

/// Numerically stable softmax; fills probs and log_probs from logits.
inline void softmax(std::span<const double> logits, PolicyOutput& out) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  out.probs.resize(logits.size());
  out.log_probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] - peak);
    sum += out.probs[i];
  }
  const double log_sum = std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] /= sum;
    out.log_probs[i] = (logits[i] - peak) - log_sum;
  }
}

/// Forward intermediates needed by `backward`.
struct GradientTape {
  struct ConvStage {
    int channels_in = 0;
    int size_in = 0;  ///< spatial size of the stage input (== conv output size)
    std::vector<double> pre;                 ///< conv output before pooling, F x s x s
    std::vector<std::uint32_t> argmax;       ///< per pooled cell, flat index into `pre`
    std::vector<double> out;                 ///< pooled + ReLU, F x s/2 x s/2
  };

  ArchConfig arch;
  std::vector<double> input;
  std::array<ConvStage, kConvStages> conv;
  std::array<std::vector<double>, kDenseLayers> hidden;  ///< post-ReLU dense activations
  std::vector<double> logits;
  PolicyOutput output;

  std::span<const double> stage_input(int i) const {
    return i == 0 ? std::span<const double>(input) : std::span<const double>(conv[i - 1].out);
  }
  std::span<const double> dense_input(int j) const {
    return j == 0 ? std::span<const double>(conv[kConvStages - 1].out)
                  : std::span<const double>(hidden[j - 1]);
  }
};

namespace detail {

/// Same-padded stride-1 convolution; `out` is overwritten.
inline void conv_forward(std::span<const double> in, int channels, int size, const Tensor& kernel,
                         const Tensor& bias, std::vector<double>& out) {
  const int filters = static_cast<int>(kernel.dim(0));
  const int k = static_cast<int>(kernel.dim(2));
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  out.assign(static_cast<std::size_t>(filters) * plane, 0.0);
  const double* kw = kernel.data();
  for (int f = 0; f < filters; ++f) {
    double* dst_plane = out.data() + f * plane;
    std::fill(dst_plane, dst_plane + plane, bias[f]);
    for (int c = 0; c < channels; ++c) {
      const double* src_plane = in.data() + c * plane;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(size, size - dy);
        for (int kx = 0; kx < k; ++kx) {
          const double w = kw[((static_cast<std::size_t>(f) * channels + c) * k + ky) * k + kx];
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(size, size - dx);
          for (int y = y0; y < y1; ++y) {
            const double* src = src_plane + static_cast<std::size_t>(y + dy) * size;
            double* dst = dst_plane + static_cast<std::size_t>(y) * size;
            for (int x = x0; x < x1; ++x) dst[x] += w * src[x + dx];
          }
        }
      }
    }
  }
}

/// 2x2 stride-2 max-pool followed by ReLU. Ties go to the first window element
/// in row-major order.
inline void pool_relu_forward(const std::vector<double>& pre, int filters, int size,
                              std::vector<std::uint32_t>& argmax, std::vector<double>& out) {
  const int half = size / 2;
  const std::size_t n = static_cast<std::size_t>(filters) * half * half;
  argmax.resize(n);
  out.resize(n);
  std::size_t o = 0;
  for (int f = 0; f < filters; ++f) {
    const std::size_t base = static_cast<std::size_t>(f) * size * size;
    for (int y = 0; y < half; ++y) {
      for (int x = 0; x < half; ++x, ++o) {
        const std::size_t top = base + static_cast<std::size_t>(2 * y) * size + 2 * x;
        std::size_t best = top;
        for (std::size_t cand : {top + 1, top + size, top + size + 1}) {
          if (pre[cand] > pre[best]) best = cand;
        }
        argmax[o] = static_cast<std::uint32_t>(best);
        out[o] = std::max(pre[best], 0.0);
      }
    }
  }
}

inline void dense_forward(std::span<const double> in, const Tensor& weight, const Tensor& bias,
                          std::vector<double>& out, bool relu) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.dim(1);
  out.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = weight.data() + r * cols;
    double acc = bias[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * in[c];
    out[r] = relu ? std::max(acc, 0.0) : acc;
  }
}

/// Accumulates dW += g (x) in, db += g and, when `grad_in` is non-empty, grad_in += W^T g.
inline void dense_backward(std::span<const double> in, std::span<const double> g, const Tensor& weight,
                           Tensor& grad_weight, Tensor& grad_bias, std::span<double> grad_in) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    grad_bias[r] += gr;
    double* gw = grad_weight.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gw[c] += gr * in[c];
    if (!grad_in.empty()) {
      const double* w = weight.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) grad_in[c] += gr * w[c];
    }
  }
}

}  // namespace detail

/// Runs the network on one observation (flat, 1 x S x S) and records the tape.
inline void forward(const NetworkWeights& weights, std::span<const double> obs, GradientTape& tape) {
  const ArchConfig& arch = weights.arch;
  const std::size_t expected = static_cast<std::size_t>(arch.input_size) * arch.input_size;
  if (obs.size() != expected)
    throw ShapeMismatchError("observation has " + std::to_string(obs.size()) + " values, network expects " +
                             std::to_string(expected));
  for (double v : obs)
    if (!std::isfinite(v)) throw NonFiniteError("observation contains a non-finite value");

  tape.arch = arch;
  tape.input.assign(obs.begin(), obs.end());
  int channels = 1;
  int size = arch.input_size;
  for (int i = 0; i < kConvStages; ++i) {
    auto& stage = tape.conv[i];
    stage.channels_in = channels;
    stage.size_in = size;
    detail::conv_forward(tape.stage_input(i), channels, size, weights.conv_kernel(i), weights.conv_bias(i),
                         stage.pre);
    detail::pool_relu_forward(stage.pre, arch.filters[i], size, stage.argmax, stage.out);
    channels = arch.filters[i];
    size /= 2;
  }
  for (int j = 0; j < kDenseLayers; ++j) {
    detail::dense_forward(tape.dense_input(j), weights.dense_weight(j), weights.dense_bias(j), tape.hidden[j],
                          true);
  }
  const auto& last = tape.hidden[kDenseLayers - 1];
  detail::dense_forward(last, weights.dense_weight(kDenseLayers), weights.dense_bias(kDenseLayers), tape.logits,
                        false);
  std::vector<double> value;
  detail::dense_forward(last, weights.dense_weight(kDenseLayers + 1), weights.dense_bias(kDenseLayers + 1),
                        value, false);
  softmax(tape.logits, tape.output);
  tape.output.value = value[0];
}

inline PolicyOutput forward(const NetworkWeights& weights, std::span<const double> obs) {
  GradientTape tape;
  forward(weights, obs, tape);
  return std::move(tape.output);
}

inline PolicyOutput forward(const NetworkWeights& weights, const Tensor& obs, GradientTape& tape) {
  const auto s = static_cast<std::size_t>(weights.arch.input_size);
  const auto& sh = obs.shape();
  const bool ok = (sh == std::vector<std::size_t>{1, s, s}) || (sh == std::vector<std::size_t>{s, s, 1}) ||
                  (sh == std::vector<std::size_t>{s, s});
  if (!ok) throw ShapeMismatchError("observation shape " + obs.shape_string() + " does not match network input");
  forward(weights, obs.values(), tape);
  return tape.output;
}

/// Adds d(loss)/d(theta) into `grads`, given the loss gradient with respect to
/// the policy logits and the value output.
inline void accumulate_gradients(const NetworkWeights& weights, const GradientTape& tape,
                                 std::span<const double> grad_logits, double grad_value,
                                 NetworkWeights& grads) {
  const ArchConfig& arch = weights.arch;
  if (!(tape.arch == arch) || !(grads.arch == arch)) throw ShapeMismatchError("tape, weights and gradients disagree");
  if (grad_logits.size() != static_cast<std::size_t>(arch.actions))
    throw ShapeMismatchError("logit gradient has wrong length");

  const auto& last = tape.hidden[kDenseLayers - 1];
  std::vector<double> g(last.size(), 0.0);
  detail::dense_backward(last, grad_logits, weights.dense_weight(kDenseLayers), grads.dense_weight(kDenseLayers),
                         grads.dense_bias(kDenseLayers), g);
  const double gv[1] = {grad_value};
  detail::dense_backward(last, gv, weights.dense_weight(kDenseLayers + 1), grads.dense_weight(kDenseLayers + 1),
                         grads.dense_bias(kDenseLayers + 1), g);

  for (int j = kDenseLayers - 1; j >= 0; --j) {
    const auto& act = tape.hidden[j];
    for (std::size_t r = 0; r < g.size(); ++r)
      if (act[r] <= 0.0) g[r] = 0.0;
    const auto in = tape.dense_input(j);
    std::vector<double> g_in(in.size(), 0.0);
    detail::dense_backward(in, g, weights.dense_weight(j), grads.dense_weight(j), grads.dense_bias(j), g_in);
    g = std::move(g_in);
  }

  // g now holds d/d(flatten) == d/d(out of the last conv stage).
  for (int i = kConvStages - 1; i >= 0; --i) {
    const auto& stage = tape.conv[i];
    const int k = arch.kernels[i];
    const int pad = k / 2;
    const int size = stage.size_in;
    const int channels = stage.channels_in;
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    const auto in = tape.stage_input(i);
    const bool need_input_grad = i > 0;
    std::vector<double> g_in(need_input_grad ? in.size() : 0, 0.0);
    Tensor& gk = grads.conv_kernel(i);
    Tensor& gb = grads.conv_bias(i);
    const Tensor& kernel = weights.conv_kernel(i);

    // ReLU mask then route each pooled gradient to its argmax in `pre`.
    for (std::size_t o = 0; o < stage.out.size(); ++o) {
      const double go = g[o];
      if (go == 0.0 || stage.out[o] <= 0.0) continue;
      const std::uint32_t idx = stage.argmax[o];
      const int f = static_cast<int>(idx / plane);
      const int y = static_cast<int>((idx % plane) / size);
      const int x = static_cast<int>(idx % size);
      gb[f] += go;
      for (int c = 0; c < channels; ++c) {
        const std::size_t kbase = (static_cast<std::size_t>(f) * channels + c) * k * k;
        const double* src_plane = in.data() + c * plane;
        double* gin_plane = need_input_grad ? g_in.data() + c * plane : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const int yy = y + ky - pad;
          if (yy < 0 || yy >= size) continue;
          const int kx0 = std::max(0, pad - x);
          const int kx1 = std::min(k, size + pad - x);
          const int shift = x - pad;
          const double* src = src_plane + static_cast<std::size_t>(yy) * size;
          double* gkr = gk.data() + kbase + static_cast<std::size_t>(ky) * k;
          for (int kx = kx0; kx < kx1; ++kx) gkr[kx] += go * src[kx + shift];
          if (need_input_grad) {
            const double* kr = kernel.data() + kbase + static_cast<std::size_t>(ky) * k;
            double* gi = gin_plane + static_cast<std::size_t>(yy) * size;
            for (int kx = kx0; kx < kx1; ++kx) gi[kx + shift] += go * kr[kx];
          }
        }
      }
    }
    g = std::move(g_in);
  }
}

/// Fresh gradients for one tape.
inline NetworkWeights backward(const NetworkWeights& weights, const GradientTape& tape,
                               std::span<const double> grad_logits, double grad_value) {
  NetworkWeights grads = weights.zeros_like();
  accumulate_gradients(weights, tape, grad_logits, grad_value, grads);
  return grads;
}

/// Categorical draw from `policy.probs` using one uniform variate.
inline int sample_action(const PolicyOutput& policy, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < policy.probs.size(); ++i) {
    if (policy.probs[i] <= 0.0) continue;
    cumulative += policy.probs[i];
    last_positive = static_cast<int>(i);
    if (u < cumulative) return last_positive;
  }
  return last_positive;
}

/// Mode of the distribution; ties go to the lowest index.
inline int argmax_action(const PolicyOutput& policy) {
  return static_cast<int>(std::max_element(policy.probs.begin(), policy.probs.end()) - policy.probs.begin());
}

inline std::vector<double> observation_from_depth(const DepthImage& normalized) {
  return normalized.values;
}

}  // namespace dppo::nn
