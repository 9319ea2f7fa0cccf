#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "dppo/error.hpp"
#include "dppo/world.hpp"

namespace dppo {

/// Row-major free-space bits; true marks a far pixel.
struct FreeSpaceMask {
  int width = 0;
  int height = 0;
  std::vector<bool> bits;

  FreeSpaceMask() = default;
  FreeSpaceMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h) {}

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u]; }
  void set(int u, int v, bool b) { bits[static_cast<std::size_t>(v) * width + u] = b; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

  friend bool operator==(const FreeSpaceMask&, const FreeSpaceMask&) = default;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

struct FreeSpaceResult {
  std::optional<PixelPoint> centroid;
  double d = 0.0;  ///< pixels from the image center to the centroid
  double mask_fraction = 0.0;
};

struct RewardConfig {
  double tau = 0.7;          ///< far threshold, relative to the frame maximum
  double d_min = 1.0;        ///< clamp on d; 100 / d_min is the reward ceiling
  double collision = -10.0;
  double scale = 100.0;

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

/// Distance from the image center to a corner pixel; the empty-mask fallback.
inline double max_center_distance(int width, int height) {
  return std::hypot(width - 1.0, height - 1.0) / 2.0;
}

/// bit = depth >= tau * max(depth). An all-zero image yields an empty mask.
inline FreeSpaceMask threshold_free_space(const DepthImage& depth, double tau = 0.7) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
  FreeSpaceMask mask(depth.width, depth.height);
  double peak = 0.0;
  for (double v : depth.values) peak = std::max(peak, v);
  if (peak <= 0.0) return mask;
  const double cut = tau * peak;
  for (std::size_t i = 0; i < depth.values.size(); ++i) mask.bits[i] = depth.values[i] >= cut;
  return mask;
}

inline FreeSpaceResult free_space_centroid(const FreeSpaceMask& mask) {
  FreeSpaceResult out;
  const std::size_t total = static_cast<std::size_t>(mask.width) * mask.height;
  double su = 0.0;
  double sv = 0.0;
  std::size_t n = 0;
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (mask.at(u, v)) {
        su += u;
        sv += v;
        ++n;
      }
    }
  }
  if (n == 0) {
    out.d = max_center_distance(mask.width, mask.height);
    return out;
  }
  const PixelPoint c{su / static_cast<double>(n), sv / static_cast<double>(n)};
  out.centroid = c;
  out.d = std::hypot(c.u - (mask.width - 1) / 2.0, c.v - (mask.height - 1) / 2.0);
  out.mask_fraction = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

/// -10 on collision, else 100 / max(d, d_min).
inline double reward(bool collision, double d, const RewardConfig& cfg = {}) {
  if (collision) return cfg.collision;
  if (!(d >= 0.0)) throw DomainError("distance d must be non-negative");
  return cfg.scale / std::max(d, cfg.d_min);
}

/// Divides every range by `max_range`, giving values in [0, 1].
inline DepthImage normalize_depth(const DepthImage& depth, double max_range) {
  if (!(max_range > 0.0)) throw DomainError("max_range must be positive");
  DepthImage out = depth;
  for (double& v : out.values) v /= max_range;
  return out;
}

/// Mask, centroid and reward for one frame in a single call.
struct FrameReward {
  FreeSpaceResult free_space;
  double value = 0.0;
};

inline FrameReward frame_reward(const DepthImage& depth, bool collision,
                                const RewardConfig& cfg = {}) {
  FrameReward out;
  out.free_space = free_space_centroid(threshold_free_space(depth, cfg.tau));
  out.value = reward(collision, out.free_space.d, cfg);
  return out;
}

}  // namespace dppo
