#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dppo/error.hpp"
#include "dppo/rng.hpp"
#include "dppo/text.hpp"

namespace dppo {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

/// Axis-aligned box [lo, hi] in meters.
struct Box {
  Vec3 lo;
  Vec3 hi;

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
           p.z <= hi.z;
  }
  bool contains(const Box& b) const { return contains(b.lo) && contains(b.hi); }
  bool has_positive_extent() const { return hi.x > lo.x && hi.y > lo.y && hi.z > lo.z; }

  /// Euclidean distance from `p` to the box; 0 when `p` is inside or on it.
  double distance(const Vec3& p) const {
    const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
    const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
    const double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Yaw wrapped into [-pi, pi).
inline double normalize_yaw(double yaw) {
  constexpr double kPi = std::numbers::pi;
  double y = std::fmod(yaw + kPi, 2.0 * kPi);
  if (y < 0.0) y += 2.0 * kPi;
  y -= kPi;
  if (y >= kPi) y -= 2.0 * kPi;
  return y;
}

struct AgentPose {
  Vec3 position;
  double yaw = 0.0;

  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

struct WorldMap {
  Box bounds;
  std::vector<Box> obstacles;
  std::vector<AgentPose> spawns;
  double max_range = 20.0;

  /// Throws FormatError on the first violated invariant.
  void validate() const {
    if (!bounds.has_positive_extent()) throw FormatError("map bounds must have positive extent");
    if (!(max_range > 0.0) || !std::isfinite(max_range))
      throw FormatError("map max_range must be positive");
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      if (!obstacles[i].has_positive_extent())
        throw FormatError("obstacle " + std::to_string(i) + " must have positive extent");
      if (!bounds.contains(obstacles[i]))
        throw FormatError("obstacle " + std::to_string(i) + " lies outside bounds");
    }
    for (std::size_t i = 0; i < spawns.size(); ++i) {
      if (!bounds.contains(spawns[i].position))
        throw FormatError("spawn " + std::to_string(i) + " lies outside bounds");
    }
  }
  friend bool operator==(const WorldMap&, const WorldMap&) = default;
};

/// Parses the plain-text map format:
///
///   bounds   = x0 y0 z0 x1 y1 z1
///   obstacle = x0 y0 z0 x1 y1 z1      (repeatable)
///   spawn    = x y z yaw              (repeatable, yaw in radians)
///   max_range = 20.0
///
/// `#` starts a comment. Errors name the source and line.
inline WorldMap parse_map(std::string_view source, const std::string& origin = "<map>") {
  WorldMap map;
  bool have_bounds = false;
  bool have_range = false;
  int line_no = 0;
  std::size_t pos = 0;
  const auto fail = [&](const std::string& msg) {
    throw FormatError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (pos <= source.size()) {
    const std::size_t end = std::min(source.find('\n', pos), source.size());
    const std::string_view raw = source.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string_view line = text::trim(text::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    const std::string key(text::trim(line.substr(0, eq)));
    const auto fields = text::split_ws(text::trim(line.substr(eq + 1)));
    std::vector<double> nums;
    for (auto f : fields) {
      const auto v = text::parse_double(f);
      if (!v) fail("'" + key + "': not a number: '" + std::string(f) + "'");
      nums.push_back(*v);
    }
    const auto expect = [&](std::size_t n) {
      if (nums.size() != n)
        fail("'" + key + "' expects " + std::to_string(n) + " values, got " +
             std::to_string(nums.size()));
    };
    if (key == "bounds") {
      expect(6);
      if (have_bounds) fail("duplicate 'bounds'");
      map.bounds = {{nums[0], nums[1], nums[2]}, {nums[3], nums[4], nums[5]}};
      have_bounds = true;
    } else if (key == "obstacle") {
      expect(6);
      map.obstacles.push_back({{nums[0], nums[1], nums[2]}, {nums[3], nums[4], nums[5]}});
    } else if (key == "spawn") {
      expect(4);
      map.spawns.push_back({{nums[0], nums[1], nums[2]}, normalize_yaw(nums[3])});
    } else if (key == "max_range") {
      expect(1);
      if (have_range) fail("duplicate 'max_range'");
      map.max_range = nums[0];
      have_range = true;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!have_bounds) throw FormatError(origin + ": missing 'bounds'");
  try {
    map.validate();
  } catch (const FormatError& e) {
    throw FormatError(origin + ": " + e.what());
  }
  return map;
}

inline WorldMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open map file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_map(ss.str(), path);
}

/// Pinhole camera; rays pass through pixel centers and span the FOVs symmetrically.
struct CameraModel {
  int width = 128;
  int height = 128;
  double horizontal_fov = std::numbers::pi / 2.0;
  double vertical_fov = std::numbers::pi / 2.0;

  void validate() const {
    if (width < 2 || height < 2) throw DomainError("camera resolution must be at least 2x2");
    const auto ok = [](double f) { return f > 0.0 && f < std::numbers::pi; };
    if (!ok(horizontal_fov) || !ok(vertical_fov))
      throw DomainError("camera field of view must lie in (0, pi)");
  }

  /// Unnormalized camera-frame direction (forward, right, up) for pixel (u, v).
  /// Column u grows to the right, row v grows downward.
  Vec3 camera_ray(int u, int v) const {
    const double tx = std::tan(horizontal_fov / 2.0);
    const double ty = std::tan(vertical_fov / 2.0);
    const double right = (2.0 * (u + 0.5) / width - 1.0) * tx;
    const double up = (1.0 - 2.0 * (v + 0.5) / height) * ty;
    return {1.0, right, up};
  }

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Row-major grid of ranges in meters.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DepthImage() = default;
  DepthImage(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }

  friend bool operator==(const DepthImage&, const DepthImage&) = default;
};

/// 7x7 action grid: columns pick a yaw change, rows a climb, every cell also
/// advances `forward_step` along the new heading. Index 24 is pure forward.
struct ActionGrid {
  static constexpr int kSide = 7;
  static constexpr int kCount = kSide * kSide;
  static constexpr int kCenter = kSide / 2;
  static constexpr int kStraight = kCenter * kSide + kCenter;

  double forward_step = 0.5;
  double yaw_bin = std::numbers::pi / 12.0;  // 15 degrees
  double climb_bin = 0.25;

  friend bool operator==(const ActionGrid&, const ActionGrid&) = default;
};

struct ActionCommand {
  int action_index = ActionGrid::kStraight;
  double yaw_delta = 0.0;
  double climb_delta = 0.0;
  double forward_step = 0.5;
};

inline ActionCommand decode_action(int action_index, const ActionGrid& grid = {}) {
  if (action_index < 0 || action_index >= ActionGrid::kCount)
    throw DomainError("action index " + std::to_string(action_index) + " outside [0, 48]");
  const int row = action_index / ActionGrid::kSide;
  const int col = action_index % ActionGrid::kSide;
  return {action_index, (col - ActionGrid::kCenter) * grid.yaw_bin,
          (ActionGrid::kCenter - row) * grid.climb_bin, grid.forward_step};
}

/// Heading-first kinematics: rotate, translate along the new heading, climb,
/// then clamp altitude to the map's vertical extent.
inline AgentPose apply_action(const AgentPose& pose, const ActionCommand& cmd, const Box& bounds) {
  AgentPose next;
  next.yaw = normalize_yaw(pose.yaw + cmd.yaw_delta);
  next.position = pose.position + Vec3{cmd.forward_step * std::cos(next.yaw),
                                       cmd.forward_step * std::sin(next.yaw), cmd.climb_delta};
  next.position.z = std::clamp(next.position.z, bounds.lo.z, bounds.hi.z);
  return next;
}

/// True iff the sphere touches or crosses any obstacle or leaves the bounds.
inline bool check_collision(const AgentPose& pose, const WorldMap& map, double radius = 0.20) {
  if (!(radius > 0.0)) throw DomainError("collision radius must be positive");
  const Vec3& p = pose.position;
  const Box& b = map.bounds;
  if (p.x - b.lo.x <= radius || b.hi.x - p.x <= radius || p.y - b.lo.y <= radius ||
      b.hi.y - p.y <= radius || p.z - b.lo.z <= radius || b.hi.z - p.z <= radius) {
    return true;
  }
  for (const Box& box : map.obstacles) {
    if (box.distance(p) <= radius) return true;
  }
  return false;
}

namespace detail {

/// Slab test for a ray starting outside (or on) the box; +inf when missed.
inline double ray_box_entry(const Vec3& o, const Vec3& d, const Box& box) {
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = box.lo[a];
    const double hi = box.hi[a];
    if (d[a] == 0.0) {
      if (o[a] < lo || o[a] > hi) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::numeric_limits<double>::infinity();
  }
  return t_near;
}

/// Distance along `d` until a ray starting inside `box` leaves it.
inline double ray_box_exit(const Vec3& o, const Vec3& d, const Box& box) {
  double t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] > 0.0) t = std::min(t, (box.hi[a] - o[a]) / d[a]);
    if (d[a] < 0.0) t = std::min(t, (box.lo[a] - o[a]) / d[a]);
  }
  return std::max(t, 0.0);
}

}  // namespace detail

/// World-frame unit ray through pixel (u, v) for a camera at `yaw`.
inline Vec3 world_ray(const CameraModel& cam, double yaw, int u, int v) {
  const Vec3 c = cam.camera_ray(u, v);
  const double cy = std::cos(yaw);
  const double sy = std::sin(yaw);
  // forward = (cy, sy, 0), right = (sy, -cy, 0), up = (0, 0, 1)
  const Vec3 d{c.x * cy + c.y * sy, c.x * sy - c.y * cy, c.z};
  return (1.0 / d.norm()) * d;
}

inline DepthImage render_depth(const AgentPose& pose, const WorldMap& map, const CameraModel& cam) {
  cam.validate();
  if (!map.bounds.contains(pose.position))
    throw InvalidPoseError("pose outside map bounds");
  DepthImage img(cam.width, cam.height, map.max_range);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 dir = world_ray(cam, pose.yaw, u, v);
      double t = std::min(map.max_range, detail::ray_box_exit(pose.position, dir, map.bounds));
      for (const Box& box : map.obstacles) {
        t = std::min(t, detail::ray_box_entry(pose.position, dir, box));
      }
      img.at(u, v) = t;
    }
  }
  return img;
}

struct SpawnSettings {
  double radius = 0.20;
  int max_attempts = 1000;

  friend bool operator==(const SpawnSettings&, const SpawnSettings&) = default;
};

/// Picks a designated spawn point (uniformly by seed) when the map has any,
/// else samples uniformly inside the bounds. Always collision-free.
inline AgentPose spawn(const WorldMap& map, std::uint64_t rng_seed, const SpawnSettings& s = {}) {
  Rng rng(rng_seed);
  if (!map.spawns.empty()) {
    const std::size_t n = map.spawns.size();
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    for (std::size_t k = 0; k < n; ++k) {
      const AgentPose& candidate = map.spawns[(first + k) % n];
      if (!check_collision(candidate, map, s.radius)) return candidate;
    }
    throw SpawnFailureError("every designated spawn point collides");
  }
  const Box& b = map.bounds;
  for (int attempt = 0; attempt < s.max_attempts; ++attempt) {
    AgentPose p;
    p.position = {rng.uniform(b.lo.x, b.hi.x), rng.uniform(b.lo.y, b.hi.y),
                  rng.uniform(b.lo.z, b.hi.z)};
    p.yaw = normalize_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi));
    if (!check_collision(p, map, s.radius)) return p;
  }
  throw SpawnFailureError("no collision-free spawn after " + std::to_string(s.max_attempts) +
                          " attempts");
}

}  // namespace dppo
