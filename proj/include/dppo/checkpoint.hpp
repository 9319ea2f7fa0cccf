#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dppo/adam.hpp"
#include "dppo/error.hpp"
#include "dppo/nn.hpp"
#include "dppo/world.hpp"

namespace dppo {

/// An episode that was still running when the checkpoint was taken.
struct OpenEpisode {
  AgentPose pose;
  std::uint64_t steps = 0;
  double path_length = 0.0;
  double episode_return = 0.0;

  friend bool operator==(const OpenEpisode&, const OpenEpisode&) = default;
};

struct TrainingProgress {
  std::uint64_t updates = 0;  ///< completed PPO updates (the training step counter)
  std::uint64_t episodes = 0;
  std::vector<double> episode_returns;
  std::optional<OpenEpisode> open_episode;

  friend bool operator==(const TrainingProgress&, const TrainingProgress&) = default;
};

struct Checkpoint {
  nn::NetworkWeights weights;
  nn::AdamState optimizer;
  TrainingProgress progress;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary layout (all integers and floats little-endian):
///
///   "DPPO"  u32 version(=1)  u32 tensor_count
///   per tensor:   u32 rank, u64 dims[rank], f64 values[prod(dims)]
///   u64 adam_step, then f64 first moments and f64 second moments for every
///   tensor in the same order (shapes implied by the weights)
///   u64 updates, u64 episodes, u64 n, f64 episode_returns[n]
///   u8 has_open_episode; if 1: f64 x y z yaw, u64 steps, f64 path_length, f64 return
namespace checkpoint {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr char kMagic[4] = {'D', 'P', 'P', 'O'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.append(s); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: unexpected end of data");
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

/// Recovers the architecture from tensor shapes.
inline nn::ArchConfig infer_arch(const std::vector<Tensor>& params) {
  if (params.size() != nn::NetworkWeights::kTensorCount)
    throw ShapeMismatchError("checkpoint: expected " + std::to_string(nn::NetworkWeights::kTensorCount) +
                             " tensors, found " + std::to_string(params.size()));
  nn::ArchConfig arch;
  for (int i = 0; i < nn::kConvStages; ++i) {
    const auto& k = params[2 * i];
    if (k.rank() != 4) throw ShapeMismatchError("checkpoint: conv kernel must have rank 4");
    arch.filters[i] = static_cast<int>(k.dim(0));
    arch.kernels[i] = static_cast<int>(k.dim(2));
  }
  for (int j = 0; j < nn::kDenseLayers; ++j) {
    const auto& w = params[nn::NetworkWeights::kDenseBase + 2 * j];
    if (w.rank() != 2) throw ShapeMismatchError("checkpoint: dense weight must have rank 2");
    arch.dense[j] = static_cast<int>(w.dim(0));
  }
  const auto& pol = params[nn::NetworkWeights::kPolicy];
  if (pol.rank() != 2) throw ShapeMismatchError("checkpoint: policy weight must have rank 2");
  arch.actions = static_cast<int>(pol.dim(0));
  const auto flatten = params[nn::NetworkWeights::kDenseBase].dim(1);
  const auto per_cell = static_cast<std::size_t>(arch.filters.back());
  const auto cells = flatten / per_cell;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cells))));
  if (side * side * per_cell != flatten) throw ShapeMismatchError("checkpoint: inconsistent flatten width");
  arch.input_size = static_cast<int>(side) << nn::kConvStages;
  arch.validate();
  return arch;
}

inline std::string encode(const Checkpoint& ckpt) {
  Writer w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kVersion);
  const auto& params = ckpt.weights.params;
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  w.u64(ckpt.optimizer.step);
  for (const auto* moments : {&ckpt.optimizer.first_moment, &ckpt.optimizer.second_moment}) {
    if (moments->params.size() != params.size())
      throw ShapeMismatchError("checkpoint: optimizer state does not match weights");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (moments->params[i].shape() != params[i].shape())
        throw ShapeMismatchError("checkpoint: optimizer state does not match weights");
      for (double v : moments->params[i].values()) w.f64(v);
    }
  }
  const auto& p = ckpt.progress;
  w.u64(p.updates);
  w.u64(p.episodes);
  w.u64(p.episode_returns.size());
  for (double r : p.episode_returns) w.f64(r);
  w.u8(p.open_episode ? 1 : 0);
  if (p.open_episode) {
    const auto& e = *p.open_episode;
    w.f64(e.pose.position.x);
    w.f64(e.pose.position.y);
    w.f64(e.pose.position.z);
    w.f64(e.pose.yaw);
    w.u64(e.steps);
    w.f64(e.path_length);
    w.f64(e.episode_return);
  }
  return w.take();
}

inline Checkpoint decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.u32();
  if (count > 1024) throw FormatError("checkpoint: implausible tensor count");
  std::vector<Tensor> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: implausible tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > (std::size_t{1} << 32) || n > r.remaining() / d)
        throw FormatError("checkpoint: implausible tensor shape");
      n *= d;
    }
    if (n > r.remaining() / 8) throw FormatError("checkpoint: unexpected end of data");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    params.emplace_back(std::move(shape), std::move(values));
  }
  Checkpoint ckpt;
  ckpt.weights.arch = infer_arch(params);
  ckpt.weights.params = std::move(params);
  ckpt.weights.check_shapes();
  ckpt.optimizer = nn::AdamState::for_weights(ckpt.weights);
  ckpt.optimizer.step = r.u64();
  for (auto* moments : {&ckpt.optimizer.first_moment, &ckpt.optimizer.second_moment}) {
    for (auto& t : moments->params)
      for (double& v : t.values()) v = r.f64();
  }
  auto& p = ckpt.progress;
  p.updates = r.u64();
  p.episodes = r.u64();
  const auto n_returns = r.u64();
  if (n_returns > r.remaining() / 8) throw FormatError("checkpoint: unexpected end of data");
  p.episode_returns.resize(n_returns);
  for (double& v : p.episode_returns) v = r.f64();
  const auto has_open = r.u8();
  if (has_open > 1) throw FormatError("checkpoint: bad open-episode flag");
  if (has_open) {
    OpenEpisode e;
    e.pose.position.x = r.f64();
    e.pose.position.y = r.f64();
    e.pose.position.z = r.f64();
    e.pose.yaw = r.f64();
    e.steps = r.u64();
    e.path_length = r.f64();
    e.episode_return = r.f64();
    p.open_episode = e;
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

/// Writes through a temporary file and renames, so an interrupted save never
/// clobbers the previous checkpoint.
inline void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("checkpoint: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode(ss.str());
}

}  // namespace checkpoint
}  // namespace dppo
