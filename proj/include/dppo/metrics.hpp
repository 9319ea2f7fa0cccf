#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "dppo/error.hpp"

namespace dppo {

/// One spawn-to-termination flight.
struct EpisodeRecord {
  std::uint64_t episode_index = 0;
  double path_length = 0.0;  ///< meters
  int steps = 0;
  bool collided = false;
  double total_return = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct MetricSeries {
  int window = 1;
  std::vector<double> values;
};

/// Mean of the last min(k + 1, window) returns, ending at index k.
inline double trailing_mean(std::span<const double> returns, std::size_t k, int window) {
  const std::size_t n = std::min<std::size_t>(k + 1, static_cast<std::size_t>(window));
  double sum = 0.0;
  for (std::size_t i = k + 1 - n; i <= k; ++i) sum += returns[i];
  return sum / static_cast<double>(n);
}

/// Growing-then-sliding window mean; each entry is summed over its own window.
inline MetricSeries moving_average(std::span<const double> returns, int window) {
  if (window < 1) throw DomainError("moving-average window must be at least 1");
  MetricSeries out{window, {}};
  out.values.reserve(returns.size());
  for (std::size_t k = 0; k < returns.size(); ++k) out.values.push_back(trailing_mean(returns, k, window));
  return out;
}

struct SafeFlight {
  double mean = 0.0;
  double max = 0.0;
};

/// Mean and max path length; collision-free episodes count with their full
/// (horizon-censored) length.
inline SafeFlight mean_safe_flight(std::span<const EpisodeRecord> records) {
  if (records.empty()) throw DomainError("mean_safe_flight needs at least one record");
  SafeFlight out;
  double sum = 0.0;
  for (const auto& r : records) {
    sum += r.path_length;
    out.max = std::max(out.max, r.path_length);
  }
  out.mean = sum / static_cast<double>(records.size());
  return out;
}

}  // namespace dppo
