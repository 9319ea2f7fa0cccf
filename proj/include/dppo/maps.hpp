#pragma once

#include <string_view>

namespace dppo::maps {

/// 20 m x 4 m x 3 m corridor with six box obstacles, flown along +x.
/// Used when a run configuration leaves `map_path` empty; identical to
/// maps/corridor.map in the repository.
inline constexpr std::string_view kCorridor = R"(# 20 m corridor, six obstacles
bounds = 0 0 0 20 4 3
max_range = 20
obstacle = 4 0 0 5 1.6 3
obstacle = 7 2.4 0 8 4 3
obstacle = 10 1.4 0 10.6 2.6 3
obstacle = 13 0 0 14 1.6 3
obstacle = 16 2.4 0 17 4 3
obstacle = 18.5 1 0 19 3 1.4
spawn = 1 1 1.5 0
spawn = 1 2 1.5 0
spawn = 1 3 1.5 0
spawn = 1.5 2 1 0.3
spawn = 1.5 2 2 -0.3
)";

}  // namespace dppo::maps
