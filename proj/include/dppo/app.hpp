#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dppo/checkpoint.hpp"
#include "dppo/config.hpp"
#include "dppo/error.hpp"
#include "dppo/eval.hpp"
#include "dppo/metrics.hpp"
#include "dppo/nav_env.hpp"
#include "dppo/pgm.hpp"
#include "dppo/ppo.hpp"
#include "dppo/reward.hpp"
#include "dppo/text.hpp"

namespace dppo::app {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsage = 2 };

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader = "episode,return,length_steps,path_length_m,collision,moving_avg_return";
inline constexpr const char* kStatsHeader = "update,policy_loss,value_loss,entropy,clip_frac,approx_kl";
inline constexpr const char* kReportHeader = "episode,seed,path_length_m,steps,collided,return";
inline constexpr const char* kTrajectoryHeader = "episode,t,x,y,z,yaw,action,reward";

inline std::string metrics_row(const EpisodeRecord& r, double moving_avg) {
  using text::format_double;
  return std::to_string(r.episode_index) + "," + format_double(r.total_return) + "," + std::to_string(r.steps) + "," +
         format_double(r.path_length) + "," + (r.collided ? "1" : "0") + "," + format_double(moving_avg);
}

inline std::string stats_row(std::uint64_t update, const ppo::UpdateStats& s) {
  using text::format_double;
  return std::to_string(update) + "," + format_double(s.policy_loss) + "," + format_double(s.value_loss) + "," +
         format_double(s.entropy) + "," + format_double(s.clip_frac) + "," + format_double(s.approx_kl);
}

inline std::string report_row(const EpisodeRecord& r) {
  using text::format_double;
  return std::to_string(r.episode_index) + "," + std::to_string(r.seed) + "," + format_double(r.path_length) + "," +
         std::to_string(r.steps) + "," + (r.collided ? "1" : "0") + "," + format_double(r.total_return);
}

/// Applies DPPO_OUTPUT_DIR, when set, over the configured output directory.
inline void apply_environment(RunConfig& cfg) {
  if (const char* dir = std::getenv("DPPO_OUTPUT_DIR"); dir && *dir) cfg.output_dir = dir;
}

/// Rewrites `path` keeping its header and the first `rows` data lines.
inline void truncate_csv(const fs::path& path, const char* header, std::size_t rows) {
  std::vector<std::string> kept;
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (kept.size() < rows && std::getline(in, line)) kept.push_back(line);
  }
  std::ofstream out(path, std::ios::trunc);
  out << header << '\n';
  for (const auto& l : kept) out << l << '\n';
}

inline fs::path checkpoint_path(const fs::path& out_dir, std::uint64_t updates) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%06llu.bin", static_cast<unsigned long long>(updates));
  return out_dir / "checkpoints" / name;
}

/// Trains under `cfg`, writing checkpoints/, metrics.csv, stats.csv and
/// resolved_config into cfg.output_dir. With `resume`, continues that
/// checkpoint and trims the logs back to it first.
inline Checkpoint run_training(const RunConfig& cfg, const std::optional<Checkpoint>& resume = std::nullopt) {
  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream snap(out_dir / "resolved_config", std::ios::trunc);
    snap << emit_config(cfg);
  }
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path stats_path = out_dir / "stats.csv";
  if (resume) {
    truncate_csv(metrics_path, kMetricsHeader, resume->progress.episode_returns.size());
    truncate_csv(stats_path, kStatsHeader, resume->progress.updates);
  } else {
    truncate_csv(metrics_path, kMetricsHeader, 0);
    truncate_csv(stats_path, kStatsHeader, 0);
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream stats(stats_path, std::ios::app);

  NavigationEnv env(load_world(cfg), cfg.env);
  ppo::TrainingHooks hooks;
  hooks.on_episode = [&](const EpisodeRecord& r, double ma) { metrics << metrics_row(r, ma) << '\n'; };
  hooks.on_update = [&](std::uint64_t u, const ppo::UpdateStats& s) { stats << stats_row(u, s) << '\n'; };
  hooks.on_checkpoint = [&](const Checkpoint& c) {
    metrics.flush();
    stats.flush();
    checkpoint::save(checkpoint_path(out_dir, c.progress.updates), c);
    checkpoint::save(out_dir / "checkpoints" / "latest.bin", c);
  };
  return ppo::train(env, cfg.net, cfg.ppo, cfg.master_seed, cfg.eval.window, hooks, resume);
}

inline RunConfig load_effective_config(const std::string& config_path) {
  RunConfig cfg = load_config(config_path);
  apply_environment(cfg);
  return cfg;
}

/// `train <config> [--resume <checkpoint>]`
inline int cmd_train(const std::string& config_path, const std::string& resume_path, std::ostream& out,
                     std::ostream& err) {
  RunConfig cfg;
  std::optional<Checkpoint> resume;
  try {
    cfg = load_effective_config(config_path);
    if (!resume_path.empty()) {
      resume = checkpoint::load(resume_path);
      if (!(resume->weights.arch == cfg.net)) throw ShapeMismatchError("checkpoint architecture differs from config");
    }
  } catch (const Error& e) {
    err << "error: " << config_path << ": " << e.what() << '\n';
    return kUsage;
  }
  try {
    const Checkpoint final_state = run_training(cfg, resume);
    out << "trained " << final_state.progress.updates << " updates, " << final_state.progress.episode_returns.size()
        << " episodes; output in " << cfg.output_dir << '\n';
  } catch (const std::exception& e) {
    err << "error: training failed: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}

struct EvalOptions {
  std::optional<int> episodes;
  std::optional<std::string> mode;
  std::optional<std::string> baseline;
  std::optional<std::string> trajectory_path;
};

/// `eval <checkpoint> <config> [--episodes N] [--mode argmax|sample] [--baseline random|straight]`
inline int cmd_eval(const std::string& checkpoint_path, const std::string& config_path, const EvalOptions& opts,
                    std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  Checkpoint ckpt;
  WorldMap map;
  std::optional<eval::Baseline> baseline;
  try {
    cfg = load_effective_config(config_path);
    if (opts.episodes) {
      if (*opts.episodes < 1) throw ConfigError("--episodes", "must be at least 1");
      cfg.eval.n_episodes = *opts.episodes;
    }
    if (opts.mode) cfg.eval.mode = eval::parse_mode(*opts.mode);
    if (opts.baseline) baseline = eval::parse_baseline(*opts.baseline);
    ckpt = checkpoint::load(checkpoint_path);
    if (!(ckpt.weights.arch == cfg.net))
      throw ShapeMismatchError("checkpoint architecture does not match the config's network");
    map = load_world(cfg);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  try {
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    std::ofstream traj;
    eval::TrajectorySink sink;
    if (opts.trajectory_path) {
      traj.open(*opts.trajectory_path, std::ios::trunc);
      if (!traj) throw FormatError("cannot write '" + *opts.trajectory_path + "'");
      traj << kTrajectoryHeader << '\n';
      sink = [&traj](const eval::TrajectoryRow& r) {
        using text::format_double;
        traj << r.episode << ',' << r.t << ',' << format_double(r.pose.position.x) << ','
             << format_double(r.pose.position.y) << ',' << format_double(r.pose.position.z) << ','
             << format_double(r.pose.yaw) << ',' << r.action << ',' << format_double(r.reward) << '\n';
      };
    }
    const auto records = eval::run_eval(map, cfg.env, ckpt.weights, cfg.eval.n_episodes, cfg.eval_seed(),
                                        cfg.eval.mode, sink);
    {
      std::ofstream report(out_dir / "eval_report.csv", std::ios::trunc);
      report << kReportHeader << '\n';
      for (const auto& r : records) report << report_row(r) << '\n';
    }
    const SafeFlight msf = mean_safe_flight(records);
    out << "episodes: " << records.size() << " (" << eval::to_string(cfg.eval.mode) << ")\n";
    out << "msf_mean_m: " << text::format_double(msf.mean) << '\n';
    out << "msf_max_m: " << text::format_double(msf.max) << '\n';
    if (baseline) {
      const auto cmp = eval::compare_policies(map, cfg.env, ckpt.weights, *baseline, cfg.eval.n_episodes,
                                              cfg.eval_seed(), cfg.eval.mode);
      std::ostringstream table;
      table << "policy,msf_mean_m,msf_max_m\n"
            << "trained," << text::format_double(cmp.policy.mean) << ',' << text::format_double(cmp.policy.max)
            << '\n'
            << eval::to_string(*baseline) << ',' << text::format_double(cmp.baseline.mean) << ','
            << text::format_double(cmp.baseline.max) << '\n'
            << "ratio," << text::format_double(cmp.ratio) << ",\n";
      out << table.str();
      std::ofstream(out_dir / "comparison.csv", std::ios::trunc) << table.str();
    }
  } catch (const std::exception& e) {
    err << "error: evaluation failed: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}

struct DepthToolResult {
  FreeSpaceMask mask;
  FreeSpaceResult free_space;
  double reward = 0.0;
};

inline DepthToolResult analyze_depth(const DepthImage& depth, double tau) {
  DepthToolResult r;
  r.mask = threshold_free_space(depth, tau);
  r.free_space = free_space_centroid(r.mask);
  r.reward = reward(false, r.free_space.d);
  return r;
}

/// `file,centroid_u,centroid_v,d,reward`; the centroid fields are empty when
/// the mask is empty.
inline std::string depth_tool_line(const std::string& file, const DepthToolResult& r) {
  using text::format_double;
  std::string line = file + ",";
  if (r.free_space.centroid) {
    line += format_double(r.free_space.centroid->u) + "," + format_double(r.free_space.centroid->v);
  } else {
    line += ",";
  }
  return line + "," + format_double(r.free_space.d) + "," + format_double(r.reward);
}

/// `depth-tool <image.pgm> [--tau T] [--max-range R] [--mask-out PATH]`
inline int cmd_depth_tool(const std::string& image_path, double tau, double max_range, const std::string& mask_out,
                          std::ostream& out, std::ostream& err) {
  try {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("--tau must lie in (0, 1)");
    if (!(max_range > 0.0)) throw DomainError("--max-range must be positive");
    const auto image = pgm::decode(pgm::read_file(image_path));
    const auto result = analyze_depth(pgm::to_depth(image, max_range), tau);
    if (!mask_out.empty()) pgm::write_file(mask_out, pgm::encode(pgm::from_mask(result.mask)));
    out << depth_tool_line(image_path, result) << '\n';
  } catch (const Error& e) {
    err << "error: " << image_path << ": " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}

}  // namespace dppo::app
