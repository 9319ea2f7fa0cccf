#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dppo/app.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Depth-image PPO navigation: train, evaluate, analyze depth frames"};
  app.require_subcommand(1);

  std::string train_config;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train a policy from a run configuration");
  train->add_option("config", train_config, "Run configuration file")->required();
  train->add_option("--resume", resume, "Continue from this checkpoint");

  std::string eval_checkpoint;
  std::string eval_config;
  dppo::app::EvalOptions eval_opts;
  int episodes = 0;
  std::string mode;
  std::string baseline;
  std::string trajectory;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and report Mean Safe Flight");
  eval->add_option("checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("config", eval_config, "Run configuration file")->required();
  auto* episodes_opt = eval->add_option("--episodes", episodes, "Number of evaluation episodes");
  auto* mode_opt = eval->add_option("--mode", mode, "Action selection")->check(CLI::IsMember({"argmax", "sample"}));
  auto* baseline_opt =
      eval->add_option("--baseline", baseline, "Also fly a baseline policy")->check(CLI::IsMember({"random", "straight"}));
  auto* traj_opt = eval->add_option("--trajectory", trajectory, "Write per-step trajectory CSV here");

  std::string image;
  double tau = 0.7;
  double max_range = 20.0;
  std::string mask_out;
  auto* depth = app.add_subcommand("depth-tool", "Free-space centroid and reward for a PGM depth image");
  depth->add_option("image", image, "Binary PGM (P5) depth image")->required();
  depth->add_option("--tau", tau, "Far threshold relative to the frame maximum");
  depth->add_option("--max-range", max_range, "Range (m) that the PGM maxval maps to");
  depth->add_option("--mask-out", mask_out, "Write the free-space mask as an 8-bit PGM");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return dppo::app::kUsage;
  }

  if (train->parsed()) return dppo::app::cmd_train(train_config, resume, std::cout, std::cerr);
  if (eval->parsed()) {
    if (*episodes_opt) eval_opts.episodes = episodes;
    if (*mode_opt) eval_opts.mode = mode;
    if (*baseline_opt) eval_opts.baseline = baseline;
    if (*traj_opt) eval_opts.trajectory_path = trajectory;
    return dppo::app::cmd_eval(eval_checkpoint, eval_config, eval_opts, std::cout, std::cerr);
  }
  return dppo::app::cmd_depth_tool(image, tau, max_range, mask_out, std::cout, std::cerr);
}
