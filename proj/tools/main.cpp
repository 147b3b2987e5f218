#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <functional>
#include <string>

#include "flowattack/experiment.hpp"

namespace {

using flowattack::ExperimentConfig;
using flowattack::RunOptions;

struct CommonArgs {
  std::string config_path;
  std::string out;
  int workers = 1;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string scene;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config JSON (built-in defaults otherwise)");
  cmd->add_option("--out", args.out, "output directory (overrides the config)");
  cmd->add_option("--workers", args.workers, "scene-level worker threads")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", args.seed, "override every attack rng seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--scene", args.scene, "restrict to one scene id");
}

RunOptions to_options(const CommonArgs& args) {
  RunOptions options;
  options.output_dir = args.out;
  options.workers = args.workers;
  if (args.seed_set) options.seed_override = args.seed;
  if (!args.scene.empty()) options.scene_filter = args.scene;
  return options;
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  if (args.config_path.empty()) return flowattack::default_config();
  return flowattack::load_config(args.config_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"targeted consistency-regularized adversarial attacks on optical flow"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    void (*run)(const ExperimentConfig&, const RunOptions&);
  };
  const Sub subs[] = {
      {"attack", "run the configured attacks and write per-scene reports", flowattack::cmd_attack},
      {"sweep-alpha", "sweep the consistency coefficient over the scene suite",
       flowattack::cmd_sweep_alpha},
      {"blackbox", "transfer matrix across the model parameter family", flowattack::cmd_blackbox},
      {"detect", "detection-score vs downstream-impact curves", flowattack::cmd_detect},
      {"ttc", "time-to-collision maps and corruption metrics", flowattack::cmd_ttc},
      {"viz", "render scenes, estimated flows and color encodings", flowattack::cmd_viz},
      {"gen-scenes", "write the synthetic scene suite to disk", flowattack::cmd_gen_scenes},
  };

  CommonArgs args[std::size(subs)];
  for (size_t i = 0; i < std::size(subs); ++i) {
    CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmd, args[i]);
  }

  CLI11_PARSE(app, argc, argv);

  for (size_t i = 0; i < std::size(subs); ++i) {
    if (!app.get_subcommand(subs[i].name)->parsed()) continue;
    try {
      subs[i].run(resolve_config(args[i]), to_options(args[i]));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
    return 0;
  }
  return 1;
}
