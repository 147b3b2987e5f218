#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/defense.hpp"
#include "flowattack/flow_model.hpp"
#include "flowattack/scene_gen.hpp"

namespace flowattack {

struct SyntheticSource {
  int count = 20;
  uint64_t base_seed = 7;
  int width = 64;
  int height = 64;
};

// KITTI-like directory: NNN_10.png / NNN_11.png image pairs with NNN_sem.png
// labels; optional NNN_gt.flo is ignored by the attack commands.
struct DirectorySource {
  std::string path;
};

struct AttackVariant {
  std::string name;  // used in output paths and the alpha column
  AttackConfig config;
};

struct ExperimentConfig {
  std::variant<SyntheticSource, DirectorySource> scenes = SyntheticSource{};
  FlowModelParams model;
  int model_family_count = 4;
  std::vector<AttackVariant> attacks;
  std::vector<double> alpha_grid;
  std::vector<double> magnitudes;
  std::vector<DefenseMethod> defenses;
  std::vector<DownstreamMetric> downstream;
  int ttc_window = 5;
  std::string output_dir = "out";
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& config);

// Canonical serialization (sorted keys) and its FNV-1a hash; every command
// stamps the hash into its output manifest.
std::string canonical_config_string(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct SceneData {
  std::string id;
  Image i1, i2;
  LabelMap labels;
};

std::vector<SceneData> load_scenes(const ExperimentConfig& config);

struct RunOptions {
  std::string output_dir;  // overrides the config's when non-empty
  int workers = 1;
  std::optional<uint64_t> seed_override;
  std::optional<std::string> scene_filter;  // restrict to one scene id
};

void cmd_gen_scenes(const ExperimentConfig& config, const RunOptions& options);
void cmd_attack(const ExperimentConfig& config, const RunOptions& options);
void cmd_sweep_alpha(const ExperimentConfig& config, const RunOptions& options);
void cmd_blackbox(const ExperimentConfig& config, const RunOptions& options);
void cmd_detect(const ExperimentConfig& config, const RunOptions& options);
void cmd_ttc(const ExperimentConfig& config, const RunOptions& options);
void cmd_viz(const ExperimentConfig& config, const RunOptions& options);

}  // namespace flowattack
