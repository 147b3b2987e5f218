#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>

#include "flowattack/experiment.hpp"
#include "flowattack/flow_io.hpp"
#include "support.hpp"

using namespace flowattack;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "flowattack_exp_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// relative path -> file bytes, for whole-tree comparisons
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    files[fs::relative(entry.path(), root).string()] = slurp(entry.path());
  }
  return files;
}

// two scenes and a light model keep these tests quick
ExperimentConfig small_config() {
  ExperimentConfig c = default_config();
  c.scenes = SyntheticSource{2, 5, 64, 64};
  c.model.jacobi_iters_per_level = 10;
  c.magnitudes = {2e-3, 4e-3};
  c.defenses = {DefenseMethod::Warping};
  c.downstream = {DownstreamMetric::TargetEpe};
  return c;
}

}  // namespace

TEST_CASE("config: save/load round trip preserves the canonical form") {
  const fs::path dir = fresh_dir("config");
  const ExperimentConfig config = default_config();
  save_config((dir / "config.json").string(), config);
  const ExperimentConfig loaded = load_config((dir / "config.json").string());
  CHECK(canonical_config_string(loaded) == canonical_config_string(config));
  CHECK(config_hash(loaded) == config_hash(config));

  ExperimentConfig tweaked = config;
  tweaked.attacks[0].config.budget = 5e-3;
  CHECK(config_hash(tweaked) != config_hash(config));
}

TEST_CASE("config: rejects malformed input") {
  const fs::path dir = fresh_dir("badconfig");
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS((void)load_config((dir / "broken.json").string()), std::runtime_error);

  std::ofstream(dir / "noattack.json") << R"({"attacks": []})";
  CHECK_THROWS_AS((void)load_config((dir / "noattack.json").string()),
                  std::invalid_argument);

  std::ofstream(dir / "badcat.json")
      << R"({"attacks": [{"target_category": "dragon"}]})";
  CHECK_THROWS_AS((void)load_config((dir / "badcat.json").string()),
                  std::invalid_argument);
}

TEST_CASE("load_scenes: synthetic determinism and ids") {
  ExperimentConfig config = small_config();
  const auto a = load_scenes(config);
  const auto b = load_scenes(config);
  REQUIRE(a.size() == 2);
  CHECK(a[0].id == "000");
  CHECK(a[1].id == "001");
  for (size_t i = 0; i < a.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      CHECK(a[i].i1.channels[c].values == b[i].i1.channels[c].values);
    }
  }
}

TEST_CASE("cmd_attack: outputs exist and a rerun is byte-identical") {
  ExperimentConfig config = small_config();
  const fs::path out1 = fresh_dir("attack1");
  const fs::path out2 = fresh_dir("attack2");
  RunOptions options;

  options.output_dir = out1.string();
  cmd_attack(config, options);
  options.output_dir = out2.string();
  cmd_attack(config, options);

  for (const char* name : {"perturbed.png", "attacked.flo", "original.flo",
                           "flow_original.png", "flow_attacked.png",
                           "perturbation.png", "trace.csv", "report.csv", "report.json"}) {
    CHECK(fs::exists(out1 / "000" / "nonconsistent" / name));
    CHECK(fs::exists(out1 / "001" / "consistent" / name));
  }
  CHECK(fs::exists(out1 / "manifest.json"));

  const auto t1 = tree_bytes(out1);
  const auto t2 = tree_bytes(out2);
  REQUIRE(t1.size() == t2.size());
  for (const auto& [rel, bytes] : t1) {
    CAPTURE(rel);
    REQUIRE(t2.count(rel) == 1);
    CHECK(bytes == t2.at(rel));
  }
}

TEST_CASE("cmd_attack: workers do not change the bytes") {
  ExperimentConfig config = small_config();
  const fs::path serial = fresh_dir("workers1");
  const fs::path threaded = fresh_dir("workers3");
  RunOptions options;
  options.output_dir = serial.string();
  options.workers = 1;
  cmd_attack(config, options);
  options.output_dir = threaded.string();
  options.workers = 3;
  cmd_attack(config, options);
  CHECK(tree_bytes(serial) == tree_bytes(threaded));
}

TEST_CASE("cmd_attack: scene filter and missing scene ids") {
  ExperimentConfig config = small_config();
  RunOptions options;
  options.output_dir = fresh_dir("filter").string();
  options.scene_filter = "001";
  cmd_attack(config, options);
  CHECK(fs::exists(fs::path(options.output_dir) / "001"));
  CHECK_FALSE(fs::exists(fs::path(options.output_dir) / "000"));

  options.scene_filter = "999";
  CHECK_THROWS_WITH_AS(cmd_attack(config, options), doctest::Contains("999"),
                       std::invalid_argument);
}

TEST_CASE("cmd_sweep_alpha: alpha=0 row equals the attack baseline bit-for-bit") {
  ExperimentConfig config = small_config();
  config.alpha_grid = {0.0, 10.0};
  const fs::path out = fresh_dir("sweep");
  RunOptions options;
  options.output_dir = out.string();
  cmd_sweep_alpha(config, options);

  const std::string csv = slurp(out / "sweep_alpha.csv");
  REQUIRE(csv.find("alpha,on_target_epe") == 0);

  // recompute the suite means the way the attack command reports them
  const fs::path attack_out = fresh_dir("sweep_attack");
  ExperimentConfig attack_config = config;
  attack_config.attacks = {config.attacks[0]};  // alpha = 0 baseline
  RunOptions attack_options;
  attack_options.output_dir = attack_out.string();
  cmd_attack(attack_config, attack_options);

  double on_acc = 0.0, off_acc = 0.0;
  for (const char* scene : {"000", "001"}) {
    const json report = json::parse(
        slurp(attack_out / scene / config.attacks[0].name / "report.json"));
    on_acc += report.at("on_target_epe").get<double>();
    off_acc += report.at("off_target_epe").get<double>();
  }
  const std::string expected_on = [&] {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", on_acc / 2.0);
    return std::string(buf);
  }();
  const std::string first_row = csv.substr(csv.find('\n') + 1);
  const std::string row = first_row.substr(0, first_row.find('\n'));
  CHECK(row.find("0,") == 0);
  CHECK(row.find(expected_on) != std::string::npos);
  (void)off_acc;
}

TEST_CASE("cmd_blackbox: diagonal equals the white-box on-target epe") {
  ExperimentConfig config = small_config();
  config.attacks = {config.attacks[0]};
  config.model_family_count = 2;
  const fs::path out = fresh_dir("blackbox");
  RunOptions options;
  options.output_dir = out.string();
  cmd_blackbox(config, options);

  const std::string matrix = slurp(out / ("blackbox_" + config.attacks[0].name + ".csv"));
  CHECK(matrix.find("source\\target") == 0);

  // white-box rerun of scene 000 under the seed model
  const fs::path attack_out = fresh_dir("blackbox_attack");
  RunOptions attack_options;
  attack_options.output_dir = attack_out.string();
  attack_options.scene_filter = "000";
  cmd_attack(config, attack_options);
  const json report =
      json::parse(slurp(attack_out / "000" / config.attacks[0].name / "report.json"));
  const double whitebox = report.at("on_target_epe").get<double>();

  const std::string long_csv = slurp(out / "blackbox_long.csv");
  char needle[96];
  std::snprintf(needle, sizeof(needle), ",000,0,0,%.17g", whitebox);
  CHECK(long_csv.find(needle) != std::string::npos);
}

TEST_CASE("cmd_detect: composes with cmd_attack through the cache") {
  ExperimentConfig config = small_config();
  RunOptions options;

  const fs::path lone = fresh_dir("detect_alone");
  options.output_dir = lone.string();
  cmd_detect(config, options);
  CHECK(fs::exists(lone / "detect_target_epe.csv"));

  // same numbers when attack artifacts are already cached in the out dir
  const fs::path combo = fresh_dir("detect_combo");
  options.output_dir = combo.string();
  cmd_attack(config, options);
  cmd_detect(config, options);
  CHECK(slurp(combo / "detect_target_epe.csv") == slurp(lone / "detect_target_epe.csv"));
}

TEST_CASE("cmd_detect: rejects an empty magnitude list") {
  ExperimentConfig config = small_config();
  config.magnitudes.clear();
  RunOptions options;
  options.output_dir = fresh_dir("detect_empty").string();
  CHECK_THROWS_AS(cmd_detect(config, options), std::invalid_argument);
}

TEST_CASE("cmd_ttc and cmd_viz: artifacts appear") {
  ExperimentConfig config = small_config();
  config.attacks = {config.attacks[1]};  // one variant is enough
  RunOptions options;
  options.output_dir = fresh_dir("ttc").string();
  options.scene_filter = "000";
  cmd_ttc(config, options);
  const fs::path dir = fs::path(options.output_dir) / "000" / config.attacks[0].name;
  for (const char* name : {"ttc_original.png", "ttc_attacked.png", "ttc_original.flo",
                           "ttc_attacked.flo"}) {
    CHECK(fs::exists(dir / name));
  }
  CHECK(fs::exists(fs::path(options.output_dir) / "ttc.csv"));

  options.output_dir = fresh_dir("viz").string();
  cmd_viz(config, options);
  for (const char* name : {"i1.png", "i2.png", "labels.png", "flow.flo", "flow.png"}) {
    CHECK(fs::exists(fs::path(options.output_dir) / "000" / name));
  }
}

TEST_CASE("gen-scenes output loads back as a directory source") {
  ExperimentConfig config = small_config();
  const fs::path scenes_dir = fresh_dir("dataset");
  RunOptions options;
  options.output_dir = scenes_dir.string();
  cmd_gen_scenes(config, options);
  CHECK(fs::exists(scenes_dir / "000_10.png"));
  CHECK(fs::exists(scenes_dir / "000_11.png"));
  CHECK(fs::exists(scenes_dir / "000_sem.png"));
  CHECK(fs::exists(scenes_dir / "000_gt.flo"));

  ExperimentConfig from_disk = small_config();
  from_disk.scenes = DirectorySource{scenes_dir.string()};
  const auto scenes = load_scenes(from_disk);
  REQUIRE(scenes.size() == 2);
  CHECK(scenes[0].id == "000");
  CHECK(scenes[0].labels.size() == 64 * 64);

  // labels survive the PNG round trip
  const auto direct = load_scenes(config);
  CHECK(scenes[0].labels.ids == direct[0].labels.ids);
}

TEST_CASE("load_scenes: missing label file names the path") {
  ExperimentConfig config = small_config();
  const fs::path dir = fresh_dir("broken_dataset");
  RunOptions options;
  options.output_dir = dir.string();
  cmd_gen_scenes(config, options);
  fs::remove(dir / "001_sem.png");
  ExperimentConfig from_disk = small_config();
  from_disk.scenes = DirectorySource{dir.string()};
  CHECK_THROWS_WITH_AS((void)load_scenes(from_disk), doctest::Contains("001_sem.png"),
                       std::runtime_error);
}
