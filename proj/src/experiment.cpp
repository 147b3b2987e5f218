#include "flowattack/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "flowattack/flow_io.hpp"
#include "flowattack/metrics.hpp"
#include "flowattack/ttc.hpp"

namespace flowattack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex16(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- config <-> json ----

json model_to_json(const FlowModelParams& m) {
  return json{{"smoothness_weight", m.smoothness_weight},
              {"pyramid_levels", m.pyramid_levels},
              {"jacobi_iters_per_level", m.jacobi_iters_per_level},
              {"warps_per_level", m.warps_per_level},
              {"pyramid_scale", m.pyramid_scale}};
}

FlowModelParams model_from_json(const json& j) {
  FlowModelParams m;
  m.smoothness_weight = j.value("smoothness_weight", m.smoothness_weight);
  m.pyramid_levels = j.value("pyramid_levels", m.pyramid_levels);
  m.jacobi_iters_per_level = j.value("jacobi_iters_per_level", m.jacobi_iters_per_level);
  m.warps_per_level = j.value("warps_per_level", m.warps_per_level);
  m.pyramid_scale = j.value("pyramid_scale", m.pyramid_scale);
  return m;
}

AttackSetting setting_from_string(const std::string& s) {
  if (s == "local") return AttackSetting::Local;
  if (s == "global") return AttackSetting::Global;
  if (s == "cross_category") return AttackSetting::CrossCategory;
  throw std::invalid_argument("config: unknown attack setting '" + s + "'");
}

Category category_from_string(const std::string& s) {
  const auto c = category_from_name(s);
  if (!c) throw std::invalid_argument("config: unknown category '" + s + "'");
  return *c;
}

json attack_to_json(const AttackVariant& v) {
  return json{{"name", v.name},
              {"alpha", v.config.alpha},
              {"budget", v.config.budget},
              {"step_estimate", v.config.step_estimate},
              {"setting", attack_setting_name(v.config.setting)},
              {"target_category", category_name(v.config.target_category)},
              {"perturb_category", category_name(v.config.perturb_category)},
              {"noise_sigma", v.config.noise_sigma},
              {"rng_seed", v.config.rng_seed},
              {"max_iters", v.config.max_iters},
              {"clamp_to_unit_interval", v.config.clamp_to_unit_interval}};
}

AttackVariant attack_from_json(const json& j) {
  AttackVariant v;
  v.name = j.value("name", std::string());
  v.config.alpha = j.value("alpha", 0.0);
  v.config.budget = j.value("budget", 4e-3);
  v.config.step_estimate = j.value("step_estimate", 2);
  v.config.setting = setting_from_string(j.value("setting", std::string("global")));
  v.config.target_category =
      category_from_string(j.value("target_category", std::string("vehicle")));
  v.config.perturb_category =
      category_from_string(j.value("perturb_category", std::string("nature")));
  v.config.noise_sigma = j.value("noise_sigma", 1e-3);
  v.config.rng_seed = j.value("rng_seed", uint64_t{0});
  v.config.max_iters = j.value("max_iters", 10 * v.config.step_estimate);
  v.config.clamp_to_unit_interval = j.value("clamp_to_unit_interval", true);
  if (v.name.empty()) {
    v.name = std::string(attack_setting_name(v.config.setting)) + "_alpha" +
             std::to_string(v.config.alpha);
  }
  return v;
}

DefenseMethod defense_from_string(const std::string& s) {
  if (s == "warping") return DefenseMethod::Warping;
  if (s == "gaussian") return DefenseMethod::Gaussian;
  if (s == "median") return DefenseMethod::Median;
  throw std::invalid_argument("config: unknown defense '" + s + "'");
}

DownstreamMetric downstream_from_string(const std::string& s) {
  if (s == "ttc_error") return DownstreamMetric::TtcError;
  if (s == "target_epe") return DownstreamMetric::TargetEpe;
  throw std::invalid_argument("config: unknown downstream metric '" + s + "'");
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  if (const auto* syn = std::get_if<SyntheticSource>(&c.scenes)) {
    j["scenes"] = {{"synthetic",
                    {{"count", syn->count},
                     {"base_seed", syn->base_seed},
                     {"width", syn->width},
                     {"height", syn->height}}}};
  } else {
    j["scenes"] = {{"directory", std::get<DirectorySource>(c.scenes).path}};
  }
  j["model"] = model_to_json(c.model);
  j["model_family_count"] = c.model_family_count;
  j["attacks"] = json::array();
  for (const AttackVariant& v : c.attacks) j["attacks"].push_back(attack_to_json(v));
  j["alpha_grid"] = c.alpha_grid;
  j["magnitudes"] = c.magnitudes;
  j["defenses"] = json::array();
  for (DefenseMethod m : c.defenses) j["defenses"].push_back(defense_method_name(m));
  j["downstream"] = json::array();
  for (DownstreamMetric m : c.downstream) j["downstream"].push_back(downstream_metric_name(m));
  j["ttc_window"] = c.ttc_window;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("scenes")) {
    const json& s = j.at("scenes");
    if (s.contains("synthetic")) {
      SyntheticSource syn;
      const json& js = s.at("synthetic");
      syn.count = js.value("count", syn.count);
      syn.base_seed = js.value("base_seed", syn.base_seed);
      syn.width = js.value("width", syn.width);
      syn.height = js.value("height", syn.height);
      c.scenes = syn;
    } else if (s.contains("directory")) {
      c.scenes = DirectorySource{s.at("directory").get<std::string>()};
    } else {
      throw std::invalid_argument("config: scenes must be 'synthetic' or 'directory'");
    }
  }
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  c.model_family_count = j.value("model_family_count", c.model_family_count);
  if (j.contains("attacks")) {
    for (const json& a : j.at("attacks")) c.attacks.push_back(attack_from_json(a));
  }
  if (c.attacks.empty()) {
    throw std::invalid_argument("config: at least one attack entry is required");
  }
  c.alpha_grid = j.value("alpha_grid", c.alpha_grid);
  c.magnitudes = j.value("magnitudes", c.magnitudes);
  if (j.contains("defenses")) {
    for (const json& d : j.at("defenses")) {
      c.defenses.push_back(defense_from_string(d.get<std::string>()));
    }
  }
  if (j.contains("downstream")) {
    for (const json& d : j.at("downstream")) {
      c.downstream.push_back(downstream_from_string(d.get<std::string>()));
    }
  }
  c.ttc_window = j.value("ttc_window", c.ttc_window);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

// ---- applying run options ----

struct ResolvedRun {
  ExperimentConfig config;
  fs::path out;
  std::vector<SceneData> scenes;
  std::string hash;
};

// scene-specific attack seed; keeps paired variants on a shared noise draw
uint64_t scene_seed(const AttackConfig& base, const std::string& scene_id) {
  return base.rng_seed + fnv1a(scene_id);
}

ResolvedRun resolve(const ExperimentConfig& config, const RunOptions& options,
                    const char* command) {
  ResolvedRun run;
  run.config = config;
  if (options.seed_override) {
    for (AttackVariant& v : run.config.attacks) v.config.rng_seed = *options.seed_override;
  }
  run.out = options.output_dir.empty() ? fs::path(config.output_dir)
                                       : fs::path(options.output_dir);
  fs::create_directories(run.out);
  run.scenes = load_scenes(run.config);
  if (options.scene_filter) {
    std::vector<SceneData> kept;
    for (SceneData& s : run.scenes) {
      if (s.id == *options.scene_filter) kept.push_back(std::move(s));
    }
    if (kept.empty()) {
      throw std::invalid_argument(std::string("no scene with id '") +
                                  *options.scene_filter + "'");
    }
    run.scenes = std::move(kept);
  }
  run.hash = config_hash(run.config);

  json manifest;
  manifest["command"] = command;
  manifest["config_hash"] = run.hash;
  manifest["seed_override"] =
      options.seed_override ? json(*options.seed_override) : json(nullptr);
  json ids = json::array();
  for (const SceneData& s : run.scenes) ids.push_back(s.id);
  manifest["scenes"] = ids;
  write_text(run.out / "manifest.json", manifest.dump(2) + "\n");
  return run;
}

// ---- attack artifact cache ----

constexpr char kCacheMagic[8] = {'F', 'A', 'C', 'A', 'C', 'H', 'E', '1'};

std::string attack_cache_key(const SceneData& scene, const AttackConfig& config,
                             const FlowModelParams& model) {
  json j;
  j["scene"] = scene.id;
  j["model"] = model_to_json(model);
  AttackVariant v;
  v.config = config;
  j["attack"] = attack_to_json(v);
  j["attack"].erase("name");
  return hex16(fnv1a(j.dump()));
}

void write_field(std::ofstream& out, const Field2D& f) {
  out.write(reinterpret_cast<const char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

void read_field(std::ifstream& in, Field2D& f) {
  in.read(reinterpret_cast<char*>(f.values.data()),
          static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

void save_attack_artifact(const fs::path& path, const AttackResult& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cache: cannot write " + path.string());
  out.write(kCacheMagic, 8);
  const int32_t h = r.perturbed_image.height(), w = r.perturbed_image.width();
  const int32_t n_iters = static_cast<int32_t>(r.iterations.size());
  const uint8_t converged = r.converged ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&n_iters), 4);
  out.write(reinterpret_cast<const char*>(&converged), 1);
  out.write(reinterpret_cast<const char*>(&r.final_mean_abs_perturbation), 8);
  for (int c = 0; c < 3; ++c) write_field(out, r.perturbed_image.channels[c]);
  write_field(out, r.attacked_flow.u);
  write_field(out, r.attacked_flow.v);
  write_field(out, r.original_flow.u);
  write_field(out, r.original_flow.v);
  for (const IterationStats& it : r.iterations) {
    const int32_t iter = it.iter;
    out.write(reinterpret_cast<const char*>(&iter), 4);
    out.write(reinterpret_cast<const char*>(&it.loss_attack), 8);
    out.write(reinterpret_cast<const char*>(&it.loss_consistency), 8);
    out.write(reinterpret_cast<const char*>(&it.loss_total), 8);
    out.write(reinterpret_cast<const char*>(&it.mean_abs_perturbation), 8);
  }
}

bool load_attack_artifact(const fs::path& path, AttackResult& r) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCacheMagic, 8) != 0) return false;
  int32_t h = 0, w = 0, n_iters = 0;
  uint8_t converged = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&n_iters), 4);
  in.read(reinterpret_cast<char*>(&converged), 1);
  in.read(reinterpret_cast<char*>(&r.final_mean_abs_perturbation), 8);
  if (!in || h < 1 || w < 1 || n_iters < 0) return false;
  r.perturbed_image = Image(h, w);
  r.attacked_flow = FlowField(h, w);
  r.original_flow = FlowField(h, w);
  r.converged = converged != 0;
  for (int c = 0; c < 3; ++c) read_field(in, r.perturbed_image.channels[c]);
  read_field(in, r.attacked_flow.u);
  read_field(in, r.attacked_flow.v);
  read_field(in, r.original_flow.u);
  read_field(in, r.original_flow.v);
  r.iterations.assign(n_iters, IterationStats{});
  for (IterationStats& it : r.iterations) {
    int32_t iter = 0;
    in.read(reinterpret_cast<char*>(&iter), 4);
    it.iter = iter;
    in.read(reinterpret_cast<char*>(&it.loss_attack), 8);
    in.read(reinterpret_cast<char*>(&it.loss_consistency), 8);
    in.read(reinterpret_cast<char*>(&it.loss_total), 8);
    in.read(reinterpret_cast<char*>(&it.mean_abs_perturbation), 8);
  }
  return static_cast<bool>(in);
}

AttackResult run_attack_cached(const fs::path& out_dir, const SceneData& scene,
                               const AttackConfig& config, const FlowModelParams& model) {
  const fs::path cache_dir = out_dir / "cache";
  fs::create_directories(cache_dir);
  const fs::path path = cache_dir / (attack_cache_key(scene, config, model) + ".bin");
  AttackResult result;
  if (load_attack_artifact(path, result)) return result;
  result = run_attack(scene.i1, scene.i2, scene.labels, config, model);
  save_attack_artifact(path, result);
  return result;
}

// ---- report writers ----

std::string trace_csv(const AttackResult& r) {
  std::string csv = "iter,loss_attack,loss_consistency,loss_total,mean_abs_perturbation\n";
  for (const IterationStats& it : r.iterations) {
    csv += std::to_string(it.iter) + "," + fmt(it.loss_attack) + "," +
           fmt(it.loss_consistency) + "," + fmt(it.loss_total) + "," +
           fmt(it.mean_abs_perturbation) + "\n";
  }
  return csv;
}

std::string report_csv(const CategoryReport& r) {
  std::string csv = "category,count,mean_epe\n";
  for (const CategoryStat& s : r.per_category) {
    csv += std::string(category_name(s.id)) + "," + std::to_string(s.count) + "," +
           (s.present ? fmt(s.mean_epe) : std::string()) + "\n";
  }
  csv += "on_target," + std::to_string(r.on_target_count) + "," + fmt(r.on_target_epe) + "\n";
  csv += "off_target," + std::to_string(r.off_target_count) + "," +
         fmt(r.off_target_epe) + "\n";
  csv += "off_target_category_mean,," + fmt(r.off_target_epe_category_mean) + "\n";
  return csv;
}

json report_json(const CategoryReport& r) {
  json per = json::array();
  for (const CategoryStat& s : r.per_category) {
    json e{{"category", category_name(s.id)}, {"count", s.count}, {"present", s.present}};
    if (s.present) e["mean_epe"] = s.mean_epe;
    per.push_back(e);
  }
  return json{{"per_category", per},
              {"on_target_epe", r.on_target_epe},
              {"on_target_count", r.on_target_count},
              {"off_target_epe", r.off_target_epe},
              {"off_target_count", r.off_target_count},
              {"off_target_epe_category_mean", r.off_target_epe_category_mean}};
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.scenes = SyntheticSource{};
  c.model = FlowModelParams{};
  c.model_family_count = 4;
  AttackVariant baseline;
  baseline.name = "nonconsistent";
  baseline.config.alpha = 0.0;
  AttackVariant consistent;
  consistent.name = "consistent";
  consistent.config.alpha = 10.0;
  c.attacks = {baseline, consistent};
  c.alpha_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  c.magnitudes = {0.2e-3, 0.4e-3, 1.2e-3, 2e-3, 3.2e-3, 4e-3, 6e-3, 8e-3};
  c.defenses = {DefenseMethod::Warping, DefenseMethod::Gaussian, DefenseMethod::Median};
  c.downstream = {DownstreamMetric::TtcError, DownstreamMetric::TargetEpe};
  c.ttc_window = 5;
  c.output_dir = "out";
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const ExperimentConfig& config) {
  write_text(path, config_to_json(config).dump(2) + "\n");
}

std::string canonical_config_string(const ExperimentConfig& config) {
  return config_to_json(config).dump();
}

std::string config_hash(const ExperimentConfig& config) {
  return hex16(fnv1a(canonical_config_string(config)));
}

std::vector<SceneData> load_scenes(const ExperimentConfig& config) {
  std::vector<SceneData> scenes;
  if (const auto* syn = std::get_if<SyntheticSource>(&config.scenes)) {
    const std::vector<SceneSpec> specs =
        scene_suite(syn->count, syn->base_seed, syn->width, syn->height);
    for (size_t i = 0; i < specs.size(); ++i) {
      SceneInstance instance = render(specs[i]);
      SceneData s;
      char id[8];
      std::snprintf(id, sizeof(id), "%03zu", i);
      s.id = id;
      s.i1 = std::move(instance.i1);
      s.i2 = std::move(instance.i2);
      s.labels = std::move(instance.labels);
      scenes.push_back(std::move(s));
    }
    return scenes;
  }

  const auto& dir = std::get<DirectorySource>(config.scenes);
  if (!fs::is_directory(dir.path)) {
    throw std::runtime_error("scenes: not a directory: " + dir.path);
  }
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir.path)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_10.png";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) {
    throw std::runtime_error("scenes: no *_10.png frames under " + dir.path);
  }
  for (const std::string& stem : stems) {
    const fs::path base = fs::path(dir.path);
    const fs::path i2_path = base / (stem + "_11.png");
    const fs::path sem_path = base / (stem + "_sem.png");
    if (!fs::exists(i2_path)) {
      throw std::runtime_error("scenes: missing second frame " + i2_path.string());
    }
    if (!fs::exists(sem_path)) {
      throw std::runtime_error("scenes: missing label file " + sem_path.string());
    }
    SceneData s;
    s.id = stem;
    s.i1 = read_image_png((base / (stem + "_10.png")).string());
    s.i2 = read_image_png(i2_path.string());
    s.labels = read_label_png(sem_path.string());
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void cmd_gen_scenes(const ExperimentConfig& config, const RunOptions& options) {
  const auto* syn = std::get_if<SyntheticSource>(&config.scenes);
  if (!syn) throw std::invalid_argument("gen-scenes: config must use a synthetic source");
  const ResolvedRun run = resolve(config, options, "gen-scenes");

  const std::vector<SceneSpec> specs =
      scene_suite(syn->count, syn->base_seed, syn->width, syn->height);
  for (size_t i = 0; i < specs.size(); ++i) {
    const SceneInstance scene = render(specs[i]);
    char id[8];
    std::snprintf(id, sizeof(id), "%03zu", i);
    write_image_png((run.out / (std::string(id) + "_10.png")).string(), scene.i1);
    write_image_png((run.out / (std::string(id) + "_11.png")).string(), scene.i2);
    write_label_png((run.out / (std::string(id) + "_sem.png")).string(), scene.labels);
    write_flo((run.out / (std::string(id) + "_gt.flo")).string(), scene.gt_flow);
  }
}

void cmd_attack(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "attack");
  const int n_scenes = static_cast<int>(run.scenes.size());

  struct Job {
    int scene;
    int variant;
    AttackResult result;
    CategoryReport report;
    PerturbationNorms norms;
  };
  std::vector<Job> jobs;
  for (int s = 0; s < n_scenes; ++s) {
    for (size_t v = 0; v < run.config.attacks.size(); ++v) {
      jobs.push_back(Job{s, static_cast<int>(v), {}, {}, {}});
    }
  }

  parallel_for(static_cast<int>(jobs.size()), options.workers, [&](int j) {
    Job& job = jobs[j];
    const SceneData& scene = run.scenes[job.scene];
    const AttackVariant& variant = run.config.attacks[job.variant];
    AttackConfig attack = variant.config;
    attack.rng_seed = scene_seed(variant.config, scene.id);
    job.result = run_attack_cached(run.out, scene, attack, run.config.model);
    job.report = per_category_report(job.result.attacked_flow, job.result.original_flow,
                                     scene.labels, attack.target_category);
    const auto masks = build_masks(scene.labels, attack);
    job.norms = perturbation_norms(job.result.perturbed_image, scene.i1, masks.second);
  });

  for (const Job& job : jobs) {
    const SceneData& scene = run.scenes[job.scene];
    const AttackVariant& variant = run.config.attacks[job.variant];
    const fs::path dir = run.out / scene.id / variant.name;
    fs::create_directories(dir);
    write_image_png((dir / "perturbed.png").string(), job.result.perturbed_image);
    write_flo((dir / "attacked.flo").string(), job.result.attacked_flow);
    write_flo((dir / "original.flo").string(), job.result.original_flow);
    write_image_png((dir / "flow_original.png").string(),
                    flow_to_color(job.result.original_flow));
    write_image_png((dir / "flow_attacked.png").string(),
                    flow_to_color(job.result.attacked_flow));
    write_image_png((dir / "perturbation.png").string(),
                    perturbation_heatmap(job.result.perturbed_image, scene.i1));
    write_text(dir / "trace.csv", trace_csv(job.result));
    write_text(dir / "report.csv", report_csv(job.report));
    json rj = report_json(job.report);
    rj["converged"] = job.result.converged;
    rj["final_mean_abs_perturbation"] = job.result.final_mean_abs_perturbation;
    rj["perturbation"] = {{"mean_abs_in_mask", job.norms.mean_abs_in_mask},
                          {"max_abs", job.norms.max_abs},
                          {"out_of_mask_max", job.norms.out_of_mask_max}};
    rj["config_hash"] = run.hash;
    write_text(dir / "report.json", rj.dump(2) + "\n");
  }
}

void cmd_sweep_alpha(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "sweep-alpha");
  std::vector<double> grid = run.config.alpha_grid;
  if (grid.empty()) grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || (i > 0 && grid[i] <= grid[i - 1])) {
      throw std::invalid_argument("sweep-alpha: grid must be nonnegative ascending");
    }
  }

  const AttackVariant& base = run.config.attacks.front();
  struct Row {
    double alpha;
    double on_target = 0.0, off_target = 0.0, off_target_cat = 0.0;
    int converged = 0;
  };
  std::vector<Row> rows(grid.size());

  parallel_for(static_cast<int>(grid.size()), options.workers, [&](int gi) {
    Row row;
    row.alpha = grid[gi];
    for (const SceneData& scene : run.scenes) {
      AttackConfig attack = base.config;
      attack.alpha = grid[gi];
      attack.rng_seed = scene_seed(base.config, scene.id);
      const AttackResult result = run_attack_cached(run.out, scene, attack, run.config.model);
      const CategoryReport report = per_category_report(
          result.attacked_flow, result.original_flow, scene.labels, attack.target_category);
      row.on_target += report.on_target_epe;
      row.off_target += report.off_target_epe;
      row.off_target_cat += report.off_target_epe_category_mean;
      if (result.converged) ++row.converged;
    }
    const double n = static_cast<double>(run.scenes.size());
    row.on_target /= n;
    row.off_target /= n;
    row.off_target_cat /= n;
    rows[gi] = row;
  });

  std::string csv = "alpha,on_target_epe,off_target_epe,off_target_epe_category_mean,converged\n";
  for (const Row& r : rows) {
    csv += fmt(r.alpha) + "," + fmt(r.on_target) + "," + fmt(r.off_target) + "," +
           fmt(r.off_target_cat) + "," + std::to_string(r.converged) + "\n";
  }
  write_text(run.out / "sweep_alpha.csv", csv);
}

void cmd_blackbox(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "blackbox");
  if (run.config.model_family_count < 2) {
    throw std::invalid_argument("blackbox: model_family_count must be >= 2");
  }
  const std::vector<FlowModelParams> family =
      model_family(run.config.model, run.config.model_family_count);
  const int n_models = static_cast<int>(family.size());
  const int n_scenes = static_cast<int>(run.scenes.size());

  std::string long_csv = "variant,scene,source,target,on_target_epe\n";
  for (const AttackVariant& variant : run.config.attacks) {
    // matrix[source][target], suite means
    std::vector<std::vector<double>> matrix(n_models, std::vector<double>(n_models, 0.0));
    std::vector<std::vector<std::vector<double>>> per_scene(
        n_scenes, std::vector<std::vector<double>>(n_models, std::vector<double>(n_models)));

    parallel_for(n_scenes, options.workers, [&](int si) {
      const SceneData& scene = run.scenes[si];
      const Mask target = Mask::of_category(scene.labels, variant.config.target_category);
      for (int source = 0; source < n_models; ++source) {
        AttackConfig attack = variant.config;
        attack.rng_seed = scene_seed(variant.config, scene.id);
        const AttackResult result =
            run_attack_cached(run.out, scene, attack, family[source]);
        for (int tgt = 0; tgt < n_models; ++tgt) {
          double epe;
          if (tgt == source) {
            epe = epe_masked(result.attacked_flow, result.original_flow, target);
          } else {
            const FlowField v_orig = estimate_flow(scene.i1, scene.i2, family[tgt]);
            const FlowField v_atk =
                estimate_flow(result.perturbed_image, scene.i2, family[tgt]);
            epe = epe_masked(v_atk, v_orig, target);
          }
          per_scene[si][source][tgt] = epe;
        }
      }
    });

    for (int si = 0; si < n_scenes; ++si) {
      for (int s = 0; s < n_models; ++s) {
        for (int t = 0; t < n_models; ++t) {
          matrix[s][t] += per_scene[si][s][t] / n_scenes;
          long_csv += variant.name + "," + run.scenes[si].id + "," + std::to_string(s) +
                      "," + std::to_string(t) + "," + fmt(per_scene[si][s][t]) + "\n";
        }
      }
    }

    std::string csv = "source\\target";
    for (int t = 0; t < n_models; ++t) csv += ",model_" + std::to_string(t);
    csv += "\n";
    for (int s = 0; s < n_models; ++s) {
      csv += "model_" + std::to_string(s);
      for (int t = 0; t < n_models; ++t) csv += "," + fmt(matrix[s][t]);
      csv += "\n";
    }
    write_text(run.out / ("blackbox_" + variant.name + ".csv"), csv);
  }
  write_text(run.out / "blackbox_long.csv", long_csv);
}

void cmd_detect(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "detect");
  if (run.config.magnitudes.empty()) {
    throw std::invalid_argument("detect: magnitude list must not be empty");
  }
  for (size_t i = 0; i < run.config.magnitudes.size(); ++i) {
    if (run.config.magnitudes[i] <= 0.0 ||
        (i > 0 && run.config.magnitudes[i] <= run.config.magnitudes[i - 1])) {
      throw std::invalid_argument("detect: magnitudes must be positive ascending");
    }
  }
  if (run.config.defenses.empty() || run.config.downstream.empty()) {
    throw std::invalid_argument("detect: defenses and downstream metrics required");
  }

  const int n_scenes = static_cast<int>(run.scenes.size());
  const int n_mags = static_cast<int>(run.config.magnitudes.size());
  const int n_variants = static_cast<int>(run.config.attacks.size());

  struct Cell {
    AttackResult result;
    TTCMap ttc_orig, ttc_atk;
    bool ttc_ok = false;
  };
  std::vector<Cell> cells(static_cast<size_t>(n_scenes) * n_mags * n_variants);
  auto cell_at = [&](int s, int m, int v) -> Cell& {
    return cells[(static_cast<size_t>(s) * n_mags + m) * n_variants + v];
  };

  parallel_for(n_scenes * n_mags * n_variants, options.workers, [&](int idx) {
    const int v = idx % n_variants;
    const int m = (idx / n_variants) % n_mags;
    const int s = idx / (n_variants * n_mags);
    const SceneData& scene = run.scenes[s];
    AttackConfig attack = run.config.attacks[v].config;
    attack.budget = run.config.magnitudes[m];
    attack.rng_seed = scene_seed(run.config.attacks[v].config, scene.id);
    Cell& cell = cell_at(s, m, v);
    cell.result = run_attack_cached(run.out, scene, attack, run.config.model);
    cell.ttc_orig = ttc_from_flow(cell.result.original_flow, run.config.ttc_window);
    cell.ttc_atk = ttc_from_flow(cell.result.attacked_flow, run.config.ttc_window);
    for (size_t i = 0; i < cell.ttc_orig.valid.size(); ++i) {
      if (cell.ttc_orig.valid[i] && cell.ttc_atk.valid[i]) {
        cell.ttc_ok = true;
        break;
      }
    }
  });

  for (DownstreamMetric downstream : run.config.downstream) {
    std::string csv = "method,alpha,magnitude,detection_score,impact\n";
    for (DefenseMethod method : run.config.defenses) {
      for (int v = 0; v < n_variants; ++v) {
        for (int m = 0; m < n_mags; ++m) {
          double det = 0.0, impact = 0.0;
          int impact_n = 0;
          for (int s = 0; s < n_scenes; ++s) {
            const Cell& cell = cell_at(s, m, v);
            const SceneData& scene = run.scenes[s];
            det += detection_score(method, cell.result.perturbed_image, scene.i2,
                                   cell.result.attacked_flow, run.config.model);
            if (downstream == DownstreamMetric::TargetEpe) {
              const Mask target =
                  Mask::of_category(scene.labels, run.config.attacks[v].config.target_category);
              impact += epe_masked(cell.result.attacked_flow, cell.result.original_flow, target);
              ++impact_n;
            } else if (cell.ttc_ok) {
              impact += ttc_error(cell.ttc_atk, cell.ttc_orig).mean_relative_error;
              ++impact_n;
            }
          }
          det /= n_scenes;
          impact = impact_n > 0 ? impact / impact_n : 0.0;
          csv += std::string(defense_method_name(method)) + "," +
                 fmt(run.config.attacks[v].config.alpha) + "," +
                 fmt(run.config.magnitudes[m]) + "," + fmt(det) + "," + fmt(impact) + "\n";
        }
      }
    }
    write_text(run.out / (std::string("detect_") + downstream_metric_name(downstream) + ".csv"),
               csv);
  }
}

void cmd_ttc(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "ttc");
  std::string csv = "scene,variant,alpha,ttc_error,validity_churn,jointly_valid\n";
  for (const SceneData& scene : run.scenes) {
    for (const AttackVariant& variant : run.config.attacks) {
      AttackConfig attack = variant.config;
      attack.rng_seed = scene_seed(variant.config, scene.id);
      const AttackResult result = run_attack_cached(run.out, scene, attack, run.config.model);
      const TTCMap t_orig = ttc_from_flow(result.original_flow, run.config.ttc_window);
      const TTCMap t_atk = ttc_from_flow(result.attacked_flow, run.config.ttc_window);
      const fs::path dir = run.out / scene.id / variant.name;
      fs::create_directories(dir);
      write_image_png((dir / "ttc_original.png").string(), ttc_colormap(t_orig));
      write_image_png((dir / "ttc_attacked.png").string(), ttc_colormap(t_atk));
      // TTC maps travel in the .flo container: u = TTC frames, v = validity
      FlowField packed_orig(t_orig.height, t_orig.width), packed_atk(t_atk.height, t_atk.width);
      for (size_t i = 0; i < t_orig.valid.size(); ++i) {
        packed_orig.u.values[i] = t_orig.ttc.values[i];
        packed_orig.v.values[i] = t_orig.valid[i];
        packed_atk.u.values[i] = t_atk.ttc.values[i];
        packed_atk.v.values[i] = t_atk.valid[i];
      }
      write_flo((dir / "ttc_original.flo").string(), packed_orig);
      write_flo((dir / "ttc_attacked.flo").string(), packed_atk);
      std::string err = "", churn = "", nvalid = "0";
      try {
        const TTCErrorReport report = ttc_error(t_atk, t_orig);
        err = fmt(report.mean_relative_error);
        churn = fmt(report.validity_churn);
        nvalid = std::to_string(report.jointly_valid);
      } catch (const std::invalid_argument&) {
        // leave the row empty when no pixels are jointly valid
      }
      csv += scene.id + "," + variant.name + "," + fmt(variant.config.alpha) + "," + err +
             "," + churn + "," + nvalid + "\n";
    }
  }
  write_text(run.out / "ttc.csv", csv);
}

void cmd_viz(const ExperimentConfig& config, const RunOptions& options) {
  const ResolvedRun run = resolve(config, options, "viz");
  for (const SceneData& scene : run.scenes) {
    const fs::path dir = run.out / scene.id;
    fs::create_directories(dir);
    write_image_png((dir / "i1.png").string(), scene.i1);
    write_image_png((dir / "i2.png").string(), scene.i2);
    write_label_png((dir / "labels.png").string(), scene.labels);
    const FlowField flow = estimate_flow(scene.i1, scene.i2, run.config.model);
    write_flo((dir / "flow.flo").string(), flow);
    write_image_png((dir / "flow.png").string(), flow_to_color(flow));
  }
}

}  // namespace flowattack
