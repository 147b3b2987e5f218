#include <doctest.h>

#include <cmath>

#include "flowattack/attack.hpp"
#include "flowattack/metrics.hpp"
#include "flowattack/scene_gen.hpp"
#include "support.hpp"

using namespace flowattack;
using testsupport::random_field;

namespace {

FlowField random_flow(Rng& rng, int h, int w) {
  FlowField f(h, w);
  f.u = random_field(rng, h, w, -2, 2);
  f.v = random_field(rng, h, w, -2, 2);
  return f;
}

// independent per-pixel loops, the oracle pair for Eq-style losses
double attack_loss_oracle(const FlowField& a, const FlowField& o, const Mask& target) {
  double acc = 0.0;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      if (!target.at(y, x)) continue;
      acc += std::fabs(a.u.at(y, x) - o.u.at(y, x)) + std::fabs(a.v.at(y, x) - o.v.at(y, x));
    }
  }
  return acc / target.count;
}

double consistency_loss_oracle(const FlowField& a, const FlowField& o, const Mask& target) {
  double acc = 0.0;
  int n = 0;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      if (target.at(y, x)) continue;
      acc += std::fabs(a.u.at(y, x) - o.u.at(y, x)) + std::fabs(a.v.at(y, x) - o.v.at(y, x));
      ++n;
    }
  }
  return -acc / n;
}

LabelMap simple_labels() {
  LabelMap labels(16, 16, Category::Flat);
  for (int y = 4; y < 9; ++y) {
    for (int x = 5; x < 11; ++x) labels.set(y, x, Category::Vehicle);
  }
  for (int y = 11; y < 15; ++y) {
    for (int x = 1; x < 6; ++x) labels.set(y, x, Category::Nature);
  }
  return labels;
}

}  // namespace

TEST_CASE("build_masks: local, global and cross-category supports") {
  const LabelMap labels = simple_labels();
  AttackConfig config;
  config.target_category = Category::Vehicle;

  config.setting = AttackSetting::Local;
  auto [t1, p1] = build_masks(labels, config);
  CHECK(t1.count == 30);
  CHECK(p1.set == t1.set);

  config.setting = AttackSetting::Global;
  auto [t2, p2] = build_masks(labels, config);
  CHECK(p2.count == 16 * 16);
  CHECK(t2.set == t1.set);

  config.setting = AttackSetting::CrossCategory;
  config.perturb_category = Category::Nature;
  auto [t3, p3] = build_masks(labels, config);
  CHECK(p3.count == 20);
  for (size_t i = 0; i < p3.set.size(); ++i) CHECK((p3.set[i] & t3.set[i]) == 0);
}

TEST_CASE("build_masks: missing categories rejected by name") {
  const LabelMap labels = simple_labels();
  AttackConfig config;
  config.target_category = Category::Human;
  CHECK_THROWS_WITH_AS((void)build_masks(labels, config), doctest::Contains("human"),
                       std::invalid_argument);

  config.target_category = Category::Vehicle;
  config.setting = AttackSetting::CrossCategory;
  config.perturb_category = Category::Sky;
  CHECK_THROWS_WITH_AS((void)build_masks(labels, config), doctest::Contains("sky"),
                       std::invalid_argument);
}

TEST_CASE("loss_attack: pinned examples") {
  FlowField orig(4, 4);
  SUBCASE("identical flows") {
    Mask m(4, 4);
    m.mark(1, 1);
    CHECK(loss_attack(orig, orig, m) == 0.0);
  }
  SUBCASE("single pixel (3,4) difference scores 7") {
    FlowField attacked(4, 4);
    attacked.u.at(2, 3) = 3.0;
    attacked.v.at(2, 3) = -4.0;
    Mask m(4, 4);
    m.mark(2, 3);
    CHECK(loss_attack(attacked, orig, m) == 7.0);
  }
}

TEST_CASE("loss oracles: random instances match the independent loops") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const FlowField a = random_flow(rng, 8, 8);
    const FlowField o = random_flow(rng, 8, 8);
    Mask m(8, 8);
    while (m.count < 5) m.mark(rng.uniform_int(0, 7), rng.uniform_int(0, 7));
    CHECK(loss_attack(a, o, m) ==
          doctest::Approx(attack_loss_oracle(a, o, m)).epsilon(1e-12));
    CHECK(loss_consistency(a, o, m) ==
          doctest::Approx(consistency_loss_oracle(a, o, m)).epsilon(1e-12));
    CHECK(loss_consistency(a, o, m) <= 0.0);
  }
}

TEST_CASE("loss_consistency: pinned example and full-mask rejection") {
  FlowField orig(4, 4), attacked(4, 4);
  Mask m(4, 4);  // one target pixel -> 15 complement pixels
  m.mark(0, 0);
  attacked.u.at(3, 3) = 1.0;
  attacked.v.at(3, 3) = 1.0;
  CHECK(loss_consistency(attacked, orig, m) == doctest::Approx(-2.0 / 15).epsilon(1e-15));
  CHECK_THROWS_AS((void)loss_consistency(attacked, orig, Mask::all(4, 4)),
                  std::invalid_argument);
}

TEST_CASE("loss_total: alpha composition") {
  Rng rng(32);
  const FlowField a = random_flow(rng, 8, 8);
  const FlowField o = random_flow(rng, 8, 8);
  Mask m(8, 8);
  while (m.count < 6) m.mark(rng.uniform_int(0, 7), rng.uniform_int(0, 7));

  CHECK(loss_total(a, o, m, 0.0) == loss_attack(a, o, m));  // bit-for-bit
  CHECK(loss_total(a, o, m, 10.0) ==
        doctest::Approx(loss_attack(a, o, m) + 10.0 * loss_consistency(a, o, m))
            .epsilon(1e-15));
  CHECK(loss_total(o, o, m, 3.7) == 0.0);
}

TEST_CASE("loss_terms_on_tape: forward values equal the plain losses") {
  Rng rng(33);
  const FlowField reference = random_flow(rng, 8, 8);
  const FlowField attacked = random_flow(rng, 8, 8);
  Mask m(8, 8);
  while (m.count < 6) m.mark(rng.uniform_int(0, 7), rng.uniform_int(0, 7));

  ad::Tape t;
  FlowNodes nodes{t.leaf(attacked.u), t.leaf(attacked.v)};
  const LossNodes losses = loss_terms_on_tape(t, nodes, reference, m, 10.0);
  CHECK(t.value(losses.attack).values[0] ==
        doctest::Approx(loss_attack(attacked, reference, m)).epsilon(1e-15));
  CHECK(t.value(losses.consistency).values[0] ==
        doctest::Approx(loss_consistency(attacked, reference, m)).epsilon(1e-15));
  CHECK(t.value(losses.total).values[0] ==
        doctest::Approx(loss_total(attacked, reference, m, 10.0)).epsilon(1e-15));
}

TEST_CASE("epsilon_schedule") {
  CHECK(epsilon_schedule(4e-3, 2) == 2e-3);
  CHECK(epsilon_schedule(0.125, 1) == 0.125);
  Rng rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    const double budget = rng.uniform(1e-4, 1e-1);
    const int n = rng.uniform_int(1, 12);
    CHECK(n * epsilon_schedule(budget, n) == doctest::Approx(budget).epsilon(1e-15));
  }
  CHECK_THROWS_AS((void)epsilon_schedule(0.0, 2), std::invalid_argument);
  CHECK_THROWS_AS((void)epsilon_schedule(1e-3, 0), std::invalid_argument);
}

TEST_CASE("ifgsm_step: uniform images stay untouched (sign(0) = 0)") {
  const Image img(16, 16, 0.5);
  const LabelMap labels = simple_labels();
  AttackConfig config;
  auto [target, perturb] = build_masks(labels, config);
  FlowModelParams model;
  model.pyramid_levels = 2;
  model.jacobi_iters_per_level = 5;
  const FlowField reference(16, 16);
  const StepOutcome out =
      ifgsm_step(img, img, img, reference, target, perturb, 0.0, 1e-3, model, true);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < out.next_image.channels[c].size(); ++i) {
      CHECK(out.next_image.channels[c].values[i] == 0.5);
    }
  }
}

TEST_CASE("ifgsm_step: masked update with exact per-element steps") {
  const SceneInstance scene = render(scene_suite(1, 55, 32, 32)[0]);

  AttackConfig config;
  config.setting = AttackSetting::Local;
  auto [target, perturb] = build_masks(scene.labels, config);

  FlowModelParams model;
  model.pyramid_levels = 2;
  model.jacobi_iters_per_level = 8;
  const FlowField v0 = estimate_flow(scene.i1, scene.i2, model);
  FlowField reference = v0;
  Rng noise(3);
  for (double& x : reference.u.values) x += 0.01 * noise.gaussian();
  for (double& x : reference.v.values) x += 0.01 * noise.gaussian();

  const double eps = 2e-3;
  // clamping disabled so the step sizes are visible exactly
  const StepOutcome out = ifgsm_step(scene.i1, scene.i1, scene.i2, reference, target,
                                     perturb, 10.0, eps, model, false);
  int moved = 0;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < perturb.set.size(); ++i) {
      const double before = scene.i1.channels[c].values[i];
      const double after = out.next_image.channels[c].values[i];
      if (!perturb.set[i]) {
        CHECK(after == before);  // bit-identical outside the mask
      } else {
        // each element lands exactly on one of the three admissible values
        const bool exact_step =
            after == before || after == before + eps || after == before - eps;
        CHECK(exact_step);
        if (after != before) ++moved;
      }
    }
  }
  CHECK(moved > static_cast<int>(2 * perturb.count));  // texture gives signal
}

TEST_CASE("run_attack: budget window, confinement, range and determinism") {
  const SceneInstance scene = render(scene_suite(1, 91)[0]);
  AttackConfig config;
  config.alpha = 10.0;
  config.budget = 4e-3;
  config.step_estimate = 2;
  config.setting = AttackSetting::Global;
  config.rng_seed = 7;
  const FlowModelParams model;

  const AttackResult result = run_attack(scene.i1, scene.i2, scene.labels, config, model);
  CHECK(result.converged);
  CHECK(result.final_mean_abs_perturbation >= 0.95 * config.budget);
  CHECK(result.final_mean_abs_perturbation <= 1.05 * config.budget);
  CHECK(result.iterations.size() >= 2);

  auto masks = build_masks(scene.labels, config);
  const PerturbationNorms norms =
      perturbation_norms(result.perturbed_image, scene.i1, masks.second);
  CHECK(norms.out_of_mask_max == 0.0);
  for (int c = 0; c < 3; ++c) {
    for (double v : result.perturbed_image.channels[c].values) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }

  // the attack must actually do damage on the target
  const Mask target = masks.first;
  CHECK(epe_masked(result.attacked_flow, result.original_flow, target) > 0.0);

  SUBCASE("bit-identical replay") {
    const AttackResult again = run_attack(scene.i1, scene.i2, scene.labels, config, model);
    CHECK(again.converged == result.converged);
    CHECK(again.iterations.size() == result.iterations.size());
    for (size_t i = 0; i < result.iterations.size(); ++i) {
      CHECK(again.iterations[i].loss_total == result.iterations[i].loss_total);
    }
    for (int c = 0; c < 3; ++c) {
      CHECK(again.perturbed_image.channels[c].values ==
            result.perturbed_image.channels[c].values);
    }
    CHECK(again.attacked_flow.u.values == result.attacked_flow.u.values);
    CHECK(again.attacked_flow.v.values == result.attacked_flow.v.values);
  }

  SUBCASE("different seed changes the first-iteration reference") {
    AttackConfig other = config;
    other.rng_seed = 8;
    const AttackResult variant = run_attack(scene.i1, scene.i2, scene.labels, other, model);
    CHECK(variant.iterations[0].loss_total != result.iterations[0].loss_total);
  }
}

TEST_CASE("run_attack: local setting satisfies the same invariants for both alphas") {
  const SceneInstance scene = render(scene_suite(1, 92)[0]);
  for (double alpha : {0.0, 10.0}) {
    AttackConfig config;
    config.alpha = alpha;
    config.setting = AttackSetting::Local;
    config.rng_seed = 4;
    const AttackResult result =
        run_attack(scene.i1, scene.i2, scene.labels, config, FlowModelParams{});
    const auto masks = build_masks(scene.labels, config);
    const PerturbationNorms norms =
        perturbation_norms(result.perturbed_image, scene.i1, masks.second);
    CAPTURE(alpha);
    CHECK(norms.out_of_mask_max == 0.0);
    if (result.converged) {
      CHECK(result.final_mean_abs_perturbation >= 0.95 * config.budget);
      CHECK(result.final_mean_abs_perturbation <= 1.05 * config.budget);
    }
  }
}

TEST_CASE("run_attack: config validation") {
  const SceneInstance scene = render(scene_suite(1, 93)[0]);
  AttackConfig config;
  config.budget = 0.0;
  CHECK_THROWS_AS(
      (void)run_attack(scene.i1, scene.i2, scene.labels, config, FlowModelParams{}),
      std::invalid_argument);
  config.budget = 4e-3;
  config.max_iters = 1;
  config.step_estimate = 2;
  CHECK_THROWS_AS(
      (void)run_attack(scene.i1, scene.i2, scene.labels, config, FlowModelParams{}),
      std::invalid_argument);
}
