#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flowattack/flow_model.hpp"
#include "flowattack/types.hpp"

namespace flowattack {

enum class AttackSetting { Local, Global, CrossCategory };

const char* attack_setting_name(AttackSetting s);

struct AttackConfig {
  double alpha = 0.0;              // consistency coefficient
  double budget = 4e-3;            // target mean |delta| per perturbed pixel-channel
  int step_estimate = 2;           // n in the epsilon schedule
  AttackSetting setting = AttackSetting::Global;
  Category target_category = Category::Vehicle;
  Category perturb_category = Category::Nature;  // cross-category only
  double noise_sigma = 1e-3;       // flow units, first-iteration reference noise
  uint64_t rng_seed = 0;
  int max_iters = 20;              // default 10 * step_estimate
  bool clamp_to_unit_interval = true;
};

struct IterationStats {
  int iter = 0;
  double loss_attack = 0.0;
  double loss_consistency = 0.0;
  double loss_total = 0.0;
  double mean_abs_perturbation = 0.0;  // after this iteration's update
};

struct AttackResult {
  Image perturbed_image;
  FlowField attacked_flow;
  FlowField original_flow;
  std::vector<IterationStats> iterations;
  double final_mean_abs_perturbation = 0.0;
  bool converged = false;
};

// M_target from the target category; M_perturb per setting (same set /
// whole image / the perturb category).
std::pair<Mask, Mask> build_masks(const LabelMap& labels, const AttackConfig& config);

// Mean per-pixel L1 flow change over the target mask.
double loss_attack(const FlowField& attacked, const FlowField& original,
                   const Mask& target);

// Negative mean per-pixel L1 flow change over the target complement.
double loss_consistency(const FlowField& attacked, const FlowField& original,
                        const Mask& target);

double loss_total(const FlowField& attacked, const FlowField& original,
                  const Mask& target, double alpha);

// Tape-recorded loss terms for a recorded flow estimate.
struct LossNodes {
  ad::NodeId attack, consistency, total;
};
LossNodes loss_terms_on_tape(ad::Tape& tape, FlowNodes attacked,
                             const FlowField& reference, const Mask& target,
                             double alpha);

// Step size so that step_estimate steps of +-epsilon reach the budget.
double epsilon_schedule(double budget, int step_estimate);

struct StepOutcome {
  Image next_image;
  IterationStats stats;
};

// One masked IFGSM step: records the estimator and total loss on a fresh
// tape, back-propagates to I1, moves each perturbable pixel-channel by
// epsilon * sign(gradient) (sign(0) = 0), clamps when requested.
StepOutcome ifgsm_step(const Image& i1_current, const Image& i1_original,
                       const Image& i2, const FlowField& reference_flow,
                       const Mask& target, const Mask& perturb, double alpha,
                       double epsilon, const FlowModelParams& model, bool clamp);

AttackResult run_attack(const Image& i1, const Image& i2, const LabelMap& labels,
                        const AttackConfig& config, const FlowModelParams& model);

}  // namespace flowattack
