#include "flowattack/attack.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "flowattack/metrics.hpp"

namespace flowattack {

const char* attack_setting_name(AttackSetting s) {
  switch (s) {
    case AttackSetting::Local: return "local";
    case AttackSetting::Global: return "global";
    case AttackSetting::CrossCategory: return "cross_category";
  }
  return "?";
}

namespace {

void validate_config(const AttackConfig& c) {
  if (c.budget <= 0.0) throw std::invalid_argument("attack: budget must be positive");
  if (c.alpha < 0.0) throw std::invalid_argument("attack: alpha must be >= 0");
  if (c.step_estimate < 1) throw std::invalid_argument("attack: step_estimate must be >= 1");
  if (c.max_iters < c.step_estimate) {
    throw std::invalid_argument("attack: max_iters must be >= step_estimate");
  }
  if (c.noise_sigma < 0.0) throw std::invalid_argument("attack: noise_sigma must be >= 0");
}

double pair_l1(const FlowField& a, const FlowField& b, size_t i) {
  return std::fabs(a.u.values[i] - b.u.values[i]) +
         std::fabs(a.v.values[i] - b.v.values[i]);
}

ad::MaskAttr to_attr(const Mask& m) {
  return ad::MaskAttr{m.height, m.width, m.set};
}

}  // namespace

std::pair<Mask, Mask> build_masks(const LabelMap& labels, const AttackConfig& config) {
  Mask target = Mask::of_category(labels, config.target_category);
  if (target.count < 1) {
    throw std::invalid_argument(std::string("build_masks: no pixels of target category '") +
                                category_name(config.target_category) + "'");
  }
  Mask perturb;
  switch (config.setting) {
    case AttackSetting::Local:
      perturb = target;
      break;
    case AttackSetting::Global:
      perturb = Mask::all(labels.height, labels.width);
      break;
    case AttackSetting::CrossCategory:
      perturb = Mask::of_category(labels, config.perturb_category);
      if (perturb.count < 1) {
        throw std::invalid_argument(
            std::string("build_masks: no pixels of perturb category '") +
            category_name(config.perturb_category) + "'");
      }
      break;
  }
  return {std::move(target), std::move(perturb)};
}

double loss_attack(const FlowField& attacked, const FlowField& original,
                   const Mask& target) {
  if (!attacked.u.same_shape(original.u) || attacked.height() != target.height ||
      attacked.width() != target.width) {
    throw std::invalid_argument("loss_attack: shape mismatch");
  }
  if (target.count < 1) throw std::invalid_argument("loss_attack: empty target mask");
  double acc = 0.0;
  for (size_t i = 0; i < target.set.size(); ++i) {
    if (target.set[i]) acc += pair_l1(attacked, original, i);
  }
  return acc / target.count;
}

double loss_consistency(const FlowField& attacked, const FlowField& original,
                        const Mask& target) {
  if (!attacked.u.same_shape(original.u) || attacked.height() != target.height ||
      attacked.width() != target.width) {
    throw std::invalid_argument("loss_consistency: shape mismatch");
  }
  const int complement = target.height * target.width - target.count;
  if (complement < 1) {
    throw std::invalid_argument("loss_consistency: target mask covers every pixel");
  }
  double acc = 0.0;
  for (size_t i = 0; i < target.set.size(); ++i) {
    if (!target.set[i]) acc += pair_l1(attacked, original, i);
  }
  return -acc / complement;
}

double loss_total(const FlowField& attacked, const FlowField& original,
                  const Mask& target, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("loss_total: alpha must be >= 0");
  return loss_attack(attacked, original, target) +
         alpha * loss_consistency(attacked, original, target);
}

LossNodes loss_terms_on_tape(ad::Tape& t, FlowNodes attacked,
                             const FlowField& reference, const Mask& target,
                             double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("loss_total: alpha must be >= 0");
  const Field2D& u = t.value(attacked.u);
  if (u.height != target.height || u.width != target.width ||
      !u.same_shape(reference.u)) {
    throw std::invalid_argument("loss_total: shape mismatch");
  }
  if (target.count < 1) throw std::invalid_argument("loss_total: empty target mask");
  const int complement = target.height * target.width - target.count;
  if (complement < 1) {
    throw std::invalid_argument("loss_total: target mask covers every pixel");
  }

  ad::NodeId du = t.abs(t.sub(attacked.u, t.constant(reference.u)));
  ad::NodeId dv = t.abs(t.sub(attacked.v, t.constant(reference.v)));
  ad::NodeId l1 = t.add(du, dv);

  LossNodes nodes;
  nodes.attack = t.scalar_mul(t.masked_sum(l1, to_attr(target)), 1.0 / target.count);
  nodes.consistency =
      t.scalar_mul(t.masked_sum(l1, to_attr(target.complement())), -1.0 / complement);
  nodes.total = t.add(nodes.attack, t.scalar_mul(nodes.consistency, alpha));
  return nodes;
}

double epsilon_schedule(double budget, int step_estimate) {
  if (budget <= 0.0) throw std::invalid_argument("epsilon_schedule: budget must be positive");
  if (step_estimate < 1) throw std::invalid_argument("epsilon_schedule: steps must be >= 1");
  return budget / step_estimate;
}

namespace {

// gradient signs at the current iterate; the magnitude is applied separately
struct SignedGradient {
  std::array<std::vector<int8_t>, 3> signs;
  double loss_attack = 0.0, loss_consistency = 0.0, loss_total = 0.0;
};

SignedGradient attack_gradient(const Image& i1_current, const Image& i2,
                               const FlowField& reference_flow, const Mask& target,
                               double alpha, const FlowModelParams& model) {
  ad::Tape tape;
  const RecordedFlow rec = estimate_flow_recorded(tape, i1_current, i2, model);
  const LossNodes losses = loss_terms_on_tape(tape, rec.flow, reference_flow, target, alpha);

  const std::vector<Field2D> grads =
      tape.backward(losses.total, std::span<const ad::NodeId>(rec.i1_leaves));
  for (const Field2D& g : grads) {
    if (!g.all_finite()) {
      throw std::runtime_error("ifgsm_step: non-finite gradient, attack aborted");
    }
  }

  SignedGradient out;
  for (int c = 0; c < 3; ++c) {
    out.signs[c].resize(grads[c].size());
    for (size_t i = 0; i < grads[c].size(); ++i) {
      const double gv = grads[c].values[i];
      out.signs[c][i] = gv > 0.0 ? 1 : (gv < 0.0 ? -1 : 0);
    }
  }
  out.loss_attack = tape.value(losses.attack).values[0];
  out.loss_consistency = tape.value(losses.consistency).values[0];
  out.loss_total = tape.value(losses.total).values[0];
  return out;
}

Image apply_signed_step(const Image& i1_current, const SignedGradient& gradient,
                        const Mask& perturb, double epsilon, bool clamp) {
  Image next = i1_current;
  for (int c = 0; c < 3; ++c) {
    Field2D& ch = next.channels[c];
    for (size_t i = 0; i < ch.size(); ++i) {
      if (!perturb.set[i] || gradient.signs[c][i] == 0) continue;
      ch.values[i] += epsilon * gradient.signs[c][i];
      if (clamp) ch.values[i] = std::min(std::max(ch.values[i], 0.0), 1.0);
    }
  }
  return next;
}

double mean_abs_in_mask(const Image& a, const Image& b, const Mask& mask) {
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < mask.set.size(); ++i) {
      if (mask.set[i]) acc += std::fabs(a.channels[c].values[i] - b.channels[c].values[i]);
    }
  }
  return acc / (3.0 * mask.count);
}

}  // namespace

StepOutcome ifgsm_step(const Image& i1_current, const Image& i1_original,
                       const Image& i2, const FlowField& reference_flow,
                       const Mask& target, const Mask& perturb, double alpha,
                       double epsilon, const FlowModelParams& model, bool clamp) {
  const SignedGradient gradient =
      attack_gradient(i1_current, i2, reference_flow, target, alpha, model);
  StepOutcome out;
  out.next_image = apply_signed_step(i1_current, gradient, perturb, epsilon, clamp);
  out.stats.loss_attack = gradient.loss_attack;
  out.stats.loss_consistency = gradient.loss_consistency;
  out.stats.loss_total = gradient.loss_total;
  out.stats.mean_abs_perturbation = mean_abs_in_mask(out.next_image, i1_original, perturb);
  return out;
}

AttackResult run_attack(const Image& i1, const Image& i2, const LabelMap& labels,
                        const AttackConfig& config, const FlowModelParams& model) {
  validate_config(config);
  auto [target, perturb] = build_masks(labels, config);

  AttackResult result;
  result.original_flow = estimate_flow(i1, i2, model);

  // noise keeps first-iteration gradients away from the |0| kink
  FlowField noisy_reference = result.original_flow;
  if (config.noise_sigma > 0.0) {
    Rng rng(config.rng_seed);
    for (double& x : noisy_reference.u.values) x += config.noise_sigma * rng.gaussian();
    for (double& x : noisy_reference.v.values) x += config.noise_sigma * rng.gaussian();
  }

  const double epsilon = epsilon_schedule(config.budget, config.step_estimate);
  Image current = i1;
  result.converged = false;

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const FlowField& reference = (iter == 1) ? noisy_reference : result.original_flow;
    const SignedGradient gradient =
        attack_gradient(current, i2, reference, target, config.alpha, model);
    Image stepped = apply_signed_step(current, gradient, perturb, epsilon,
                                      config.clamp_to_unit_interval);
    double mean = mean_abs_in_mask(stepped, i1, perturb);

    // a full step can jump the 5% stopping window; when it would, shrink
    // this step until the realized norm lands on the budget. The mean is
    // convex and continuous in the applied magnitude, so bisection on the
    // "still below budget" boundary converges onto it.
    const double before = result.iterations.empty()
                              ? 0.0
                              : result.iterations.back().mean_abs_perturbation;
    if (mean > 1.05 * config.budget && before < 0.95 * config.budget) {
      double lo = 0.0, hi = epsilon;
      for (int round = 0; round < 48; ++round) {
        const double mid = 0.5 * (lo + hi);
        const Image probe = apply_signed_step(current, gradient, perturb, mid,
                                              config.clamp_to_unit_interval);
        if (mean_abs_in_mask(probe, i1, perturb) > config.budget) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
      stepped = apply_signed_step(current, gradient, perturb, lo,
                                  config.clamp_to_unit_interval);
      mean = mean_abs_in_mask(stepped, i1, perturb);
    }

    current = std::move(stepped);
    IterationStats stats;
    stats.iter = iter;
    stats.loss_attack = gradient.loss_attack;
    stats.loss_consistency = gradient.loss_consistency;
    stats.loss_total = gradient.loss_total;
    stats.mean_abs_perturbation = mean;
    result.iterations.push_back(stats);
    result.final_mean_abs_perturbation = mean;
    if (mean >= 0.95 * config.budget && mean <= 1.05 * config.budget) {
      result.converged = true;
      break;
    }
  }

  result.perturbed_image = std::move(current);
  result.attacked_flow = estimate_flow(result.perturbed_image, i2, model);
  return result;
}

}  // namespace flowattack
