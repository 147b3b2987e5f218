#pragma once

#include <vector>

#include "flowattack/types.hpp"

namespace flowattack {

// Mean L2 end-point error between two flows over the set pixels of a mask.
double epe_masked(const FlowField& va, const FlowField& vb, const Mask& mask);

struct CategoryStat {
  Category id = Category::Void;
  int count = 0;
  bool present = false;
  double mean_epe = 0.0;  // meaningful only when present
};

struct CategoryReport {
  std::vector<CategoryStat> per_category;  // all categories except void
  double on_target_epe = 0.0;
  int on_target_count = 0;
  // primary aggregate: pixel-weighted over all non-target, non-void pixels
  double off_target_epe = 0.0;
  int off_target_count = 0;
  // secondary aggregate: unweighted mean of per-category means
  double off_target_epe_category_mean = 0.0;
};

CategoryReport per_category_report(const FlowField& attacked, const FlowField& original,
                                   const LabelMap& labels, Category target);

struct PerturbationNorms {
  double mean_abs_in_mask = 0.0;  // over in-mask pixel-channels
  double max_abs = 0.0;
  double out_of_mask_max = 0.0;
};

PerturbationNorms perturbation_norms(const Image& perturbed, const Image& original,
                                     const Mask& perturb_mask);

}  // namespace flowattack
