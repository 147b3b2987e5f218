#include "flowattack/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace flowattack {

double epe_masked(const FlowField& va, const FlowField& vb, const Mask& mask) {
  if (!va.u.same_shape(vb.u) || va.height() != mask.height || va.width() != mask.width) {
    throw std::invalid_argument("epe_masked: shape mismatch");
  }
  if (mask.count < 1) {
    throw std::invalid_argument("epe_masked: empty mask");
  }
  double acc = 0.0;
  for (size_t i = 0; i < mask.set.size(); ++i) {
    if (!mask.set[i]) continue;
    const double du = va.u.values[i] - vb.u.values[i];
    const double dv = va.v.values[i] - vb.v.values[i];
    acc += std::sqrt(du * du + dv * dv);
  }
  return acc / mask.count;
}

CategoryReport per_category_report(const FlowField& attacked, const FlowField& original,
                                   const LabelMap& labels, Category target) {
  if (attacked.height() != labels.height || attacked.width() != labels.width ||
      !attacked.u.same_shape(original.u)) {
    throw std::invalid_argument("per_category_report: shape mismatch");
  }

  CategoryReport report;
  double off_sum = 0.0;
  int off_count = 0;
  double off_cat_mean_sum = 0.0;
  int off_cat_present = 0;

  for (Category c : kAllCategories) {
    if (c == Category::Void) continue;
    CategoryStat stat;
    stat.id = c;
    double acc = 0.0;
    for (size_t i = 0; i < labels.ids.size(); ++i) {
      if (labels.ids[i] != static_cast<uint8_t>(c)) continue;
      const double du = attacked.u.values[i] - original.u.values[i];
      const double dv = attacked.v.values[i] - original.v.values[i];
      acc += std::sqrt(du * du + dv * dv);
      ++stat.count;
    }
    stat.present = stat.count > 0;
    if (stat.present) stat.mean_epe = acc / stat.count;

    if (c == target) {
      report.on_target_epe = stat.present ? stat.mean_epe : 0.0;
      report.on_target_count = stat.count;
    } else if (stat.present) {
      off_sum += acc;
      off_count += stat.count;
      off_cat_mean_sum += stat.mean_epe;
      ++off_cat_present;
    }
    report.per_category.push_back(stat);
  }

  report.off_target_count = off_count;
  report.off_target_epe = off_count > 0 ? off_sum / off_count : 0.0;
  report.off_target_epe_category_mean =
      off_cat_present > 0 ? off_cat_mean_sum / off_cat_present : 0.0;
  return report;
}

PerturbationNorms perturbation_norms(const Image& perturbed, const Image& original,
                                     const Mask& perturb_mask) {
  if (perturbed.height() != original.height() || perturbed.width() != original.width() ||
      perturbed.height() != perturb_mask.height || perturbed.width() != perturb_mask.width) {
    throw std::invalid_argument("perturbation_norms: shape mismatch");
  }
  PerturbationNorms norms;
  double in_sum = 0.0;
  long in_elems = 0;
  for (int c = 0; c < 3; ++c) {
    const Field2D& p = perturbed.channels[c];
    const Field2D& o = original.channels[c];
    for (size_t i = 0; i < p.size(); ++i) {
      const double d = std::fabs(p.values[i] - o.values[i]);
      norms.max_abs = std::max(norms.max_abs, d);
      if (perturb_mask.set[i]) {
        in_sum += d;
        ++in_elems;
      } else {
        norms.out_of_mask_max = std::max(norms.out_of_mask_max, d);
      }
    }
  }
  norms.mean_abs_in_mask = in_elems > 0 ? in_sum / in_elems : 0.0;
  return norms;
}

}  // namespace flowattack
