#pragma once

// Shared helpers for the test suites: independent finite-difference oracles,
// random field generators and the small-sample statistics used by the
// statistical acceptance checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "flowattack/field.hpp"
#include "flowattack/types.hpp"

namespace testsupport {

using flowattack::Field2D;
using flowattack::Rng;

inline Field2D random_field(Rng& rng, int h, int w, double lo, double hi) {
  Field2D f(h, w);
  for (double& v : f.values) v = rng.uniform(lo, hi);
  return f;
}

// keeps |v| >= margin so abs kinks stay away from finite-difference steps
inline void nudge_from_zero(Field2D& f, double margin) {
  for (double& v : f.values) {
    if (v >= 0.0 && v < margin) v = margin;
    if (v < 0.0 && v > -margin) v = -margin;
  }
}

// central finite differences of a scalar functional, element by element
inline Field2D finite_difference_gradient(
    const std::function<double(const std::vector<Field2D>&)>& fn,
    std::vector<Field2D> inputs, size_t which, double step) {
  Field2D grad(inputs[which].height, inputs[which].width);
  for (size_t i = 0; i < grad.size(); ++i) {
    const double saved = inputs[which].values[i];
    inputs[which].values[i] = saved + step;
    const double fp = fn(inputs);
    inputs[which].values[i] = saved - step;
    const double fm = fn(inputs);
    inputs[which].values[i] = saved;
    grad.values[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

inline double max_abs(const Field2D& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::fabs(v));
  return m;
}

// infinity-norm relative error between a gradient and its oracle
inline double relative_gradient_error(const Field2D& got, const Field2D& expected) {
  double scale = max_abs(expected);
  if (scale == 0.0) scale = 1.0;
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::fabs(got.values[i] - expected.values[i]));
  }
  return worst / scale;
}

// one-sided exact binomial sign test: P(X >= wins | n, 1/2)
inline double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double log_c = 0.0;
    for (int i = 0; i < k; ++i) {
      log_c += std::log(static_cast<double>(n - i)) - std::log(static_cast<double>(i + 1));
    }
    p += std::exp(log_c - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i + 1);
  return r;
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1) / 2.0;
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (rx[i] - mean) * (ry[i] - mean);
    dx += (rx[i] - mean) * (rx[i] - mean);
    dy += (ry[i] - mean) * (ry[i] - mean);
  }
  return num / std::sqrt(dx * dy);
}

// exact one-sided permutation p-value for negative rank correlation,
// P(rho_perm <= rho_observed); n must stay small
inline double spearman_negative_p(const std::vector<double>& x, const std::vector<double>& y) {
  const double observed = spearman_rho(x, y);
  std::vector<size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), size_t{0});
  int total = 0, at_most = 0;
  std::vector<double> shuffled(y.size());
  do {
    for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = y[perm[i]];
    ++total;
    if (spearman_rho(x, shuffled) <= observed + 1e-12) ++at_most;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(at_most) / total;
}

}  // namespace testsupport
