#include <doctest.h>

#include <cmath>

#include "flowattack/ttc.hpp"
#include "support.hpp"

using namespace flowattack;

namespace {

FlowField radial_expansion(int h, int w, double rate, double cx, double cy) {
  FlowField f(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      f.u.at(y, x) = rate * (x - cx);
      f.v.at(y, x) = rate * (y - cy);
    }
  }
  return f;
}

}  // namespace

TEST_CASE("ttc_from_flow: pure expansion gives TTC = 1/rate everywhere") {
  const FlowField flow = radial_expansion(32, 32, 0.1, 15.5, 15.5);
  for (int window : {3, 5, 7}) {
    const TTCMap map = ttc_from_flow(flow, window);
    CAPTURE(window);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        REQUIRE(map.valid[static_cast<size_t>(y) * 32 + x] == 1);
        CHECK(map.ttc.at(y, x) == doctest::Approx(10.0).epsilon(0.01));
      }
    }
  }
}

TEST_CASE("ttc_from_flow: translation and contraction are invalid") {
  FlowField translation(16, 16);
  for (double& v : translation.u.values) v = 1.5;
  const TTCMap t = ttc_from_flow(translation, 5);
  for (uint8_t v : t.valid) CHECK(v == 0);

  const FlowField contraction = radial_expansion(16, 16, -0.1, 8, 8);
  const TTCMap c = ttc_from_flow(contraction, 5);
  for (uint8_t v : c.valid) CHECK(v == 0);
}

TEST_CASE("ttc_from_flow: window validation") {
  const FlowField flow(16, 16);
  CHECK_THROWS_AS((void)ttc_from_flow(flow, 4), std::invalid_argument);
  CHECK_THROWS_AS((void)ttc_from_flow(flow, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)ttc_from_flow(flow, 17), std::invalid_argument);
}

TEST_CASE("ttc_error: identities and exact doubling") {
  const FlowField flow = radial_expansion(24, 24, 0.08, 12, 12);
  const TTCMap base = ttc_from_flow(flow, 5);
  CHECK(ttc_error(base, base).mean_relative_error == 0.0);
  CHECK(ttc_error(base, base).validity_churn == 0.0);

  TTCMap doubled = base;
  for (double& v : doubled.ttc.values) v *= 2.0;
  CHECK(ttc_error(doubled, base).mean_relative_error == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ttc_error: matches a per-pixel loop oracle and is scale invariant") {
  Rng rng(5);
  const FlowField orig = radial_expansion(24, 24, 0.08, 12, 12);
  FlowField attacked = orig;
  for (double& v : attacked.u.values) v += 0.01 * rng.gaussian();
  for (double& v : attacked.v.values) v += 0.01 * rng.gaussian();

  const TTCMap t_orig = ttc_from_flow(orig, 5);
  const TTCMap t_atk = ttc_from_flow(attacked, 5);
  const TTCErrorReport report = ttc_error(t_atk, t_orig);

  double acc = 0.0;
  int n = 0, churn = 0;
  for (size_t i = 0; i < t_orig.valid.size(); ++i) {
    if (t_orig.valid[i] != t_atk.valid[i]) ++churn;
    if (t_orig.valid[i] && t_atk.valid[i]) {
      acc += std::fabs(t_atk.ttc.values[i] - t_orig.ttc.values[i]) / t_orig.ttc.values[i];
      ++n;
    }
  }
  REQUIRE(n > 0);
  CHECK(report.mean_relative_error == doctest::Approx(acc / n).epsilon(1e-12));
  CHECK(report.jointly_valid == n);
  CHECK(report.validity_churn ==
        doctest::Approx(static_cast<double>(churn) / t_orig.valid.size()).epsilon(1e-12));

  TTCMap atk_scaled = t_atk, orig_scaled = t_orig;
  for (double& v : atk_scaled.ttc.values) v *= 3.5;
  for (double& v : orig_scaled.ttc.values) v *= 3.5;
  CHECK(ttc_error(atk_scaled, orig_scaled).mean_relative_error ==
        doctest::Approx(report.mean_relative_error).epsilon(1e-12));
}

TEST_CASE("ttc_error: rejects disjoint validity") {
  TTCMap a(8, 8), b(8, 8);
  a.valid[3] = 1;
  a.ttc.values[3] = 5.0;
  b.valid[4] = 1;
  b.ttc.values[4] = 5.0;
  CHECK_THROWS_AS((void)ttc_error(a, b), std::invalid_argument);
}

TEST_CASE("ttc_colormap: uniform map, neutral gray and monotone ramp") {
  TTCMap uniform(8, 8);
  for (size_t i = 0; i < uniform.valid.size(); ++i) {
    uniform.valid[i] = 1;
    uniform.ttc.values[i] = 12.0;
  }
  uniform.valid[10] = 0;
  const Image img = ttc_colormap(uniform);
  for (int c = 0; c < 3; ++c) {
    CHECK(img.channels[c].values[10] == 0.5);  // invalid pixel exact gray
    for (size_t i = 0; i < img.channels[c].size(); ++i) {
      if (i == 10) continue;
      CHECK(img.channels[c].values[i] == img.channels[c].values[0]);
    }
  }

  // smaller TTC -> strictly hotter (smaller) ramp coordinate
  const double lo = std::log(2.0), hi = std::log(50.0);
  double prev = -1.0;
  for (double ttc : {2.0, 5.0, 12.0, 30.0, 50.0}) {
    const double coord = ttc_ramp_coord(ttc, lo, hi);
    CHECK(coord > prev);
    prev = coord;
  }
}
