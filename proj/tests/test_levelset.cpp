#include "doctest.h"

#include <cmath>

#include "kl/levelset.hpp"

using namespace kl;

namespace {
Vec pt(double a, double b) { return (Vec(2) << a, b).finished(); }
}  // namespace

TEST_CASE("circle level of |x|^2") {
  const auto quad = zoo_entry("quadratic");
  const Box K = Box::cube(2, -1, 1);
  const LevelSample ls = sample_level(quad.field, 0.25, K, 4000);
  REQUIRE(ls.points.size() > 100);
  CHECK(ls.diagnostic.empty());
  double worst = 0.0;
  double min_angle_gap = 0.0;
  std::vector<double> angles;
  for (const Vec& x : ls.points) {
    worst = std::max(worst, std::abs(x.norm() - 0.5));
    CHECK(std::abs(quad.field.f(x) - 0.25) <= 1e-9 * 0.25);
    angles.push_back(std::atan2(x[1], x[0]));
  }
  CHECK(worst <= 1e-8);
  std::sort(angles.begin(), angles.end());
  for (std::size_t i = 1; i < angles.size(); ++i) min_angle_gap = std::max(min_angle_gap, angles[i] - angles[i - 1]);
  CHECK(min_angle_gap < 0.05);  // the whole circle is covered
  const auto [lo, hi] = gradient_extrema(quad.field, ls.points);
  CHECK(lo == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("level above max f is empty with a diagnostic") {
  const auto quad = zoo_entry("quadratic");
  const LevelSample ls = sample_level(quad.field, 5.0, Box::cube(2, -1, 1), 1000);
  CHECK(ls.points.empty());
  CHECK(ls.diagnostic.find("above") != std::string::npos);
  CHECK_THROWS_AS(sample_level(quad.field, 0.0, Box::cube(2, -1, 1), 10), Error);
}

TEST_CASE("two components of x1^2 = 0.04") {
  const auto e = field_from_definition("dimension = 2\nbox = -1 1 -1 1\nf = x^2\n");
  const LevelSample ls = sample_level(e.field, 0.04, Box::cube(2, -1, 1), 2000);
  bool left = false, right = false;
  for (const Vec& x : ls.points) {
    if (std::abs(x[0] - 0.2) <= 1e-6) right = true;
    if (std::abs(x[0] + 0.2) <= 1e-6) left = true;
  }
  CHECK(left);
  CHECK(right);
}

TEST_CASE("gradient extrema on the exp-product levels include the frontier of K") {
  const auto e = zoo_entry("exp_product");
  for (double t : {0.1, 0.01, 1e-4}) {
    const LevelSample ls = sample_level(e.field, t, Box::cube(2, -1, 1), 3000);
    const auto [lo, hi] = gradient_extrema(e.field, ls.points);
    CHECK(lo * lo == doctest::Approx(4 * t / std::exp(1.0) + t * t).epsilon(1e-7));
    CHECK(hi * hi == doctest::Approx(4 * t * std::exp(1.0) + t * t).epsilon(1e-7));
  }
  const auto [a, b] = gradient_extrema(e.field, {pt(0.3, 0.2)});
  CHECK(a == b);
  CHECK_THROWS_AS(gradient_extrema(e.field, {}), Error);
}

TEST_CASE("profile of |x|^2") {
  const auto quad = zoo_entry("quadratic");
  const LevelSetProfile p = build_profile(quad.field, Box::cube(2, -1, 1), 0.5, 10, 2000, 2);
  REQUIRE(p.levels.size() == 10);
  CHECK_FALSE(p.unreliable);
  for (std::size_t j = 0; j < p.levels.size(); ++j) {
    const auto& s = p.levels[j];
    CHECK(s.t == doctest::Approx(0.5 * std::exp2(-static_cast<double>(j))));
    CHECK(std::abs(s.alpha - 1.0 / (2 * std::sqrt(s.t))) <= 1e-6);
    CHECK(std::abs(s.beta - 1.0 / (2 * std::sqrt(s.t))) <= 1e-6);
    CHECK(s.coverage > 0.0);
  }
  const auto a = p.alpha_curve();
  CHECK(a.front().first < a.back().first);
}

TEST_CASE("distance and exp-product profiles") {
  const auto d = zoo_entry("distance_point");
  const LevelSetProfile pd = build_profile(d.field, Box::cube(2, -1, 1), 0.5, 8, 1000);
  for (const auto& s : pd.levels) {
    CHECK(s.alpha == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.beta == doctest::Approx(1.0).epsilon(1e-9));
  }
  const auto e = zoo_entry("exp_product");
  const LevelSetProfile pe = build_profile(e.field, Box::cube(2, -1, 1), 0.25, 8, 2000);
  for (const auto& s : pe.levels) {
    CHECK(s.alpha == doctest::Approx(1.0 / std::sqrt(4 * s.t / std::exp(1.0) + s.t * s.t)).epsilon(1e-7));
  }
}

TEST_CASE("radial fields are gradient-homogeneous on levels") {
  for (const char* name : {"disk", "transnormal_4t", "disk_quartic"}) {
    CAPTURE(name);
    const auto e = zoo_entry(name);
    const LevelSetProfile p = build_profile(e.field, e.field.domain.box, 0.5, 8, 1500);
    for (const auto& s : p.levels) {
      REQUIRE_FALSE(s.empty());
      CHECK(std::abs(s.min_grad - s.max_grad) <= 1e-6 * std::max(1.0, s.max_grad));
      CHECK(s.alpha / s.beta >= 1.0);
    }
  }
}

TEST_CASE("doubling the budget refines extrema monotonically") {
  for (const char* name : {"exp_product", "morse_saddle", "morse_bowl_metric"}) {
    CAPTURE(name);
    const auto e = zoo_entry(name);
    const Box K = Box::cube(2, -0.8, 0.9);
    for (double t : {0.05, 0.002}) {
      double prev_min = kInf, prev_max = 0.0;
      std::vector<Vec> prev_pts;
      for (int budget : {40, 80, 160, 320, 640}) {
        const LevelSample ls = sample_level(e.field, t, K, budget);
        REQUIRE(ls.points.size() >= prev_pts.size());
        for (std::size_t i = 0; i < prev_pts.size(); ++i) CHECK(ls.points[i] == prev_pts[i]);
        const auto [lo, hi] = gradient_extrema(e.field, ls.points);
        CHECK(lo <= prev_min);
        CHECK(hi >= prev_max);
        CHECK(lo <= hi);
        prev_min = lo;
        prev_max = hi;
        prev_pts = ls.points;
      }
    }
  }
}

TEST_CASE("missing levels make the profile unreliable") {
  const auto quad = zoo_entry("quadratic");
  const LevelSetProfile p = build_profile(quad.field, Box::cube(2, 0.5, 1.0), 1.0, 10, 500);
  CHECK(p.empty_levels() >= 8);
  CHECK(p.unreliable);
  const LevelSetProfile none = build_profile(quad.field, Box::cube(2, -1, 1), 0.5, 5, 0);
  CHECK(none.unreliable);
}

TEST_CASE("polished extrema match a dense parametric scan") {
  // The saddle's level x^2 - y^2 = 2t has min |grad f| = sqrt(2t) at y = 0, far below the
  // continuation step once t is small.
  const auto saddle = zoo_entry("morse_saddle");
  const Box K = Box::cube(2, -1, 1);
  for (double t : {1e-3, 1e-6, 1e-9}) {
    CAPTURE(t);
    const LevelSample ls = sample_level(saddle.field, t, K, 400);
    REQUIRE_FALSE(ls.points.empty());
    const auto [lo, hi] = gradient_extrema(saddle.field, ls.points);
    Vec arg = ls.points.front();
    for (const Vec& x : ls.points) {
      if (saddle.field.grad(x).norm() < saddle.field.grad(arg).norm()) arg = x;
    }
    const Vec x = refine_extremum(saddle.field, t, K, arg, true);
    CHECK(std::abs(saddle.field.f(x) - t) <= 1e-9 * t);
    CHECK(saddle.field.grad(x).norm() == doctest::Approx(std::sqrt(2 * t)).epsilon(1e-6));
    CHECK(saddle.field.grad(x).norm() <= lo);
    (void)hi;
  }

  // Metric bowl: f = |x|^2 / 2 has circular levels; scan the circle densely for |g^{-1} x|.
  const auto bowl = zoo_entry("morse_bowl_metric");
  const double t = 0.02, r = std::sqrt(2 * t);
  double scan_lo = kInf, scan_hi = 0.0;
  for (int k = 0; k < 200000; ++k) {
    const double a = 2 * M_PI * k / 200000.0;
    const double g = bowl.field.grad(pt(r * std::cos(a), r * std::sin(a))).norm();
    scan_lo = std::min(scan_lo, g);
    scan_hi = std::max(scan_hi, g);
  }
  const LevelSetProfile prof = build_profile(bowl.field, K, t, 1, 50);
  CHECK(prof.levels[0].min_grad == doctest::Approx(scan_lo).epsilon(1e-8));
  CHECK(prof.levels[0].max_grad == doctest::Approx(scan_hi).epsilon(1e-8));

  const auto ring = zoom_ring(saddle.field, 1e-4, K, pt(std::sqrt(2e-4), 0.0), 0.01, 10);
  CHECK(ring.size() == 20);
  for (const Vec& y : ring) CHECK(std::abs(saddle.field.f(y) - 1e-4) <= 1e-13);
}
