#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "kl/flow.hpp"

using namespace kl;

namespace {

Vec pt(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec pt1(double a) { return Vec::Constant(1, a); }

// f = x^2 on [-2, 2].
FieldZooEntry square_1d() {
  return make_distance_power_field(2.0, Primitive::point(Vec::Zero(1)), Box::cube(1, -2.0, 2.0));
}

void check_descent(const Trajectory& t) {
  for (std::size_t i = 1; i < t.samples.size(); ++i) {
    CHECK(t.samples[i].f < t.samples[i - 1].f + 1e-10);
    CHECK(t.samples[i].s > t.samples[i - 1].s);
  }
}

}  // namespace

TEST_CASE("time clock: x' = -2x") {
  IntegratorControls ctl;
  ctl.output_params = {0.25, 1.0};
  const Trajectory t = integrate(square_1d().field, pt1(1.0), Clock::time, ctl);
  CHECK(t.termination == Termination::reached_zero_locus);
  bool hit = false;
  for (const auto& s : t.samples) {
    if (s.s == 1.0) {
      hit = true;
      CHECK(std::abs(s.x[0] - std::exp(-2.0)) <= 1e-6);
    }
  }
  CHECK(hit);
  CHECK(std::abs(t.point_at(0.6)[0] - std::exp(-1.2)) <= 1e-6);
  CHECK(t.back().f == doctest::Approx(ctl.f_stop).epsilon(1e-6));
  check_descent(t);
}

TEST_CASE("level clock ends at s = f0 - f_stop") {
  IntegratorControls ctl;
  const Trajectory t = integrate(square_1d().field, pt1(1.0), Clock::level, ctl);
  CHECK(t.termination == Termination::reached_zero_locus);
  CHECK(t.back().s == doctest::Approx(1.0 - ctl.f_stop).epsilon(1e-15));
  CHECK(std::abs(t.back().f - ctl.f_stop) <= 1e-14);
  CHECK(t.extent() == doctest::Approx(1.0 - ctl.f_stop));
  for (const auto& s : t.samples) CHECK(std::abs(s.f - (1.0 - s.s)) <= 1e-8);
}

TEST_CASE("disk field flows radially onto the unit circle") {
  const auto disk = zoo_entry("disk");
  for (Clock c : {Clock::time, Clock::arclength, Clock::level}) {
    CAPTURE(to_string(c));
    const Trajectory t = integrate(disk.field, pt(2.0, 0.0), c);
    REQUIRE(t.limit_point);
    CHECK((*t.limit_point - pt(1.0, 0.0)).norm() <= 1e-6);
    CHECK(trajectory_length(t) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(trajectory_length(t) <= disk.known_certificate->psi.value(1.0) + 1e-6);
    check_descent(t);
  }
}

TEST_CASE("arclength clock: chord sums match the parameter") {
  IntegratorControls ctl;
  ctl.max_step = 0.004;
  for (const auto& [name, x0] : {std::pair{"disk", pt(1.7, -1.1)}, std::pair{"morse_saddle", pt(0.9, 0.2)},
                                 std::pair{"exp_product", pt(0.8, 0.6)}}) {
    CAPTURE(name);
    const Trajectory t = integrate(zoo_entry(name).field, x0, Clock::arclength, ctl);
    REQUIRE(t.termination == Termination::reached_zero_locus);
    double chords = 0.0;
    for (std::size_t i = 1; i < t.samples.size(); ++i) chords += (t.samples[i].x - t.samples[i - 1].x).norm();
    CHECK(std::abs(chords - t.extent()) <= 1e-6);
  }
}

TEST_CASE("terminations: frontier, critical point, start on Z") {
  const auto shifted = field_from_definition("dimension = 1\nbox = -1 1\nf = (x + 2)^2\n");
  const Trajectory out = integrate(shifted.field, pt1(0.5), Clock::time);
  CHECK(out.termination == Termination::left_domain);
  CHECK(out.back().x[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(trajectory_length(out) == doctest::Approx(1.5).epsilon(1e-6));

  const auto lifted = field_from_definition("dimension = 1\nbox = -1 1\nf = 1 + x^2\n");
  CHECK(integrate(lifted.field, pt1(0.0), Clock::time).termination == Termination::gradient_vanished);
  const Trajectory stall = integrate(lifted.field, pt1(0.5), Clock::time);
  CHECK(stall.termination != Termination::reached_zero_locus);
  CHECK_THROWS_AS(trajectory_length(stall), Error);

  IntegratorControls ctl;
  const Trajectory z = integrate(square_1d().field, pt1(std::sqrt(ctl.f_stop)), Clock::time, ctl);
  CHECK(z.samples.size() == 1);
  CHECK(trajectory_length(z) == 0.0);
}

TEST_CASE("theta: level to arclength for f = x^2") {
  IntegratorControls ctl;
  for (int i = 0; i < 50; ++i) ctl.output_params.push_back(0.99 * i / 49.0);
  const Trajectory lvl = integrate(square_1d().field, pt1(1.0), Clock::level, ctl);
  const Trajectory arc = reparametrize_clock(lvl, Clock::arclength);
  CHECK(arc.clock == Clock::arclength);
  double worst = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < lvl.samples.size(); ++i) {
    const double t = lvl.samples[i].s;
    if (std::find(ctl.output_params.begin(), ctl.output_params.end(), t) == ctl.output_params.end()) continue;
    ++hits;
    worst = std::max(worst, std::abs(arc.samples[i].s - (1.0 - std::sqrt(1.0 - t))));
  }
  CHECK(hits == 50);
  CHECK(worst <= 1e-6);
  CHECK(lvl.clock_at(Clock::arclength, 0.75) == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("reparametrization round trips") {
  const auto disk = zoo_entry("exp_product");
  const Trajectory t = integrate(disk.field, pt(0.7, -0.4), Clock::time);
  const Trajectory same = reparametrize_clock(t, Clock::time);
  for (std::size_t i = 0; i < t.samples.size(); ++i) CHECK(same.samples[i].s == t.samples[i].s);
  const Trajectory back = reparametrize_clock(reparametrize_clock(t, Clock::level), Clock::time);
  for (std::size_t i = 0; i < t.samples.size(); ++i) CHECK(std::abs(back.samples[i].s - t.samples[i].s) <= 1e-6);
  // Interpolated round trip at off-sample parameters.
  const Trajectory lvl = reparametrize_clock(t, Clock::level);
  for (double s : {0.05, 0.3, 0.9, 2.0}) {
    const double theta = t.clock_at(Clock::level, s);
    CHECK(std::abs(lvl.clock_at(Clock::time, theta) - s) <= 1e-5 * (1 + s));
  }
}

TEST_CASE("reparametrization rejects corrupted input") {
  Trajectory t = integrate(square_1d().field, pt1(1.0), Clock::time);
  t.samples[3].arclen = t.samples[1].arclen;
  CHECK_THROWS_WITH_AS(reparametrize_clock(t, Clock::arclength), doctest::Contains("not strictly increasing"), Error);
  Trajectory sparse = integrate(square_1d().field, pt1(1.0), Clock::level);
  sparse.max_gap = 1e-6;
  CHECK_THROWS_AS(reparametrize_clock(sparse, Clock::time), Error);
}

TEST_CASE("lengths obey the certificate bound") {
  const auto quad = zoo_entry("quadratic");
  const Trajectory t = integrate(quad.field, pt(0.5, 0.0), Clock::level);
  CHECK(trajectory_length(t) == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(trajectory_length(t) <= quad.known_certificate->psi.value(0.25) + 1e-6);
  // The looser Psi(t) = sqrt(2t) bound.
  CHECK(trajectory_length(t) <= std::sqrt(2 * 0.25));
}

TEST_CASE("safe set") {
  const auto strip = zoo_entry("strip");
  const auto& cert = *strip.known_certificate;
  const SafeSetQuery deep = safe_set_test(strip.field, pt(0.0, 0.1), cert);
  CHECK(deep.in_V);
  CHECK(deep.g_value == doctest::Approx(0.1));
  CHECK(deep.boundary_margin == doctest::Approx(1.9));
  const SafeSetQuery high = safe_set_test(strip.field, pt(0.0, 1.9), cert);
  CHECK(high.g_value == doctest::Approx(1.9));
  CHECK(high.boundary_margin == doctest::Approx(0.1));
  CHECK_FALSE(high.in_V);
  KLCertificate capped = cert;
  capped.rho = 0.005;
  CHECK_FALSE(safe_set_test(strip.field, pt(0.0, 0.1), capped).in_V);
}

TEST_CASE("retraction") {
  const auto disk = zoo_entry("disk");
  const Vec x0 = pt(1.5, 1.5);
  CHECK((retract(disk.field, x0, *disk.known_certificate) - x0 / x0.norm()).norm() <= 1e-6);
  const Vec inside = pt(0.2, -0.5);
  CHECK(retract(disk.field, inside, *disk.known_certificate) == inside);
  const auto strip = zoo_entry("strip");
  for (const Vec& p : {pt(1.3, 0.4), pt(-3.0, 0.5), pt(0.0, 0.9)}) {
    const Vec r = retract(strip.field, p, *strip.known_certificate);
    CHECK((r - pt(p[0], 0.0)).norm() <= 1e-6);
  }
  CHECK_THROWS_WITH_AS(retract(strip.field, pt(0.0, 1.9), *strip.known_certificate), doctest::Contains("safe set"),
                       Error);
}

TEST_CASE("length function") {
  const auto disk = zoo_entry("disk");
  const std::vector<Vec> pts{pt(1.95, 0.0), pt(1.2, 0.9), pt(-1.05, 0.0)};
  const auto nu = length_function(disk.field, pts, *disk.known_certificate, {}, 2);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(nu[i] - (pts[i].norm() - 1.0)) <= 1e-6);

  const auto sq = make_distance_power_field(2.0, Primitive::point(Vec::Zero(1)), Box::cube(1, -3.0, 3.0));
  CHECK(std::abs(length_function(sq.field, {pt1(1.0)}, *sq.known_certificate)[0] - 1.0) <= 1e-6);
  CHECK(length_function(sq.field, {pt1(1e-5)}, *sq.known_certificate)[0] <= 1.1e-5);

  IntegratorControls fine;
  fine.f_stop = 1e-12;
  const Trajectory t = integrate(disk.field, pts[1], Clock::level, fine);
  CHECK(std::abs(nu[1] - trajectory_length(t)) <= 1e-5);
}

TEST_CASE("limit curve") {
  const auto disk = zoo_entry("disk");
  const Trajectory c = limit_curve(disk.field, pt(2.0, 0.0));
  CHECK(c.clock == Clock::arclength);
  for (const auto& s : c.samples) {
    CHECK(std::abs(s.x[0] - (2.0 - s.s)) <= 1e-6);
    CHECK(std::abs(s.x[1]) <= 1e-9);
  }
  CHECK((c.back().x - pt(1.0, 0.0)).norm() <= 1e-6);
  CHECK(c.back().s == doctest::Approx(1.0).epsilon(1e-7));
  for (std::size_t i = 1; i < c.samples.size(); ++i) {
    const double speed = (c.samples[i].x - c.samples[i - 1].x).norm() / (c.samples[i].s - c.samples[i - 1].s);
    CHECK(speed <= 1.0 + 1e-9);
  }
}

TEST_CASE("level exactness and length bound across the zoo") {
  std::mt19937_64 rng(2024);
  for (const auto& e : field_zoo()) {
    CAPTURE(e.name);
    const auto& cert = *e.known_certificate;
    int done = 0;
    for (int tries = 0; done < 10 && tries < 10000; ++tries) {
      const Vec x = e.field.domain.box.uniform(rng);
      if (!safe_set_test(e.field, x, cert).in_V || e.field.f(x) <= 1e-8) continue;
      ++done;
      const Trajectory t = integrate(e.field, x, Clock::level);
      REQUIRE(t.termination == Termination::reached_zero_locus);
      for (const auto& s : t.samples) CHECK(std::abs(s.f - (t.front().f - s.s)) <= 1e-8);
      CHECK(trajectory_length(t) <= cert.psi.value(t.front().f) + 1e-6);
      CHECK(t.extent() == doctest::Approx(t.front().f - 1e-10).epsilon(1e-12));
    }
    CHECK(done == 10);
  }
}

TEST_CASE("retraction continuity probe on the disk field") {
  const auto disk = zoo_entry("disk");
  const auto& cert = *disk.known_certificate;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> radius(1.0, 2.0), angle(0.0, 2 * M_PI);
  std::vector<Vec> pts;
  for (int i = 0; i < 12; ++i) {
    const double r = radius(rng), a = angle(rng);
    pts.push_back(pt(r * std::cos(a), r * std::sin(a)));
  }
  std::vector<Vec> R;
  for (const auto& p : pts) R.push_back(retract(disk.field, p, cert));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double bound = (pts[i] - pts[j]).norm() + cert.psi.value(disk.field.f(pts[i])) +
                           cert.psi.value(disk.field.f(pts[j]));
      CHECK((R[i] - R[j]).norm() <= bound + 1e-9);
    }
  }
}
