#include "doctest.h"

#include <cmath>
#include <random>

#include "kl/field.hpp"

using namespace kl;

namespace {

Vec pt(double a, double b) { return (Vec(2) << a, b).finished(); }

Vec central_difference(const ScalarField& fld, const Vec& x) {
  Vec d(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6;
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    d[i] = (fld.f(a) - fld.f(b)) / (2 * h);
  }
  return d;
}

// Psi'(f) |grad f| over random points of U with f in (1e-10, rho).
double worst_certificate_margin(const FieldZooEntry& e, std::mt19937_64& rng, int samples) {
  const KLCertificate& c = *e.known_certificate;
  double worst = kInf;
  for (int found = 0, tries = 0; found < samples && tries < 100 * samples; ++tries) {
    const Vec x = c.U.uniform(rng);
    const double v = e.field.f(x);
    if (!(v > 1e-10 && v < c.rho)) continue;
    ++found;
    worst = std::min(worst, c.psi.derivative(v) * e.field.grad(x).norm() - 1.0);
  }
  return worst;
}

}  // namespace

TEST_CASE("distance to a point, p = 1") {
  const auto e = make_distance_power_field(1.0, Primitive::point(Vec::Zero(2)), Box::cube(2, -5, 5));
  CHECK(e.field.f(pt(3, 4)) == doctest::Approx(5.0));
  const Vec g = e.field.grad(pt(3, 4));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  CHECK(g.norm() == doctest::Approx(1.0));
  CHECK(e.field.c1_only_off_zero);
}

TEST_CASE("squared distance to the unit disk") {
  const auto e = make_distance_power_field(2.0, Primitive::disk(Vec::Zero(2), 1.0), Box::cube(2, -3, 3));
  CHECK(e.field.f(pt(2, 0)) == doctest::Approx(1.0));
  const Vec g = e.field.grad(pt(2, 0));
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(0.0));
  const Vec fd = central_difference(e.field, pt(2, 0));
  CHECK((g - fd).norm() < 1e-6);
  CHECK(e.field.f(pt(0.3, 0.2)) == 0.0);
  CHECK(e.field.grad(pt(0.3, 0.2)).norm() == 0.0);
  CHECK_FALSE(e.field.c1_only_off_zero);
}

TEST_CASE("degenerate primitives are relabeled, misfits rejected") {
  const auto e = make_distance_power_field(2.0, Primitive::circle(Vec::Zero(2), 0.0), Box::cube(2, -1, 1));
  CHECK(e.notes.find("relabeled") != std::string::npos);
  CHECK(e.field.f(pt(0.3, 0.4)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(make_distance_power_field(2.0, Primitive::disk(Vec::Zero(2), 2.0), Box::cube(2, -1, 1)),
                  Error);
  CHECK_THROWS_AS(make_distance_power_field(0.0, Primitive::point(Vec::Zero(2)), Box::cube(2, -1, 1)), Error);
  const auto seg = make_distance_power_field(1.0, Primitive::segment(pt(-0.5, 0), pt(0.5, 0)), Box::cube(2, -1, 1));
  CHECK(seg.field.f(pt(0.2, 0.3)) == doctest::Approx(0.3));
  CHECK(seg.field.f(pt(0.9, 0.3)) == doctest::Approx(0.5));
}

TEST_CASE("morse saddle with identity metric") {
  const auto e = make_morse_field(1, Box::cube(2, -1, 1));
  CHECK(e.field.f(pt(1, 0)) == doctest::Approx(0.5));
  const Vec g = e.field.grad(pt(1, 0));
  CHECK(g.squaredNorm() == doctest::Approx(2.0 * e.field.f(pt(1, 0))));
  CHECK(e.field.f(pt(0, 1)) == 0.0);
  CHECK(e.field.grad(pt(0, 1)).norm() == 0.0);
  // Psi = sqrt(2t/C) with C = 0.99.
  CHECK(e.known_certificate->psi.value(0.5) == doctest::Approx(std::sqrt(1.0 / 0.99)));
  const auto bowl = make_morse_field(2, Box::cube(2, -1, 1));
  CHECK(bowl.field.grad(pt(0.3, 0.4)).norm() == doctest::Approx(std::sqrt(2 * bowl.field.f(pt(0.3, 0.4)))));
}

TEST_CASE("morse metric: gradient through g^{-1}, spectral bound, rejection") {
  Mat g(2, 2);
  g << 4.0, 0.0, 0.0, 1.0;
  const auto e = make_morse_field(2, Box::cube(2, -1, 1), [g](const Vec&) { return g; });
  const Vec x = pt(0.4, -0.2);
  const Vec grad = e.field.grad(x);
  CHECK(grad[0] == doctest::Approx(0.1));
  CHECK(grad[1] == doctest::Approx(-0.2));
  CHECK(morse_spectral_bound(2, Box::cube(2, -1, 1), [g](const Vec&) { return g; }) == doctest::Approx(1.0 / 16));
  std::mt19937_64 rng(1);
  CHECK_NOTHROW(e.field.validate(rng));

  Mat bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_WITH_AS(make_morse_field(2, Box::cube(2, -1, 1), [bad](const Vec&) { return bad; }),
                       doctest::Contains("positive-definite at"), Error);
}

TEST_CASE("transnormal b(t) = 4t reproduces |x|^2") {
  const auto e = make_transnormal_field([](double t) { return 4 * t; }, Box::cube(2, -1, 1));
  for (double r : {1e-4, 0.013, 0.25, 0.5, 0.9, 1.3}) {
    CHECK(e.field.f(pt(r, 0)) == doctest::Approx(r * r).epsilon(1e-9));
  }
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Vec x = e.field.domain.box.uniform(rng);
    const double v = e.field.f(x);
    const double b = 4 * v;
    CHECK(std::abs(e.field.grad(x).squaredNorm() - b) <= 1e-6 * (1 + b));
  }
  CHECK(e.known_certificate->psi.value(0.25) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("transnormal b = 1 is the distance function; negative b is rejected") {
  const auto e = make_transnormal_field([](double) { return 1.0; }, Box::cube(2, -1, 1));
  CHECK(e.field.f(pt(0.3, 0.4)) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(e.field.grad(pt(0.3, 0.4)).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(make_transnormal_field([](double t) { return t - 0.1; }, Box::cube(2, -1, 1)), Error);
}

TEST_CASE("compose_with_psi") {
  const auto quad = zoo_entry("quadratic");
  const auto ident = Profile1D::power_law(1.0, 1.0, 4.0);
  const ScalarField same = compose_with_psi(quad.field, ident);
  CHECK(same.f(pt(0.3, 0.4)) == doctest::Approx(0.25));
  const ScalarField dist = compose_with_psi(quad.field, Profile1D::power_law(1.0, 0.5, 4.0));
  CHECK(dist.f(pt(0.3, 0.4)) == doctest::Approx(0.5));
  CHECK(dist.grad(pt(0.3, 0.4)).norm() == doctest::Approx(1.0));
  const auto d = make_distance_power_field(1.0, Primitive::point(Vec::Zero(2)), Box::cube(2, -1, 1));
  const ScalarField sq = compose_with_psi(d.field, Profile1D::power_law(1.0, 2.0, 4.0));
  const Vec g = sq.grad(pt(0.3, 0.4));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  const auto wiggly = Profile1D::tabulated({0.1, 0.2, 0.3}, {0.1, 0.05, 0.3}, {1, 1, 1});
  CHECK_THROWS_AS(compose_with_psi(quad.field, wiggly), Error);
}

TEST_CASE("field definition text") {
  const auto e = field_from_definition(
      "name = bowl\ndimension = 2\nbox = -1 1 -1 1\nf = x^2 + 3*y^2\nmetric = 2, 0; 0, 1\npsi = 1 0.5\n");
  CHECK(e.name == "bowl");
  const Vec g = e.field.grad(pt(0.5, 0.5));
  CHECK(g[0] == doctest::Approx(0.5));
  CHECK(g[1] == doctest::Approx(3.0));
  REQUIRE(e.known_certificate);
  CHECK(e.known_certificate->source == CertSource::user);
  CHECK_THROWS_WITH_AS(field_from_definition("dimension = 2\nbox = -1 1 -1 1\nf = x - 2\n"),
                       doctest::Contains("f < 0"), Error);
  CHECK_THROWS_WITH_AS(field_from_definition("dimension = 2\nbox = -1 1\nf = x^2\n"), doctest::Contains("box"),
                       Error);
  CHECK_THROWS_AS(load_field("no_such_field"), Error);
}

TEST_CASE("zoo: gradients match central differences") {
  for (const auto& e : field_zoo()) {
    CAPTURE(e.name);
    std::mt19937_64 rng(11);
    int checked = 0;
    for (int tries = 0; checked < 200 && tries < 20000; ++tries) {
      const Vec x = e.field.domain.box.uniform(rng);
      if (e.field.f(x) <= 1e-4) continue;
      if (!e.field.domain.box.contains(x, -1e-5)) continue;
      ++checked;
      const Vec fd = central_difference(e.field, x);
      const Vec expected = e.field.metric ? Vec(e.field.metric(x).llt().solve(fd)) : fd;
      CHECK((e.field.grad(x) - expected).norm() <= 1e-4 * std::max(1.0, expected.norm()));
    }
    CHECK(checked == 200);
    std::mt19937_64 vrng(3);
    CHECK_NOTHROW(e.field.validate(vrng));
  }
}

TEST_CASE("zoo: known certificates hold") {
  for (const auto& e : field_zoo()) {
    CAPTURE(e.name);
    REQUIRE(e.known_certificate);
    CHECK_NOTHROW(e.known_certificate->validate());
    std::mt19937_64 rng(5);
    CHECK(worst_certificate_margin(e, rng, 2000) >= -1e-6);
  }
}

TEST_CASE("zoo: log-gradient cloud lies above the exponent line") {
  for (const auto& e : field_zoo()) {
    if (!e.known_exponent) continue;
    CAPTURE(e.name);
    const double theta = *e.known_exponent;
    std::mt19937_64 rng(9);
    std::vector<std::pair<double, double>> cloud;
    for (int tries = 0; cloud.size() < 400 && tries < 4000000; ++tries) {
      const Vec x = e.field.domain.box.uniform(rng);
      const double v = e.field.f(x);
      if (v < 1e-6 || v > 1e-2) continue;
      cloud.emplace_back(std::log(v), std::log(e.field.grad(x).norm()));
    }
    REQUIRE(cloud.size() >= 100);
    // C from the certificate: Psi'(t) C t^theta >= 1 gives |grad f| >= C f^theta.
    const Profile1D& psi = e.known_certificate->psi;
    double logC = kInf;
    for (const auto& [lf, lg] : cloud) logC = std::min(logC, -std::log(psi.derivative(std::exp(lf))) - theta * lf);
    for (const auto& [lf, lg] : cloud) CHECK(lg >= theta * lf + logC - 1e-6);
    CHECK(std::isfinite(logC));
  }
}
