#include "doctest.h"

#include <cmath>

#include "kl/config.hpp"
#include "kl/expr.hpp"

using kl::Expr;
using kl::Vec;

namespace {
Vec pt(double a, double b) { return (Vec(2) << a, b).finished(); }
}  // namespace

TEST_CASE("arithmetic and precedence") {
  const Expr e = Expr::parse("1 + 2*x^2 - y/4", 2);
  CHECK(e.eval(pt(3.0, 8.0)) == doctest::Approx(1 + 18 - 2));
  CHECK(Expr::parse("-x^2", 1).eval(Vec::Constant(1, 3.0)) == doctest::Approx(-9.0));
  CHECK(Expr::parse("2^3^2", 1).eval(Vec::Zero(1)) == doctest::Approx(512.0));
  CHECK(Expr::parse("x1*x4", 4).eval((Vec(4) << 2, 0, 0, 5).finished()) == doctest::Approx(10.0));
  CHECK(Expr::parse("pi", 1).eval(Vec::Zero(1)) == doctest::Approx(M_PI));
}

TEST_CASE("symbolic derivatives match finite differences") {
  const char* cases[] = {"x^2*exp(y)", "sqrt(1 + x^2 + y^2)", "log(2 + x*y) / (1 + y^2)",
                         "max(x, y)^2", "min(x^2, y)", "abs(x - y)^3", "x^y"};
  const Vec p = pt(0.7, 0.3);
  for (const char* text : cases) {
    CAPTURE(text);
    const Expr e = Expr::parse(text, 2);
    for (int i = 0; i < 2; ++i) {
      Vec a = p, b = p;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      const double fd = (e.eval(a) - e.eval(b)) / 2e-6;
      CHECK(e.derivative(i).eval(p) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("nonsmooth primitives differentiate along the active branch") {
  const Expr e = Expr::parse("max(x, 2*y) + abs(y)", 2);
  CHECK(e.derivative(0).eval(pt(3.0, 1.0)) == 1.0);
  CHECK(e.derivative(1).eval(pt(3.0, 1.0)) == 1.0);
  CHECK(e.derivative(1).eval(pt(1.0, 1.0)) == 3.0);
  CHECK(e.derivative(1).eval(pt(1.0, -1.0)) == -1.0);
  CHECK(Expr::parse("abs(x)", 1).derivative(0).eval(Vec::Zero(1)) == 0.0);
}

TEST_CASE("parse errors name the column") {
  CHECK_THROWS_WITH_AS(Expr::parse("x + q", 2), doctest::Contains("column 5"), kl::Error);
  CHECK_THROWS_WITH_AS(Expr::parse("(x + y", 2), doctest::Contains("expected ')'"), kl::Error);
  CHECK_THROWS_AS(Expr::parse("x3", 2), kl::Error);
  CHECK_THROWS_AS(Expr::parse("x +", 1), kl::Error);
  CHECK_THROWS_AS(Expr::parse("sqrt 2", 1), kl::Error);
}

TEST_CASE("config parsing reports line numbers") {
  const auto c = kl::Config::parse("# header\nname = disk\nbox = -1 1, -2 2\nbudget = 40\n", "run.cfg");
  CHECK(c.get_string("name") == "disk");
  CHECK(c.get_doubles("box") == std::vector<double>{-1, 1, -2, 2});
  CHECK(c.get_int("budget") == 40);
  CHECK(c.get_double("rho", 0.5) == 0.5);
  CHECK_THROWS_WITH_AS(kl::Config::parse("a = 1\nbroken line\n", "run.cfg"), doctest::Contains("run.cfg:2"),
                       kl::Error);
  CHECK_THROWS_WITH_AS(kl::Config::parse("a = 1\na = 2\n"), doctest::Contains("duplicate"), kl::Error);
  CHECK_THROWS_WITH_AS(c.get_double("name"), doctest::Contains("run.cfg:2"), kl::Error);
}
