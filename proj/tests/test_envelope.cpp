#include "doctest.h"

#include <cmath>
#include <map>
#include <random>

#include "kl/envelope.hpp"

using namespace kl;

namespace {

std::vector<double> uniform_grid(double lo, double hi, int n) {
  std::vector<double> g;
  for (int i = 0; i <= n; ++i) g.push_back(lo + (hi - lo) * i / n);
  return g;
}

// Continuous base plus isolated values at `marks`, which are also put on the grid.
SemicontinuousProfile comb(SemiKind kind, std::function<double(double)> base, std::map<double, double> marks,
                           std::vector<double> grid) {
  SemicontinuousProfile p;
  p.r0 = 1.0;
  p.kind = kind;
  for (const auto& [t, v] : marks) grid.push_back(t);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  p.grid = grid;
  p.evaluator = [base, marks](double t) {
    const auto it = marks.find(t);
    return it != marks.end() ? it->second : base(t);
  };
  return p;
}

SemicontinuousProfile random_comb(SemiKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double amp = 0.5 * U(rng), freq = 1.0 + 20.0 * U(rng), phase = 6.0 * U(rng);
  auto base = [=](double t) { return 1.0 + amp * std::sin(freq * t + phase); };
  std::map<double, double> marks;
  const int n = 3 + static_cast<int>(8 * U(rng));
  for (int i = 0; i < n; ++i) {
    // Half the marks sit on dyadic points, where pieces meet.
    const double t = i % 2 ? std::exp2(-1 - static_cast<int>(6 * U(rng))) : 0.01 + 0.98 * U(rng);
    const double b = base(t);
    marks[t] = kind == SemiKind::lower ? b * (0.1 + 0.8 * U(rng)) : b * (1.2 + 3.0 * U(rng));
  }
  return comb(kind, base, marks, geometric_grid(1.0, 1e-3, 16));
}

}  // namespace

TEST_CASE("moreau envelope closed forms") {
  const auto s = uniform_grid(0.5, 1.0, 500);
  SemicontinuousProfile one;
  one.grid = s;
  one.evaluator = [](double) { return 1.0; };
  for (double lambda : {1e-8, 1e-3, 1.0, 1e6}) {
    for (const auto& [t, e] : moreau_envelope(one, lambda, 0.5, 1.0)) CHECK(e == 1.0);
  }

  // Single dip: cup 0.5 + (x - 0.75)^2 / (2 lambda), half-width sqrt(2 lambda 0.5) = 0.01.
  const double lambda = 1e-4;
  const auto dip = comb(SemiKind::lower, [](double) { return 1.0; }, {{0.75, 0.5}}, uniform_grid(0.5, 1.0, 2000));
  for (const auto& [t, e] : moreau_envelope(dip, lambda, 0.5, 1.0)) {
    const double expect = std::min(1.0, 0.5 + (t - 0.75) * (t - 0.75) / (2.0 * lambda));
    CHECK(e == doctest::Approx(expect).epsilon(1e-14));
  }

  // Large lambda: the envelope sits within (b-a)^2 / (2 lambda) of min u.
  auto wave = comb(SemiKind::lower, [](double t) { return 2.0 + std::sin(9.0 * t); }, {}, uniform_grid(0.2, 0.9, 700));
  double umin = kInf;
  for (double t : wave.grid) umin = std::min(umin, wave.evaluator(t));
  for (double big : {0.49, 10.0, 1e4}) {
    for (const auto& [t, e] : moreau_envelope(wave, big, 0.2, 0.9)) {
      CHECK(e >= umin - 1e-15);
      CHECK(e <= umin + 0.49 / (2.0 * big) + 1e-15);
    }
  }

  CHECK_THROWS_AS(moreau_envelope(one, 0.0, 0.5, 1.0), Error);
  one.kind = SemiKind::upper;
  CHECK_THROWS_AS(moreau_envelope(one, 1.0, 0.5, 1.0), Error);
}

TEST_CASE("envelope of a constant is the constant") {
  for (SemiKind kind : {SemiKind::lower, SemiKind::upper}) {
    const auto p = comb(kind, [](double) { return 1.0; }, {}, geometric_grid(1.0, 1e-4, 8));
    const auto r = build_envelope(p);
    for (double w : r.w) CHECK(w == 1.0);
    CHECK(r.l1_gap == 0.0);
    CHECK(r.side_violation == 0.0);
    CHECK_FALSE(r.partial);
  }
}

TEST_CASE("lower comb with dips at dyadic points") {
  std::map<double, double> dips;
  for (int j = 1; j <= 5; ++j) dips[std::exp2(-j)] = 0.5;
  const auto p = comb(SemiKind::lower, [](double) { return 1.0; }, dips, uniform_grid(1e-3, 1.0, 4000));
  EnvelopeOptions o;
  o.defect_scale = 1e-3;
  const auto r = build_envelope(p, o);
  for (const auto& [t, u] : dips) CHECK(r.value(t) <= 0.5);
  CHECK(r.side_violation <= 1e-9);
  CHECK(r.max_stitch_jump <= 1e-9);
  CHECK(r.l1_gap <= 0.01);
  CHECK_FALSE(r.partial);
}

TEST_CASE("upper comb with spikes at dyadic points") {
  std::map<double, double> spikes;
  for (int j = 1; j <= 5; ++j) spikes[std::exp2(-j)] = 2.0;
  const auto p = comb(SemiKind::upper, [](double) { return 1.0; }, spikes, uniform_grid(1e-3, 1.0, 4000));
  const auto r = build_envelope(p);
  CHECK(r.ceiling == 4.0);
  for (const auto& [t, u] : spikes) CHECK(r.value(t) >= 2.0);
  CHECK(r.side_violation <= 1e-9);
  CHECK(r.max_stitch_jump <= 1e-9);
  CHECK(r.l1_gap <= M_PI * M_PI / 3.0);
  for (std::size_t i = 0; i < r.t.size(); ++i) CHECK(r.w[i] >= r.u[i]);
}

TEST_CASE("randomized combs keep one-sidedness and the L1 bound") {
  std::mt19937_64 rng(20240611);
  for (SemiKind kind : {SemiKind::lower, SemiKind::upper}) {
    for (int trial = 0; trial < 50; ++trial) {
      CAPTURE(to_string(kind));
      CAPTURE(trial);
      const auto p = random_comb(kind, rng);
      const auto r = build_envelope(p);
      CHECK(r.side_violation <= 1e-9);
      CHECK(r.max_stitch_jump <= 1e-9);
      CHECK(r.l1_gap <= M_PI * M_PI / 3.0 + 0.01);
      for (const auto& pc : r.pieces) {
        CHECK(pc.m > 0.0);
        CHECK(pc.m <= 1.0);
      }
    }
  }
}

TEST_CASE("continuity modulus shrinks under grid refinement") {
  std::mt19937_64 rng(7);
  for (SemiKind kind : {SemiKind::lower, SemiKind::upper}) {
    for (int trial = 0; trial < 10; ++trial) {
      CAPTURE(trial);
      const auto p = random_comb(kind, rng);
      double prev = kInf;
      for (int refine : {0, 2, 4, 6}) {
        EnvelopeOptions o;
        o.refine = refine;
        const auto r = build_envelope(p, o);
        CHECK(r.side_violation <= 1e-9);
        CHECK(r.continuity_modulus < prev);
        prev = r.continuity_modulus;
      }
    }
  }
}

TEST_CASE("l1 gap is nonincreasing as the halving budget doubles") {
  std::mt19937_64 rng(99);
  for (SemiKind kind : {SemiKind::lower, SemiKind::upper}) {
    for (int trial = 0; trial < 50; ++trial) {
      CAPTURE(trial);
      const auto p = random_comb(kind, rng);
      double prev = kInf;
      for (int budget : {1, 2, 4, 8, 16, 32}) {
        EnvelopeOptions o;
        o.budget = budget;
        o.defect_scale = 1e-6;
        const auto r = build_envelope(p, o);
        CHECK(r.l1_gap <= prev + 1e-12);
        prev = r.l1_gap;
      }
    }
  }
}

TEST_CASE("stitching records and partial results") {
  std::mt19937_64 rng(3);
  const auto p = random_comb(SemiKind::lower, rng);
  EnvelopeOptions o;
  o.budget = 0;
  o.defect_scale = 1e-9;
  const auto r = build_envelope(p, o);
  CHECK(r.partial);
  CHECK_FALSE(r.note.empty());
  for (const auto& pc : r.pieces) {
    CHECK(pc.halvings == 0);
    CHECK(pc.lambda == doctest::Approx((pc.a_hi - pc.a_lo) * (pc.a_hi - pc.a_lo)));
    CHECK(pc.a_hi == doctest::Approx(std::exp2(-pc.k)).epsilon(1e-15));
  }

  EnvelopeOptions f;
  f.resolution_floor = 0.1;
  const auto cut = build_envelope(p, f);
  CHECK(cut.t.front() >= 0.1);
  CHECK(cut.pieces.size() == 4);
}

TEST_CASE("integrable majorant for alpha") {
  Curve root;
  for (double t : geometric_grid(1.0, 1e-10, 8)) root.emplace_back(t, 0.5 / std::sqrt(t));
  EnvelopeOptions exact;
  exact.defect_scale = 0.0;
  const auto m = integrable_majorant_for_alpha(root, 1.0, exact);
  CHECK(m.verdict.verdict == Verdict::integrable);
  double worst = 0.0;
  for (const auto& [t, a] : root) worst = std::max(worst, std::abs(m.a(t) - 2.0 * std::sqrt(t)));
  for (double t : {3e-12, 1e-9, 2.2e-7, 0.0031, 0.27, 0.93})
    worst = std::max(worst, std::abs(m.a(t) - 2.0 * std::sqrt(t)));
  CHECK(worst <= 1e-6);

  // One upward spike: a drops below 1/alpha only near it.
  Curve spiked = root;
  const std::size_t is = spiked.size() / 2;
  const double ts = spiked[is].first;
  spiked[is].second *= 5.0;
  const auto ms = integrable_majorant_for_alpha(spiked, 1.0, exact);
  CHECK(ms.a(ts) <= 1.0 / spiked[is].second * (1.0 + 1e-12));
  for (const auto& [t, al] : spiked) {
    CHECK(ms.a(t) <= 1.0 / al * (1.0 + 1e-12));
    if (std::abs(std::log(t / ts)) > 0.2) CHECK(ms.a(t) == doctest::Approx(1.0 / al).epsilon(1e-12));
  }

  Curve flat;
  for (double t : geometric_grid(0.5, 1e-8, 4)) flat.emplace_back(t, 3.0);
  const auto mc = integrable_majorant_for_alpha(flat, 0.5, {});
  for (double t : {1e-9, 1e-5, 0.1, 0.49}) CHECK(mc.a(t) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  Curve harmonic;
  for (double t : geometric_grid(1.0, 1e-10, 8)) harmonic.emplace_back(t, 1.0 / t);
  CHECK_THROWS_AS(integrable_majorant_for_alpha(harmonic, 1.0, {}), Error);
}

TEST_CASE("majorant from a measured level-set profile") {
  const auto e = zoo_entry("quadratic");
  const auto prof = build_profile(e.field, e.field.domain.box, 0.5, 24, 600, 1);
  const auto m = integrable_majorant_for_alpha(prof, {});
  for (const auto& [t, al] : prof.alpha_curve()) CHECK(m.a(t) * al <= 1.0 + 1e-12);
  const auto cert = build_psi_from_a(m.a, 0.5, e.field.domain.box);
  VerifyOptions vo;
  vo.samples = 500;
  CHECK(verify_certificate(e.field, cert, vo).worst_margin >= -1e-3);
}
