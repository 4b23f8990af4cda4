#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kl/field.hpp"
#include "kl/flow.hpp"
#include "kl/levelset.hpp"

namespace kl {

/// Ascending (t, u(t)) samples of a positive 1D profile.
using Curve = std::vector<std::pair<double, double>>;

// ---------------------------------------------------------------------------------------------
// Certificate verification

struct VerifyOptions {
  int samples = 2000;
  double f_stop = 1e-10;
  double tolerance = 1e-6;
  std::uint64_t seed = 1;
  /// Rejection-sampling attempts per requested sample before giving up.
  int attempts_per_sample = 1000;
  std::size_t max_listed_failures = 16;
};

struct VerifyReport {
  int checked = 0;
  /// min over checked points of psi'(f)|grad f| - 1.
  double worst_margin = kInf;
  Vec worst_point;
  int n_failures = 0;
  std::vector<Vec> failures;
  bool passed = false;
};

/// Checks psi'(f(x)) |grad f(x)| >= 1 - tolerance at random points of U with f in (f_stop, rho).
VerifyReport verify_certificate(const ScalarField& field, const KLCertificate& cert,
                                const VerifyOptions& options = {});

// ---------------------------------------------------------------------------------------------
// Integrability of profiles near 0

enum class Verdict { integrable, divergent, inconclusive };
std::string to_string(Verdict v);

struct VerdictOptions {
  /// Dead zone below 1 for the tail exponent q of u ~ c t^{-q}.
  double margin = 0.05;
  /// q >= 1 - divergence_slack counts as divergent: q = 1 itself is not integrable and a fit of
  /// an exact harmonic tail lands within this slack.
  double divergence_slack = 0.01;
  /// Relative agreement required between the integral on the grid and on every other point.
  double refinement_tol = 0.02;
  int min_tail_points = 8;
};

struct VerdictResult {
  Verdict verdict = Verdict::inconclusive;
  /// int_0^rho u; +inf when divergent, NaN when the tail could not be fitted.
  double integral = 0.0;
  double tail_exponent = 0.0;  // q
  double tail_coef = 0.0;      // c
  int tail_points = 0;
  std::string note;
};

/// Fits u ~ c t^{-q} by least squares in log-log over the smallest decade of t (at least
/// `min_tail_points` points) and integrates with exact power-law cells plus the fitted tail.
VerdictResult integrability_verdict(const Curve& curve, double rho, const VerdictOptions& options = {});

/// int_0^upper u with per-cell power-law interpolation; below the first point the first cell's
/// power law continues to 0 (+inf if that exponent is <= -1).
double powerlaw_integral(const Curve& curve, double upper);

// ---------------------------------------------------------------------------------------------
// Exponent fit

struct ExponentFit {
  double theta = 0.0;
  /// Support constant: min over the cloud of |grad f| / f^theta.
  double C = 0.0;
  /// exp of the quantile-regression intercept.
  double C_quantile = 0.0;
  double r2 = 0.0;
  int n_points = 0;
  /// Attached when theta < 1: psi(t) = t^{1-theta} / (C (1 - theta)).
  std::optional<KLCertificate> certificate;
  std::string note;
};

struct FitOptions {
  double quantile = 0.01;
  double f_stop = 1e-10;
  /// Cloud levels rho 2^{-j/2}, 0 <= j < levels, each sampled with `budget` points.
  int levels = 40;
  int budget = 300;
  /// Rings of points around each level's polished minimizer of |grad f| (see zoom_ring).
  int zoom_rings = 40;
  int workers = 1;
};

/// Lower supporting line of the cloud (log f, log |grad f|) by quantile regression. The cloud is
/// stratified over levels in (f_stop, rho).
ExponentFit fit_lojasiewicz_exponent(const ScalarField& field, const Box& K, double rho,
                                     const FitOptions& options = {});

/// Quantile regression y ~ a + b x at quantile tau; returns (a, b).
std::pair<double, double> quantile_line(const std::vector<double>& x, const std::vector<double>& y,
                                        double tau);

// ---------------------------------------------------------------------------------------------
// Psi from a gradient floor a(f)

struct PsiOptions {
  double t_min = 1e-14;
  int per_octave = 8;
};

/// Psi(t) = int_0^t 1/a. Values by tanh-sinh on [0, t_min] and Gauss-Kronrod per grid cell;
/// psi' is exactly 1/a. Throws if int 1/a is judged divergent.
KLCertificate build_psi_from_a(const std::function<double(double)>& a, double rho, const Box& U,
                               const PsiOptions& options = {});

// ---------------------------------------------------------------------------------------------
// Classification

enum class PointVerdict { good, bad, ugly, inconclusive };
std::string to_string(PointVerdict v);

struct PointClass {
  Vec point;
  bool simple_nondegenerate = false;
  /// Sampled min |grad f| off the zero locus minus the gradient floor.
  double witness_margin = 0.0;
  PointVerdict verdict = PointVerdict::inconclusive;
  VerdictResult alpha;
  VerdictResult beta;
  double alpha_integral = kInf;
  double beta_integral = kInf;
  std::optional<ExponentFit> fitted_exponent;
  std::string note;
};

struct ClassifyOptions {
  int levels = 24;
  int budget = 2000;
  int workers = 1;
  double f_stop = 1e-10;
  double gradient_floor = 1e-12;
  int scan_samples = 4000;
  std::uint64_t seed = 1;
  bool fit_exponent = true;
  VerdictOptions verdict;
  FitOptions fit;
};

/// Trichotomy from precomputed alpha and beta curves.
PointClass classify_profiles(const Curve& alpha, const Curve& beta, double rho,
                             const VerdictOptions& options = {});

/// Simple-nondegeneracy scan, level-set profile on K and the trichotomy.
PointClass classify_point(const ScalarField& field, const Vec& p, const Box& K, double rho,
                          const ClassifyOptions& options = {});

/// Same as classify_point, returning the profile it was built from.
PointClass classify_point(const ScalarField& field, const Vec& p, const Box& K, double rho,
                          const ClassifyOptions& options, LevelSetProfile& profile_out);

// ---------------------------------------------------------------------------------------------
// No-curve obstruction

struct NoCurveReport {
  /// int_0^rho 1/b judged divergent, so the obstruction applies.
  bool applicable = false;
  VerdictResult b_verdict;
  bool speed_ok = false;
  bool hypotheses_met = false;  // |grad f| <= b(f) on the samples
  double worst_hypothesis_excess = 0.0;
  /// |B(f(curve(t)))| <= |t - t0| at all samples, B(u) = int_{u0}^u 1/b.
  bool bound_holds = false;
  double worst_bound_excess = 0.0;
  bool approaches_zero = false;
  bool contradiction = false;
  double t0 = 0.0;
  double u0 = 0.0;
  std::string diagnostic;
};

NoCurveReport no_curve_diagnostic(const ScalarField& field, const std::function<double(double)>& b,
                                  const Trajectory& curve, double rho);

// ---------------------------------------------------------------------------------------------
// One-dimensional oracle

struct Oracle1D {
  /// (t, alpha(t)) with alpha = (f1d^{-1})'.
  Curve alpha;
  /// Tabulated inverse (t, f1d^{-1}(t)).
  Curve inverse;
  double integral(double upper) const { return powerlaw_integral(alpha, upper); }
  double inverse_at(double t) const;
};

/// Alpha profile of a strictly increasing f1d on [0, eps] by inverse interpolation on a geometric
/// grid. Throws on non-monotone input.
Oracle1D oracle_1d(const std::function<double(double)>& f1d, double eps, int per_octave = 16,
                   double x_min_ratio = 1e-10);

}  // namespace kl
