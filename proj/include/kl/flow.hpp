#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kl/field.hpp"

namespace kl {

/// Parametrizations of the descending flow:
/// time x' = -grad f, arclength x' = -grad f/|grad f|, level x' = -grad f/df(grad f).
enum class Clock { time, arclength, level };
enum class Termination { reached_zero_locus, left_domain, step_limit, gradient_vanished };

std::string to_string(Clock c);
std::string to_string(Termination t);
Clock clock_from_string(const std::string& s);

struct IntegratorControls {
  double atol = 1e-10;
  double rtol = 1e-8;
  double f_stop = 1e-10;
  /// Scaled by max(1, box diameter).
  double gradient_floor = 1e-12;
  /// Largest parameter gap between samples; 0 picks a clock-dependent default.
  double max_step = 0.0;
  long max_steps = 200000;
  /// Newton-correct onto f = f(x0) - s after each level-clock step.
  bool project_level = true;
  /// Parameters (in the integration clock) the integrator must land on exactly.
  std::vector<double> output_params;
};

/// One point of a trajectory. `arclen`, `time` and `level` are the three clock parameters,
/// integrated alongside x; `level` is the decrease f(x0) - f.
struct Sample {
  double s = 0.0;
  Vec x;
  double f = 0.0;
  double arclen = 0.0;
  double time = 0.0;
  double level = 0.0;
  Vec grad;
  double grad_norm = 0.0;
  double slope = 0.0;  // df(grad f)
};

double clock_value(const Sample& smp, Clock c);
/// d(clock c) / d(physical time) at the sample.
double clock_rate(const Sample& smp, Clock c);

struct Trajectory {
  Clock clock = Clock::time;
  std::vector<Sample> samples;
  Termination termination = Termination::step_limit;
  std::optional<Vec> limit_point;
  /// Parameter gap cap the samples were produced under.
  double max_gap = kInf;

  const Sample& front() const { return samples.front(); }
  const Sample& back() const { return samples.back(); }
  /// Achieved forward extent of the parameter (the numerical omega+).
  double extent() const { return samples.back().s - samples.front().s; }
  /// Cubic Hermite interpolation of the point / of another clock's value at parameter s.
  Vec point_at(double s) const;
  double clock_at(Clock c, double s) const;
};

Trajectory integrate(const ScalarField& field, const Vec& x0, Clock clock,
                     const IntegratorControls& controls = {});

std::vector<Trajectory> integrate_many(const ScalarField& field, const std::vector<Vec>& starts,
                                       Clock clock, const IntegratorControls& controls, int workers);

/// Re-indexes samples by theta(s) = int h^{-1}, i.e. by the target clock's integrated column.
/// Throws if theta is not strictly increasing or the input is sparser than its gap cap.
Trajectory reparametrize_clock(const Trajectory& traj, Clock target);

/// Total arc length; requires termination at the zero locus or the domain frontier.
double trajectory_length(const Trajectory& traj);

struct SafeSetQuery {
  Vec point;
  double f = 0.0;
  double g_value = 0.0;
  double boundary_margin = 0.0;
  bool in_V = false;
};

SafeSetQuery safe_set_test(const ScalarField& field, const Vec& x0, const KLCertificate& cert);

/// Level-clock endpoints at f_stop = 1e-6, 1e-8, 1e-10 with vector Aitken extrapolation.
/// Throws if x0 is outside V or the flow stops before reaching the zero locus.
Vec retract(const ScalarField& field, const Vec& x0, const KLCertificate& cert,
            const IntegratorControls& controls = {});

/// nu+(x) = int_0^{f(x)} 1/|grad f| along the trajectory, extrapolated like `retract`.
std::vector<double> length_function(const ScalarField& field, const std::vector<Vec>& points,
                                    const KLCertificate& cert, const IntegratorControls& controls = {},
                                    int workers = 1);

/// Arclength trajectory with the limit point (as in `retract`) appended as the final sample.
Trajectory limit_curve(const ScalarField& field, const Vec& x0, const IntegratorControls& controls = {});

}  // namespace kl
