#include "kl/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace kl {

std::string to_string(Clock c) {
  switch (c) {
    case Clock::time: return "time";
    case Clock::arclength: return "arclength";
    case Clock::level: return "level";
  }
  return "unknown";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::reached_zero_locus: return "reached_zero_locus";
    case Termination::left_domain: return "left_domain";
    case Termination::step_limit: return "step_limit";
    case Termination::gradient_vanished: return "gradient_vanished";
  }
  return "unknown";
}

Clock clock_from_string(const std::string& s) {
  if (s == "time") return Clock::time;
  if (s == "arclength") return Clock::arclength;
  if (s == "level") return Clock::level;
  throw Error("unknown clock '" + s + "' (expected time, arclength or level)");
}

double clock_value(const Sample& smp, Clock c) {
  switch (c) {
    case Clock::time: return smp.time;
    case Clock::arclength: return smp.arclen;
    case Clock::level: return smp.level;
  }
  return 0.0;
}

double clock_rate(const Sample& smp, Clock c) {
  switch (c) {
    case Clock::time: return 1.0;
    case Clock::arclength: return smp.grad_norm;
    case Clock::level: return smp.slope;
  }
  return 0.0;
}

namespace {

std::size_t interval_index(const std::vector<Sample>& ss, double s) {
  if (ss.size() < 2) return 0;
  std::size_t lo = 0, hi = ss.size() - 1;
  if (s <= ss.front().s) return 0;
  if (s >= ss.back().s) return ss.size() - 2;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    (ss[mid].s <= s ? lo : hi) = mid;
  }
  return lo;
}

// Cubic Hermite basis on [0,1] scaled by interval width h.
struct Hermite {
  double h00, h10, h01, h11;
  Hermite(double u, double h) {
    const double u2 = u * u, u3 = u2 * u;
    h00 = 2 * u3 - 3 * u2 + 1;
    h10 = (u3 - 2 * u2 + u) * h;
    h01 = -2 * u3 + 3 * u2;
    h11 = (u3 - u2) * h;
  }
};

}  // namespace

Vec Trajectory::point_at(double s) const {
  if (samples.size() == 1) return samples.front().x;
  const std::size_t i = interval_index(samples, s);
  const Sample& a = samples[i];
  const Sample& b = samples[i + 1];
  const double h = b.s - a.s;
  if (h <= 0.0) return a.x;
  const double ra = clock_rate(a, clock), rb = clock_rate(b, clock);
  const Vec da = ra > 0.0 ? Vec(-a.grad / ra) : Vec(Vec::Zero(a.x.size()));
  const Vec db = rb > 0.0 ? Vec(-b.grad / rb) : Vec(Vec::Zero(b.x.size()));
  const Hermite w(std::clamp((s - a.s) / h, 0.0, 1.0), h);
  return w.h00 * a.x + w.h10 * da + w.h01 * b.x + w.h11 * db;
}

double Trajectory::clock_at(Clock c, double s) const {
  if (samples.size() == 1) return clock_value(samples.front(), c);
  const std::size_t i = interval_index(samples, s);
  const Sample& a = samples[i];
  const Sample& b = samples[i + 1];
  const double h = b.s - a.s;
  if (h <= 0.0) return clock_value(a, c);
  const double da = clock_rate(a, c) / clock_rate(a, clock);
  const double db = clock_rate(b, c) / clock_rate(b, clock);
  const Hermite w(std::clamp((s - a.s) / h, 0.0, 1.0), h);
  return w.h00 * clock_value(a, c) + w.h10 * da + w.h01 * clock_value(b, c) + w.h11 * db;
}

namespace {

Sample make_sample(const ScalarField& field, const Vec& x, double arclen, double time, double level) {
  Sample smp;
  smp.x = x;
  smp.f = field.f(x);
  smp.grad = field.grad(x);
  smp.grad_norm = smp.grad.norm();
  smp.slope = field.slope(x, smp.grad);
  smp.arclen = arclen;
  smp.time = time;
  smp.level = level;
  return smp;
}

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

class Stepper {
 public:
  Stepper(const ScalarField& field, Clock clock, double floor)
      : field_(field), clock_(clock), n_(field.dim()), floor_(floor) {}

  // State y = (x, arclen, time, level); derivatives are with respect to the stepper's clock.
  bool rhs(const Vec& y, Vec& dy) const {
    const Vec x = y.head(n_);
    const Vec g = field_.grad(x);
    const double gn = g.norm();
    const double sl = field_.slope(x, g);
    if (!(gn > floor_) || !(sl > 0.0)) return false;
    const double rate = clock_ == Clock::time ? 1.0 : (clock_ == Clock::arclength ? gn : sl);
    dy.resize(n_ + 3);
    dy.head(n_) = -g / rate;
    dy[n_] = gn / rate;
    dy[n_ + 1] = 1.0 / rate;
    dy[n_ + 2] = sl / rate;
    return true;
  }

  // One DP5(4) step; k1 is the derivative at y. Returns false if a stage hit a critical point.
  bool step(const Vec& y, const Vec& k1, double h, Vec& y_new, Vec& k7, Vec& err) const {
    Vec k2, k3, k4, k5, k6;
    if (!rhs(y + h * a21 * k1, k2)) return false;
    if (!rhs(y + h * (a31 * k1 + a32 * k2), k3)) return false;
    if (!rhs(y + h * (a41 * k1 + a42 * k2 + a43 * k3), k4)) return false;
    if (!rhs(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), k5)) return false;
    if (!rhs(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), k6)) return false;
    y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    if (!rhs(y_new, k7)) return false;
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    return true;
  }

 private:
  const ScalarField& field_;
  Clock clock_;
  int n_;
  double floor_;
};

double error_norm(const Vec& err, const Vec& y, const Vec& y_new, double atol, double rtol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
    acc += (err[i] / sc) * (err[i] / sc);
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

Vec pack(const Sample& s) {
  const auto n = s.x.size();
  Vec y(n + 3);
  y.head(n) = s.x;
  y[n] = s.arclen;
  y[n + 1] = s.time;
  y[n + 2] = s.level;
  return y;
}

// Integrates from `start` (s = its own clock column) until f reaches f_target or another
// termination; appends accepted samples after `start`.
Termination run(const ScalarField& field, const Sample& start, Clock clock, const IntegratorControls& ctl,
                double f_target, double floor, std::vector<Sample>& out) {
  const int n = field.dim();
  const Box& box = field.domain.box;
  Stepper stepper(field, clock, floor);
  // Level clock: f = f_ref - level holds exactly along the flow.
  const double f_ref = start.f + start.level;
  const double s_end = clock == Clock::level ? start.level + (start.f - f_target) : kInf;

  double max_step = ctl.max_step;
  if (max_step <= 0.0) {
    max_step = clock == Clock::level ? std::max(start.f, 1e-300) / 16.0
                                     : (clock == Clock::arclength ? box.diameter() / 32.0 : kInf);
  }
  std::vector<double> outputs;
  for (double p : ctl.output_params) {
    if (p > clock_value(start, clock) && p < s_end) outputs.push_back(p);
  }
  std::sort(outputs.begin(), outputs.end());
  std::size_t next_out = 0;

  Sample cur = start;
  cur.s = clock_value(cur, clock);
  Vec y = pack(cur);
  Vec k1;
  if (!stepper.rhs(y, k1)) return cur.f <= f_target ? Termination::reached_zero_locus
                                                    : Termination::gradient_vanished;
  double h = clock == Clock::level ? 0.05 * (s_end - cur.s)
                                   : 0.01 * box.diameter() / std::max(k1.head(n).norm(), 1e-300);
  double err_prev = 1e-4;
  int shrink_streak = 0;
  long steps = 0;
  Vec y_new, k7, err;

  for (;;) {
    if (++steps > ctl.max_steps) return Termination::step_limit;
    double hs = std::min(h, max_step);
    bool hits_output = false;
    if (next_out < outputs.size() && cur.s + hs >= outputs[next_out]) {
      hs = outputs[next_out] - cur.s;
      hits_output = true;
    }
    bool hits_end = false;
    if (cur.s + hs >= s_end) {
      hs = s_end - cur.s;
      hits_end = true;
    }

    auto shrink = [&](double factor) {
      h = hs * factor;
      return ++shrink_streak > 60;
    };

    if (!stepper.step(y, k1, hs, y_new, k7, err)) {
      if (shrink(0.25)) return Termination::gradient_vanished;
      continue;
    }
    const double en = error_norm(err, y, y_new, ctl.atol, ctl.rtol);
    if (!(en <= 1.0)) {
      if (shrink(std::max(0.2, 0.9 * std::pow(std::isfinite(en) ? en : 1e10, -0.2)))) {
        return Termination::step_limit;
      }
      continue;
    }
    Vec x_new = y_new.head(n);
    if (!box.contains(x_new)) {
      // Bisect the step length onto the frontier and stop there.
      double inside = 0.0, outside = hs;
      Vec y_in = y;
      for (int it = 0; it < 60 && outside - inside > 1e-13 * std::max(1.0, std::abs(cur.s)); ++it) {
        const double mid = 0.5 * (inside + outside);
        Vec y_mid, k_mid, e_mid;
        if (stepper.step(y, k1, mid, y_mid, k_mid, e_mid) && field.domain.box.contains(y_mid.head(n))) {
          inside = mid;
          y_in = y_mid;
        } else {
          outside = mid;
        }
      }
      if (inside > 0.0) {
        Sample edge = make_sample(field, y_in.head(n), y_in[n], y_in[n + 1], y_in[n + 2]);
        edge.s = cur.s + inside;
        if (edge.f < cur.f) out.push_back(edge);
      }
      return Termination::left_domain;
    }
    const double s_new = hits_end ? s_end : (hits_output ? outputs[next_out] : cur.s + hs);
    double f_new = field.f(x_new);
    if (clock == Clock::level && ctl.project_level) {
      const double target = f_ref - s_new;
      for (int it = 0; it < 4 && std::abs(f_new - target) > 1e-15 * std::max(1.0, f_ref); ++it) {
        const Vec g = field.grad(x_new);
        const double sl = field.slope(x_new, g);
        if (!(sl > 0.0)) break;
        x_new -= (f_new - target) / sl * g;
        f_new = field.f(x_new);
      }
      y_new.head(n) = x_new;
      y_new[n + 2] = s_new;
    }
    if (f_new > cur.f + 1e-12 * std::max(1.0, f_ref)) {
      if (shrink(0.5)) return Termination::step_limit;
      continue;
    }
    if (clock != Clock::level && f_new < f_target) {
      // Finish on the level clock so the endpoint lands on f_target exactly.
      return run(field, cur, Clock::level, IntegratorControls{ctl.atol, ctl.rtol, ctl.f_stop,
                                                              ctl.gradient_floor, 0.0, ctl.max_steps,
                                                              ctl.project_level, {}},
                 f_target, floor, out);
    }

    Sample next = make_sample(field, x_new, y_new[n], y_new[n + 1], y_new[n + 2]);
    next.s = s_new;
    if (clock == Clock::time) next.time = s_new;
    if (clock == Clock::arclength) next.arclen = s_new;
    if (clock == Clock::level) next.level = s_new;
    out.push_back(next);
    cur = next;
    y = pack(cur);
    if (hits_output) ++next_out;
    shrink_streak = 0;

    const double fac = en > 0.0 ? 0.9 * std::pow(en, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0) : 5.0;
    h = hs * std::clamp(fac, 0.2, 5.0);
    err_prev = std::max(en, 1e-4);

    if (hits_end || cur.f <= f_target) return Termination::reached_zero_locus;
    if (!(cur.grad_norm > floor)) return Termination::gradient_vanished;
    if (!stepper.rhs(y, k1)) return Termination::gradient_vanished;
  }
}

Vec aitken3(const Vec& p0, const Vec& p1, const Vec& p2) {
  const double d1 = (p0 - p1).norm(), d2 = (p1 - p2).norm();
  if (!(d2 > 1e-15)) return p2;
  const double r = d1 / d2;
  if (!(r > 1.5) || !std::isfinite(r)) return p2;
  return p2 + (p2 - p1) / (r - 1.0);
}

// Two further level-clock legs to f_stop/100 and f_stop/1e4, then Aitken on the three endpoints.
// Falls back to the endpoint itself if a leg stalls.
Vec extrapolated_limit(const ScalarField& field, const Sample& end, const IntegratorControls& ctl, double floor) {
  if (!(end.f > 0.0)) return end.x;
  std::vector<Vec> pts{end.x};
  Sample from = end;
  from.arclen = from.time = from.level = 0.0;
  for (double target : {end.f * 1e-2, end.f * 1e-4}) {
    std::vector<Sample> leg;
    IntegratorControls c = ctl;
    c.output_params.clear();
    c.max_step = 0.0;
    if (run(field, from, Clock::level, c, target, floor, leg) != Termination::reached_zero_locus || leg.empty()) {
      return end.x;
    }
    from = leg.back();
    from.arclen = from.time = from.level = 0.0;
    pts.push_back(from.x);
  }
  return aitken3(pts[0], pts[1], pts[2]);
}

}  // namespace

Trajectory integrate(const ScalarField& field, const Vec& x0, Clock clock, const IntegratorControls& controls) {
  if (x0.size() != field.dim()) throw Error("integrate: start point has wrong dimension");
  if (!field.domain.box.contains(x0)) throw Error("integrate: start point outside the box");
  const double floor = controls.gradient_floor * std::max(1.0, field.domain.box.diameter());
  Trajectory traj;
  traj.clock = clock;
  Sample start = make_sample(field, x0, 0.0, 0.0, 0.0);
  traj.samples.push_back(start);
  if (start.f <= controls.f_stop * (1.0 + 1e-12)) {
    traj.termination = Termination::reached_zero_locus;
    traj.limit_point = x0;
    return traj;
  }
  if (!(start.grad_norm > floor)) {
    traj.termination = Termination::gradient_vanished;
    return traj;
  }
  traj.termination = run(field, start, clock, controls, controls.f_stop, floor, traj.samples);
  // The final stretch may have run on the level clock; index everything by the requested clock.
  for (auto& smp : traj.samples) smp.s = clock_value(smp, clock);
  traj.max_gap = controls.max_step > 0.0 ? controls.max_step
                                         : (clock == Clock::level ? start.f / 16.0
                                                                  : (clock == Clock::arclength ? field.domain.box.diameter() / 32.0 : kInf));
  if (traj.termination == Termination::reached_zero_locus) {
    traj.limit_point = extrapolated_limit(field, traj.samples.back(), controls, floor);
  }
  return traj;
}

std::vector<Trajectory> integrate_many(const ScalarField& field, const std::vector<Vec>& starts, Clock clock,
                                       const IntegratorControls& controls, int workers) {
  std::vector<Trajectory> out(starts.size());
  parallel_for(starts.size(), workers, [&](std::size_t i) { out[i] = integrate(field, starts[i], clock, controls); });
  return out;
}

Trajectory reparametrize_clock(const Trajectory& traj, Clock target) {
  if (traj.samples.empty()) throw Error("reparametrize_clock: empty trajectory");
  for (std::size_t i = 1; i < traj.samples.size(); ++i) {
    if (traj.samples[i].s - traj.samples[i - 1].s > traj.max_gap * (1.0 + 1e-12)) {
      throw Error("reparametrize_clock: sample gap exceeds the trajectory's cap");
    }
  }
  Trajectory out = traj;
  out.clock = target;
  out.max_gap = kInf;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    Sample& smp = out.samples[i];
    smp.s = clock_value(smp, target);
    if (!std::isfinite(smp.s) || (i > 0 && !(smp.s > out.samples[i - 1].s))) {
      throw Error("reparametrize_clock: computed theta is not strictly increasing at sample " +
                  std::to_string(i));
    }
  }
  return out;
}

double trajectory_length(const Trajectory& traj) {
  if (traj.samples.empty()) throw Error("trajectory_length: empty trajectory");
  if (traj.termination != Termination::reached_zero_locus && traj.termination != Termination::left_domain) {
    throw Error("trajectory_length: trajectory terminated by " + to_string(traj.termination));
  }
  return traj.samples.back().arclen - traj.samples.front().arclen;
}

SafeSetQuery safe_set_test(const ScalarField& field, const Vec& x0, const KLCertificate& cert) {
  SafeSetQuery q;
  q.point = x0;
  q.f = field.f(x0);
  q.g_value = cert.psi.value(q.f);
  q.boundary_margin = field.domain.margin(x0);
  q.in_V = q.f < cert.rho && q.boundary_margin > q.g_value;
  return q;
}

namespace {

struct Chain {
  std::array<Vec, 3> points;
  std::array<double, 3> lengths{};
};

// Level-clock endpoints at three decreasing stop levels, each leg continuing the previous one.
Chain chained_endpoints(const ScalarField& field, const Vec& x0, const IntegratorControls& controls) {
  const double f0 = field.f(x0);
  const double top = std::min(1e-6, f0 * 1e-2);
  const std::array<double, 3> stops{top, top * 1e-2, top * 1e-4};
  Chain c;
  Vec x = x0;
  double len = 0.0;
  for (int k = 0; k < 3; ++k) {
    IntegratorControls ctl = controls;
    ctl.f_stop = stops[static_cast<std::size_t>(k)];
    ctl.output_params.clear();
    const Trajectory t = integrate(field, x, Clock::level, ctl);
    if (t.termination != Termination::reached_zero_locus) {
      throw Error("not simple nondegenerate along trajectory: flow ended by " + to_string(t.termination) +
                  " at f = " + std::to_string(t.back().f));
    }
    x = t.back().x;
    len += t.back().arclen;
    c.points[static_cast<std::size_t>(k)] = x;
    c.lengths[static_cast<std::size_t>(k)] = len;
  }
  return c;
}

Vec aitken(const std::array<Vec, 3>& p) { return aitken3(p[0], p[1], p[2]); }

double aitken(const std::array<double, 3>& v) {
  const double d1 = v[1] - v[0], d2 = v[2] - v[1];
  if (!(d2 > 1e-15)) return v[2];
  const double r = d1 / d2;
  if (!(r > 1.5) || !std::isfinite(r)) return v[2];
  return v[2] + d2 / (r - 1.0);
}

void require_safe(const ScalarField& field, const Vec& x0, const KLCertificate& cert, const char* op) {
  const SafeSetQuery q = safe_set_test(field, x0, cert);
  if (!q.in_V) {
    throw Error(std::string(op) + ": point outside the safe set V (f = " + std::to_string(q.f) +
                ", Psi(f) = " + std::to_string(q.g_value) + ", margin = " + std::to_string(q.boundary_margin) + ")");
  }
}

}  // namespace

Vec retract(const ScalarField& field, const Vec& x0, const KLCertificate& cert, const IntegratorControls& controls) {
  if (field.f(x0) <= controls.f_stop) return x0;
  require_safe(field, x0, cert, "retract");
  return aitken(chained_endpoints(field, x0, controls).points);
}

std::vector<double> length_function(const ScalarField& field, const std::vector<Vec>& points,
                                    const KLCertificate& cert, const IntegratorControls& controls, int workers) {
  std::vector<double> out(points.size(), 0.0);
  parallel_for(points.size(), workers, [&](std::size_t i) {
    if (field.f(points[i]) <= controls.f_stop * (1.0 + 1e-12)) return;
    require_safe(field, points[i], cert, "length_function");
    out[i] = aitken(chained_endpoints(field, points[i], controls).lengths);
  });
  return out;
}

Trajectory limit_curve(const ScalarField& field, const Vec& x0, const IntegratorControls& controls) {
  Trajectory t = integrate(field, x0, Clock::arclength, controls);
  if (t.termination != Termination::reached_zero_locus) {
    throw Error("limit_curve: flow ended by " + to_string(t.termination));
  }
  const Vec r = t.samples.size() == 1 ? x0 : aitken(chained_endpoints(field, x0, controls).points);
  Sample last = t.back();
  const double gap = (r - last.x).norm();
  last.x = r;
  last.s += gap;
  last.arclen += gap;
  last.level += last.f;
  last.f = field.f(r);
  last.grad = Vec::Zero(r.size());
  last.grad_norm = 0.0;
  last.slope = 0.0;
  if (gap > 0.0) t.samples.push_back(last);
  t.limit_point = r;
  return t;
}

}  // namespace kl
