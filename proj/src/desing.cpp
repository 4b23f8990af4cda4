#include "kl/desing.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

namespace kl {

namespace {

using boost::math::quadrature::gauss_kronrod;

double grad_norm(const ScalarField& field, const Vec& x) { return field.grad(x).norm(); }

// int_a^b of the power law through (t0, u0) and (t1, u1).
double power_cell(double t0, double u0, double t1, double u1, double a, double b) {
  const double k = std::log(u1 / u0) / std::log(t1 / t0);
  if (std::abs(k + 1.0) < 1e-12) return u0 * t0 * std::log(b / a);
  return u0 * t0 * (std::pow(b / t0, k + 1.0) - std::pow(a / t0, k + 1.0)) / (k + 1.0);
}

// int_{t_first}^{upper} with per-cell power laws; the last cell continues past the grid.
double cells_integral(const Curve& c, double upper) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    const auto [t0, u0] = c[i];
    const auto [t1, u1] = c[i + 1];
    if (t0 >= upper) break;
    const bool last = i + 2 == c.size();
    const double b = last ? upper : std::min(t1, upper);
    sum += power_cell(t0, u0, t1, u1, t0, b);
  }
  return sum;
}

void check_curve(const Curve& c, const char* who) {
  if (c.size() < 2) throw Error(std::string(who) + ": need at least two samples");
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(c[i].first > 0.0) || !(c[i].second > 0.0) || !std::isfinite(c[i].second)) {
      throw Error(std::string(who) + ": samples must be positive and finite");
    }
    if (i > 0 && !(c[i].first > c[i - 1].first)) throw Error(std::string(who) + ": t must be ascending");
  }
}

double check_loss(const std::vector<double>& r, double a, double tau) {
  double s = 0.0;
  for (double v : r) s += (v - a) * (tau - (v < a ? 1.0 : 0.0));
  return s;
}

// tau-quantile intercept for a fixed slope and the resulting check loss.
std::pair<double, double> profile_loss(const std::vector<double>& x, const std::vector<double>& y,
                                       double slope, double tau) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = y[i] - slope * x[i];
  std::vector<double> sorted = r;
  const auto k = static_cast<std::size_t>(
      std::clamp(std::ceil(tau * static_cast<double>(r.size())) - 1.0, 0.0, static_cast<double>(r.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(k), sorted.end());
  const double a = sorted[k];
  return {a, check_loss(r, a, tau)};
}

// int_lo^hi 1/b, integrated in log t so power-law b stays smooth.
double inverse_integral(const std::function<double(double)>& b, double lo, double hi) {
  if (lo == hi) return 0.0;
  auto g = [&](double s) {
    const double r = std::exp(s);
    return r / b(r);
  };
  return gauss_kronrod<double, 15>::integrate(g, std::log(lo), std::log(hi), 15, 1e-12);
}

}  // namespace

// ---------------------------------------------------------------------------------------------

VerifyReport verify_certificate(const ScalarField& field, const KLCertificate& cert, const VerifyOptions& options) {
  cert.validate();
  if (cert.U.dim() != field.dim()) throw Error("verify_certificate: U has the wrong dimension");
  VerifyReport rep;
  std::mt19937_64 rng(options.seed);
  const long max_attempts = static_cast<long>(options.samples) * options.attempts_per_sample;
  for (long attempt = 0; attempt < max_attempts && rep.checked < options.samples; ++attempt) {
    const Vec x = cert.U.uniform(rng);
    const double f = field.f(x);
    if (!(f > options.f_stop) || !(f < cert.rho)) continue;
    ++rep.checked;
    const double margin = cert.psi.derivative(f) * grad_norm(field, x) - 1.0;
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_point = x;
    }
    if (margin < -options.tolerance) {
      ++rep.n_failures;
      if (rep.failures.size() < options.max_listed_failures) rep.failures.push_back(x);
    }
  }
  rep.passed = rep.checked > 0 && rep.n_failures == 0;
  return rep;
}

// ---------------------------------------------------------------------------------------------

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::integrable: return "integrable";
    case Verdict::divergent: return "divergent";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

double powerlaw_integral(const Curve& curve, double upper) {
  check_curve(curve, "powerlaw_integral");
  const auto [t0, u0] = curve[0];
  const auto [t1, u1] = curve[1];
  if (upper <= t0) return power_cell(t0, u0, t1, u1, 0.0, upper);
  const double k = std::log(u1 / u0) / std::log(t1 / t0);
  const double tail = k <= -1.0 ? kInf : u0 * t0 / (k + 1.0);
  return tail + cells_integral(curve, upper);
}

VerdictResult integrability_verdict(const Curve& curve, double rho, const VerdictOptions& options) {
  check_curve(curve, "integrability_verdict");
  if (!(rho > curve.front().first)) throw Error("integrability_verdict: rho must exceed the smallest t");
  VerdictResult res;
  const auto min_pts = static_cast<std::size_t>(std::max(2, options.min_tail_points));
  if (curve.size() < min_pts) {
    res.integral = std::nan("");
    res.note = "fewer than " + std::to_string(min_pts) + " tail points";
    return res;
  }
  const double decade = 10.0 * curve.front().first;
  std::size_t n_tail = 0;
  while (n_tail < curve.size() && curve[n_tail].first <= decade) ++n_tail;
  n_tail = std::max(n_tail, min_pts);
  res.tail_points = static_cast<int>(n_tail);

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n_tail; ++i) {
    const double x = std::log(curve[i].first), y = std::log(curve[i].second);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(n_tail);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  res.tail_exponent = -slope;
  res.tail_coef = std::exp((sy - slope * sx) / n);
  const double q = res.tail_exponent;

  if (q >= 1.0 - options.divergence_slack) {
    res.verdict = Verdict::divergent;
    res.integral = kInf;
    return res;
  }
  auto integral_on = [&](const Curve& c) {
    const double t_min = c.front().first;
    return c.front().second * t_min / (1.0 - q) + cells_integral(c, rho);
  };
  Curve coarse;
  for (std::size_t i = 0; i < curve.size(); i += 2) coarse.push_back(curve[i]);
  if (coarse.back().first != curve.back().first) coarse.push_back(curve.back());
  res.integral = integral_on(curve);
  if (q >= 1.0 - options.margin) {
    res.note = "tail exponent in the dead zone below 1";
    return res;
  }
  const double coarse_integral = integral_on(coarse);
  if (std::abs(res.integral - coarse_integral) > options.refinement_tol * std::abs(res.integral)) {
    res.note = "integral not stable under grid refinement";
    return res;
  }
  res.verdict = Verdict::integrable;
  return res;
}

// ---------------------------------------------------------------------------------------------

std::pair<double, double> quantile_line(const std::vector<double>& x, const std::vector<double>& y, double tau) {
  if (x.size() != y.size() || x.size() < 2) throw Error("quantile_line: need matching samples");
  if (!(tau > 0.0 && tau < 1.0)) throw Error("quantile_line: quantile must lie in (0, 1)");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error("quantile_line: x has no spread");
  const double b_ols = sxy / sxx;
  // The check loss minimized over the intercept is convex in the slope.
  double lo = b_ols - 4.0, hi = b_ols + 4.0;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
  double l1 = profile_loss(x, y, m1, tau).second, l2 = profile_loss(x, y, m2, tau).second;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
    if (l1 <= l2) {
      hi = m2;
      m2 = m1;
      l2 = l1;
      m1 = hi - phi * (hi - lo);
      l1 = profile_loss(x, y, m1, tau).second;
    } else {
      lo = m1;
      m1 = m2;
      l1 = l2;
      m2 = lo + phi * (hi - lo);
      l2 = profile_loss(x, y, m2, tau).second;
    }
  }
  const double b = 0.5 * (lo + hi);
  return {profile_loss(x, y, b, tau).first, b};
}

ExponentFit fit_lojasiewicz_exponent(const ScalarField& field, const Box& K, double rho, const FitOptions& options) {
  if (!(rho > options.f_stop)) throw Error("fit_lojasiewicz_exponent: rho must exceed f_stop");
  const auto m = static_cast<std::size_t>(std::max(1, options.levels));
  std::vector<std::vector<Vec>> per_level(m);
  parallel_for(m, options.workers, [&](std::size_t j) {
    const double t = rho * std::exp2(-0.5 * static_cast<double>(j));
    if (t <= options.f_stop) return;
    std::vector<Vec> pts = sample_level(field, t, K, options.budget).points;
    if (pts.empty()) return;
    // The support line is set by the level minima, which carry a vanishing share of a uniform
    // level sample as t -> 0. Polish the minimizer and add points clustered around it.
    const auto by_grad = [&](const Vec& a, const Vec& b) { return grad_norm(field, a) < grad_norm(field, b); };
    const Vec x_min = refine_extremum(field, t, K, *std::min_element(pts.begin(), pts.end(), by_grad), true);
    std::vector<Vec> ring = zoom_ring(field, t, K, x_min, K.diameter() / 512.0, options.zoom_rings);
    pts.push_back(x_min);
    pts.insert(pts.end(), ring.begin(), ring.end());
    per_level[j] = std::move(pts);
  });
  std::vector<double> xs, ys;
  for (const auto& pts : per_level) {
    for (const Vec& p : pts) {
      const double f = field.f(p);
      const double g = grad_norm(field, p);
      if (!(f > options.f_stop) || !(f < rho) || !(g > 0.0)) continue;
      xs.push_back(std::log(f));
      ys.push_back(std::log(g));
    }
  }
  if (xs.size() < 10) throw Error("fit_lojasiewicz_exponent: fewer than 10 cloud points in K");

  ExponentFit fit;
  fit.n_points = static_cast<int>(xs.size());
  const auto [a, theta] = quantile_line(xs, ys, options.quantile);
  fit.theta = theta;
  fit.C_quantile = std::exp(a);
  double support = kInf, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    support = std::min(support, ys[i] - theta * xs[i]);
    my += ys[i];
  }
  my /= static_cast<double>(ys.size());
  fit.C = std::exp(support);
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ss_res += std::pow(ys[i] - a - theta * xs[i], 2);
    ss_tot += std::pow(ys[i] - my, 2);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;

  if (theta < 1.0) {
    const double C = fit.C, e = 1.0 - theta;
    KLCertificate cert;
    cert.rho = rho;
    cert.U = K;
    cert.source = CertSource::power_law_fit;
    cert.psi = Profile1D::analytic([C, e](double t) { return t > 0.0 ? std::pow(t, e) / (C * e) : 0.0; },
                                   [C, e](double t) { return t > 0.0 ? std::pow(t, e - 1.0) / C : kInf; },
                                   geometric_grid(rho, rho * 1e-12, 4));
    fit.certificate = cert;
  } else {
    fit.note = "theta >= 1: no power-law certificate";
  }
  return fit;
}

// ---------------------------------------------------------------------------------------------

KLCertificate build_psi_from_a(const std::function<double(double)>& a, double rho, const Box& U,
                               const PsiOptions& options) {
  if (!(rho > options.t_min)) throw Error("build_psi_from_a: rho must exceed t_min");
  const std::vector<double> grid = geometric_grid(rho, options.t_min, options.per_octave);
  Curve inv;
  for (double t : grid) {
    const double v = a(t);
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "build_psi_from_a: a must be positive and finite (a(" << t << ") = " << v << ")";
      throw Error(os.str());
    }
    inv.emplace_back(t, 1.0 / v);
  }
  const VerdictResult v = integrability_verdict(inv, rho);
  if (v.verdict == Verdict::divergent) {
    std::ostringstream os;
    os << "build_psi_from_a: int 1/a diverges at 0 (tail exponent " << v.tail_exponent << ")";
    throw Error(os.str());
  }

  auto inv_a = [&a](double r) { return 1.0 / a(r); };
  std::vector<double> values(grid.size()), derivs(grid.size());
  boost::math::quadrature::tanh_sinh<double> ts;
  double acc = ts.integrate(inv_a, 0.0, grid.front());
  if (!std::isfinite(acc)) throw Error("build_psi_from_a: quadrature of 1/a near 0 failed");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i > 0) acc += gauss_kronrod<double, 15>::integrate(inv_a, grid[i - 1], grid[i], 8, 1e-12);
    values[i] = acc;
    derivs[i] = inv_a(grid[i]);
  }
  auto table = std::make_shared<Profile1D>(Profile1D::tabulated(grid, values, derivs));
  KLCertificate cert;
  cert.rho = rho;
  cert.U = U;
  cert.source = CertSource::built_from_a;
  cert.psi = Profile1D::analytic([table](double t) { return t > 0.0 ? table->value(t) : 0.0; },
                                 [a](double t) { return t > 0.0 ? 1.0 / a(t) : kInf; }, grid);
  cert.validate();
  return cert;
}

// ---------------------------------------------------------------------------------------------

std::string to_string(PointVerdict v) {
  switch (v) {
    case PointVerdict::good: return "good";
    case PointVerdict::bad: return "bad";
    case PointVerdict::ugly: return "ugly";
    case PointVerdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

PointClass classify_profiles(const Curve& alpha, const Curve& beta, double rho, const VerdictOptions& options) {
  PointClass pc;
  pc.alpha = integrability_verdict(alpha, rho, options);
  pc.beta = integrability_verdict(beta, rho, options);
  pc.alpha_integral = pc.alpha.integral;
  pc.beta_integral = pc.beta.integral;
  const Verdict a = pc.alpha.verdict, b = pc.beta.verdict;
  if (a == Verdict::integrable && b == Verdict::divergent) {
    // beta <= alpha pointwise, so this pair cannot come from one field.
    pc.note = "inconsistent profiles: alpha integrable but beta divergent";
  } else if (a == Verdict::integrable) {
    pc.verdict = PointVerdict::good;
  } else if (b == Verdict::divergent) {
    pc.verdict = PointVerdict::ugly;
  } else if (a == Verdict::divergent && b == Verdict::integrable) {
    pc.verdict = PointVerdict::bad;
  } else {
    pc.note = "alpha " + to_string(a) + ", beta " + to_string(b);
  }
  return pc;
}

PointClass classify_point(const ScalarField& field, const Vec& p, const Box& K, double rho,
                          const ClassifyOptions& options, LevelSetProfile& profile_out) {
  if (p.size() != field.dim() || K.dim() != field.dim()) throw Error("classify_point: dimension mismatch");
  if (!K.contains(p)) throw Error("classify_point: p must lie in K");
  const double fp = field.f(p);
  if (!(fp <= options.f_stop)) {
    std::ostringstream os;
    os << "classify_point: f(p) = " << fp << " exceeds f_stop; p is not on the zero locus";
    throw Error(os.str());
  }

  PointClass pc;
  std::mt19937_64 rng(options.seed);
  double min_grad = kInf;
  for (int i = 0; i < options.scan_samples; ++i) {
    const Vec x = K.uniform(rng);
    if (field.f(x) > options.f_stop) min_grad = std::min(min_grad, grad_norm(field, x));
  }
  const double floor = options.gradient_floor * std::max(1.0, K.diameter());
  pc.witness_margin = std::isfinite(min_grad) ? min_grad - floor : 0.0;
  pc.simple_nondegenerate = std::isfinite(min_grad) && pc.witness_margin > 0.0;

  auto finish = [&](PointClass&& out, const std::string& note) {
    out.point = p;
    out.simple_nondegenerate = pc.simple_nondegenerate;
    out.witness_margin = pc.witness_margin;
    if (!note.empty()) out.note = out.note.empty() ? note : note + "; " + out.note;
    return std::move(out);
  };
  if (!pc.simple_nondegenerate) {
    return finish(std::move(pc), "not simple nondegenerate on K (sampled min |grad f| at the floor)");
  }

  profile_out = build_profile(field, K, rho, options.levels, options.budget, options.workers);
  if (profile_out.unreliable) {
    return finish(std::move(pc), "unreliable profile: " + std::to_string(profile_out.empty_levels()) + " of " +
                                     std::to_string(options.levels) + " levels empty");
  }
  PointClass out = classify_profiles(profile_out.alpha_curve(), profile_out.beta_curve(), rho, options.verdict);
  if (options.fit_exponent) {
    try {
      out.fitted_exponent = fit_lojasiewicz_exponent(field, K, rho, options.fit);
    } catch (const Error& e) {
      out.note = e.what();
    }
  }
  return finish(std::move(out), "");
}

PointClass classify_point(const ScalarField& field, const Vec& p, const Box& K, double rho,
                          const ClassifyOptions& options) {
  LevelSetProfile unused;
  return classify_point(field, p, K, rho, options, unused);
}

// ---------------------------------------------------------------------------------------------

NoCurveReport no_curve_diagnostic(const ScalarField& field, const std::function<double(double)>& b,
                                  const Trajectory& curve, double rho) {
  if (curve.samples.size() < 2) throw Error("no_curve_diagnostic: curve needs at least two samples");
  NoCurveReport rep;
  Curve inv;
  for (double t : geometric_grid(rho, rho * 1e-12, 4)) {
    const double v = b(t);
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("no_curve_diagnostic: b must be positive and finite");
    inv.emplace_back(t, 1.0 / v);
  }
  rep.b_verdict = integrability_verdict(inv, rho);
  rep.applicable = rep.b_verdict.verdict == Verdict::divergent;

  const auto& S = curve.samples;
  rep.speed_ok = true;
  for (std::size_t i = 1; i < S.size(); ++i) {
    const double ds = std::abs(S[i].s - S[i - 1].s);
    if ((S[i].x - S[i - 1].x).norm() > ds * (1.0 + 1e-9) + 1e-12) rep.speed_ok = false;
  }

  std::vector<double> fv(S.size());
  std::size_t i0 = S.size();
  rep.hypotheses_met = true;
  for (std::size_t i = 0; i < S.size(); ++i) {
    fv[i] = field.f(S[i].x);
    if (fv[i] > 0.0 && fv[i] < rho) {
      const double excess = grad_norm(field, S[i].x) - b(fv[i]);
      rep.worst_hypothesis_excess = std::max(rep.worst_hypothesis_excess, excess);
      if (excess > 1e-9 * b(fv[i])) rep.hypotheses_met = false;
      if (i0 == S.size() || fv[i] > fv[i0]) i0 = i;
    }
  }
  if (i0 == S.size()) {
    rep.diagnostic = "curve never enters f^{-1}(0, rho)";
    return rep;
  }
  rep.t0 = S[i0].s;
  rep.u0 = fv[i0];
  const double f_min = *std::min_element(fv.begin(), fv.end());
  rep.approaches_zero = f_min <= 1e-8 * rep.u0;

  rep.bound_holds = true;
  for (std::size_t i = 0; i < S.size(); ++i) {
    if (!(fv[i] < rho)) continue;
    double B;
    if (fv[i] <= 0.0) {
      B = rep.applicable ? -kInf : -inverse_integral(b, rho * 1e-12, rep.u0);
    } else {
      B = fv[i] < rep.u0 ? -inverse_integral(b, fv[i], rep.u0) : inverse_integral(b, rep.u0, fv[i]);
    }
    const double dt = std::abs(S[i].s - rep.t0);
    const double excess = std::abs(B) - dt;
    rep.worst_bound_excess = std::max(rep.worst_bound_excess, excess);
    if (excess > 1e-9 * (1.0 + dt)) rep.bound_holds = false;
  }
  rep.contradiction = rep.applicable && rep.approaches_zero && !rep.bound_holds;

  if (!rep.applicable) {
    rep.diagnostic = "obstruction inapplicable: int_0^rho 1/b converges";
  } else if (!rep.speed_ok) {
    rep.diagnostic = "curve speed exceeds 1";
  } else if (!rep.hypotheses_met) {
    rep.diagnostic = "obstruction hypotheses not met: |grad f| > b(f) on the curve";
  } else if (rep.contradiction) {
    rep.diagnostic = "contradiction: f tends to 0 along the curve while B(f) must stay above t - t0";
  } else {
    rep.diagnostic = "bound holds; no contradiction";
  }
  if (rep.contradiction && !rep.hypotheses_met) rep.diagnostic += "; contradiction in the B chain";
  return rep;
}

// ---------------------------------------------------------------------------------------------

double Oracle1D::inverse_at(double t) const {
  if (inverse.size() < 2) throw Error("oracle_1d: empty inverse table");
  if (t <= 0.0) return 0.0;
  std::size_t i = 0;
  if (t >= inverse.front().first) {
    const auto it = std::upper_bound(inverse.begin(), inverse.end(), std::make_pair(t, kInf));
    i = std::min(static_cast<std::size_t>(it - inverse.begin()), inverse.size() - 1) - 1;
  }
  const auto [t0, x0] = inverse[i];
  const auto [t1, x1] = inverse[i + 1];
  const double k = std::log(x1 / x0) / std::log(t1 / t0);
  return x0 * std::pow(t / t0, k);
}

Oracle1D oracle_1d(const std::function<double(double)>& f1d, double eps, int per_octave, double x_min_ratio) {
  if (!(eps > 0.0)) throw Error("oracle_1d: eps must be positive");
  if (std::abs(f1d(0.0)) > 0.0) throw Error("oracle_1d: f1d(0) must be 0");
  const std::vector<double> xs = geometric_grid(eps, eps * x_min_ratio, per_octave);
  std::vector<double> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ys[i] = f1d(xs[i]);
    if (!(ys[i] > (i ? ys[i - 1] : 0.0))) {
      std::ostringstream os;
      os << "oracle_1d: f1d is not strictly increasing near x = " << xs[i];
      throw Error(os.str());
    }
  }
  Oracle1D out;
  const std::size_t n = xs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i ? i - 1 : 0, hi = i + 1 < n ? i + 1 : n - 1;
    // (f^{-1})'(y) = (d ln x / d ln y) x / y, with the log-derivative by differences.
    const double e = std::log(xs[hi] / xs[lo]) / std::log(ys[hi] / ys[lo]);
    out.alpha.emplace_back(ys[i], e * xs[i] / ys[i]);
    out.inverse.emplace_back(ys[i], xs[i]);
  }
  return out;
}

}  // namespace kl
