#include "kl/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace kl {

std::string to_string(SemiKind k) { return k == SemiKind::lower ? "lower" : "upper"; }

std::vector<double> SemicontinuousProfile::refined(int levels) const {
  if (!(r0 > 0.0)) throw Error("envelope: r0 must be positive");
  std::vector<double> g = grid;
  g.push_back(r0);
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  if (!(g.front() > 0.0) || g.back() > r0) throw Error("envelope: grid must lie in (0, r0]");
  if (g.size() < 2) throw Error("envelope: grid needs a point below r0");
  const int parts = 1 << std::max(0, levels);
  std::vector<double> out;
  out.reserve((g.size() - 1) * static_cast<std::size_t>(parts) + 1);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    for (int p = 0; p < parts; ++p) out.push_back(g[i] + (g[i + 1] - g[i]) * p / parts);
  }
  out.push_back(g.back());
  return out;
}

std::vector<double> moreau_envelope(const std::vector<double>& s, const std::vector<double>& u, double lambda,
                                    const std::vector<double>& x) {
  if (s.empty() || s.size() != u.size()) throw Error("moreau_envelope: need matching samples");
  if (!(lambda > 0.0)) throw Error("moreau_envelope: lambda must be positive");
  // Parabolas u_j + (x - s_j)^2 / (2 lambda) share their curvature, so the lower envelope is a
  // sequence of parabolas with breakpoints z.
  const std::size_t n = s.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  auto cross = [&](std::size_t i, std::size_t j) {
    return 0.5 * (s[i] + s[j]) + lambda * (u[j] - u[i]) / (s[j] - s[i]);
  };
  for (std::size_t q = 1; q < n; ++q) {
    if (!(s[q] > s[q - 1])) throw Error("moreau_envelope: sample points must be ascending");
    double c = cross(v[k], q);
    while (c <= z[k]) {
      --k;
      c = cross(v[k], q);
    }
    ++k;
    v[k] = q;
    z[k] = c;
    z[k + 1] = kInf;
  }
  std::vector<double> e(x.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i > 0 && x[i] < x[i - 1]) throw Error("moreau_envelope: query points must be ascending");
    while (z[j + 1] < x[i]) ++j;
    const double d = x[i] - s[v[j]];
    e[i] = u[v[j]] + d * d / (2.0 * lambda);
  }
  // Exact one-sidedness at the samples themselves.
  for (std::size_t i = 0, p = 0; i < x.size(); ++i) {
    while (p < n && s[p] < x[i]) ++p;
    if (p < n && s[p] == x[i]) e[i] = std::min(e[i], u[p]);
  }
  return e;
}

Curve moreau_envelope(const SemicontinuousProfile& u, double lambda, double a, double b, int refine) {
  if (u.kind != SemiKind::lower) throw Error("moreau_envelope: profile must be of lower kind");
  if (!(a > 0.0) || !(b > a) || b > u.r0) throw Error("moreau_envelope: need 0 < a < b <= r0");
  std::vector<double> nodes{a, b};
  for (double t : u.refined(refine)) {
    if (t > a && t < b) nodes.push_back(t);
  }
  std::sort(nodes.begin(), nodes.end());
  std::vector<double> vals(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) vals[i] = u.evaluator(nodes[i]);
  const std::vector<double> e = moreau_envelope(nodes, vals, lambda, nodes);
  Curve out;
  for (std::size_t i = 0; i < nodes.size(); ++i) out.emplace_back(nodes[i], e[i]);
  return out;
}

namespace {

double trapezoid(const std::vector<double>& t, const std::vector<double>& y, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += 0.5 * (y[i] + y[i + 1]) * (t[i + 1] - t[i]);
  return s;
}

struct Span {
  std::size_t lo, hi;  // node indices, inclusive
  int k;
};

}  // namespace

double EnvelopeResult::value(double x, double tail_exponent) const {
  if (t.empty()) throw Error("envelope: empty result");
  if (x < t.front()) return w.front() * std::pow(x / t.front(), -tail_exponent);
  if (x >= t.back()) return w.back();
  const auto it = std::upper_bound(t.begin(), t.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - t.begin()) - 1;
  // Geometric interpolation keeps w positive and is exact on power laws.
  const double s = std::log(x / t[i]) / std::log(t[i + 1] / t[i]);
  return w[i] * std::pow(w[i + 1] / w[i], s);
}

EnvelopeResult build_envelope(const SemicontinuousProfile& prof, const EnvelopeOptions& options) {
  if (!prof.evaluator) throw Error("build_envelope: missing evaluator");
  std::vector<double> nodes = prof.refined(options.refine);
  const double floor = std::max(options.resolution_floor, nodes.front());
  std::vector<double> a_seq;
  for (double a = prof.r0; a >= floor; a *= 0.5) a_seq.push_back(a);
  nodes.insert(nodes.end(), a_seq.begin(), a_seq.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  nodes.erase(nodes.begin(), std::lower_bound(nodes.begin(), nodes.end(), floor));
  if (nodes.size() < 2) throw Error("build_envelope: resolution floor leaves fewer than two nodes");

  EnvelopeResult res;
  res.kind = prof.kind;
  res.t = nodes;
  res.u.resize(nodes.size());
  double u_max = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    res.u[i] = prof.evaluator(nodes[i]);
    if (!(res.u[i] > 0.0) || !std::isfinite(res.u[i])) {
      std::ostringstream os;
      os << "build_envelope: u must be positive and finite (u(" << nodes[i] << ") = " << res.u[i] << ")";
      throw Error(os.str());
    }
    u_max = std::max(u_max, res.u[i]);
  }
  // Lower construction on v; the upper kind reflects below the ceiling M.
  const bool upper = prof.kind == SemiKind::upper;
  res.ceiling = upper ? 2.0 * u_max : 0.0;
  std::vector<double> v(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) v[i] = upper ? res.ceiling - res.u[i] : res.u[i];

  // Pieces from the top: k = 0 is [a_1, a_0 = r0]; the last piece ends at the floor.
  std::vector<Span> spans;
  auto index_of = [&](double a) {
    return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), a) - nodes.begin());
  };
  for (std::size_t k = 0; k < a_seq.size(); ++k) {
    const std::size_t hi = index_of(a_seq[k]);
    const std::size_t lo = k + 1 < a_seq.size() ? index_of(a_seq[k + 1]) : 0;
    if (hi > lo) spans.push_back({lo, hi, static_cast<int>(k)});
  }

  std::vector<double> e(nodes.size());
  std::vector<std::vector<double>> piece_vals(spans.size());
  res.pieces.resize(spans.size());
  parallel_for(spans.size(), options.workers, [&](std::size_t p) {
    const Span& sp = spans[p];
    EnvelopePiece& pc = res.pieces[p];
    pc.k = sp.k;
    pc.a_lo = nodes[sp.lo];
    pc.a_hi = nodes[sp.hi];
    const std::vector<double> s(nodes.begin() + static_cast<long>(sp.lo), nodes.begin() + static_cast<long>(sp.hi) + 1);
    const std::vector<double> vv(v.begin() + static_cast<long>(sp.lo), v.begin() + static_cast<long>(sp.hi) + 1);
    const double target = options.defect_scale / ((sp.k + 1.0) * (sp.k + 1.0));
    double lambda = (pc.a_hi - pc.a_lo) * (pc.a_hi - pc.a_lo);
    std::vector<double> ev;
    std::vector<double> gap(s.size());
    for (int h = 0;; ++h) {
      ev = moreau_envelope(s, vv, lambda, s);
      for (std::size_t i = 0; i < s.size(); ++i) gap[i] = vv[i] - ev[i];
      pc.defect = trapezoid(s, gap, 0, s.size() - 1);
      pc.lambda = lambda;
      pc.halvings = h;
      if (pc.defect <= target) {
        pc.target_met = true;
        break;
      }
      if (h == options.budget) break;
      lambda *= 0.5;
    }
    piece_vals[p] = std::move(ev);
  });

  // Stitch at each interior a_k: piece p (below a_k) meets piece p-1 (above). The side with the
  // larger value is scaled down by m over a ramp, which keeps w on the same side of u.
  for (std::size_t p = 1; p < spans.size(); ++p) {
    std::vector<double>& below = piece_vals[p];
    std::vector<double>& above = piece_vals[p - 1];
    const double eb = below.back(), ea = above.front();
    EnvelopePiece& pc = res.pieces[p];
    if (eb == ea) continue;
    pc.m = std::min(eb / ea, ea / eb);
    const bool scale_below = eb > ea;
    pc.stitched_side = scale_below ? "low" : "high";
    const Span& sp = scale_below ? spans[p] : spans[p - 1];
    std::vector<double>& vals = scale_below ? below : above;
    const int k_mod = scale_below ? spans[p].k : spans[p - 1].k;
    const double target = options.defect_scale / ((k_mod + 1.0) * (k_mod + 1.0));
    const double a_k = nodes[spans[p].hi];
    const double len = nodes[sp.hi] - nodes[sp.lo];
    const std::vector<double> s(nodes.begin() + static_cast<long>(sp.lo), nodes.begin() + static_cast<long>(sp.hi) + 1);
    const double h_adj = scale_below ? s[s.size() - 1] - s[s.size() - 2] : s[1] - s[0];
    std::vector<double> scaled(vals.size()), loss(vals.size());
    for (double eps = 0.25 * len;; eps *= 0.5) {
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double dist = std::abs(s[i] - a_k);
        const double factor = dist < eps ? pc.m + (1.0 - pc.m) * dist / eps : 1.0;
        scaled[i] = factor * vals[i];
        loss[i] = vals[i] - scaled[i];
      }
      pc.eps = eps;
      pc.stitch_correction = trapezoid(s, loss, 0, s.size() - 1);
      if (pc.stitch_correction <= target) break;
      if (eps <= h_adj) {
        pc.stitch_met = false;
        break;
      }
    }
    vals = scaled;
  }

  for (std::size_t p = 0; p < spans.size(); ++p) {
    for (std::size_t i = spans[p].lo; i <= spans[p].hi; ++i) e[i] = piece_vals[p][i - spans[p].lo];
    if (p > 0) {
      const double jump = std::abs(piece_vals[p].back() - piece_vals[p - 1].front());
      res.max_stitch_jump = std::max(res.max_stitch_jump, jump);
      e[spans[p].hi] = piece_vals[p - 1].front();
    }
  }

  res.w.resize(nodes.size());
  std::vector<double> diff(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    // Where the envelope touches, w is u itself rather than a round trip through the ceiling.
    res.w[i] = e[i] == v[i] ? res.u[i] : (upper ? res.ceiling - e[i] : e[i]);
    const double wrong = upper ? res.u[i] - res.w[i] : res.w[i] - res.u[i];
    res.side_violation = std::max(res.side_violation, wrong);
    diff[i] = std::abs(res.u[i] - res.w[i]);
    if (i > 0) res.continuity_modulus = std::max(res.continuity_modulus, std::abs(res.w[i] - res.w[i - 1]));
  }
  res.l1_gap = trapezoid(nodes, diff, 0, nodes.size() - 1);
  for (const auto& pc : res.pieces) {
    if (!pc.target_met || !pc.stitch_met) res.partial = true;
  }
  if (res.partial) res.note = "budget exhausted before every defect or stitch target was met";
  return res;
}

namespace {

// Log-log interpolation with the end cells' power laws continued outward.
double loglog_eval(const Curve& c, double t) {
  std::size_t i;
  if (t <= c.front().first) {
    i = 0;
  } else if (t >= c.back().first) {
    i = c.size() - 2;
  } else {
    const auto it = std::upper_bound(c.begin(), c.end(), std::make_pair(t, kInf));
    i = static_cast<std::size_t>(it - c.begin()) - 1;
  }
  const auto [t0, u0] = c[i];
  const auto [t1, u1] = c[i + 1];
  const double k = std::log(u1 / u0) / std::log(t1 / t0);
  return u0 * std::pow(t / t0, k);
}

}  // namespace

AlphaMajorant integrable_majorant_for_alpha(const Curve& alpha, double rho, const EnvelopeOptions& options) {
  AlphaMajorant out;
  out.verdict = integrability_verdict(alpha, rho);
  if (out.verdict.verdict != Verdict::integrable) {
    throw Error("integrable_majorant_for_alpha: alpha-hat is " + to_string(out.verdict.verdict) +
                (out.verdict.note.empty() ? "" : " (" + out.verdict.note + ")"));
  }
  SemicontinuousProfile prof;
  prof.r0 = rho;
  prof.kind = SemiKind::upper;
  prof.evaluator = [alpha](double t) { return loglog_eval(alpha, t); };
  for (const auto& [t, a] : alpha) {
    if (t < rho) prof.grid.push_back(t);
  }
  out.envelope = build_envelope(prof, options);
  const double q = out.verdict.tail_exponent;
  auto env = std::make_shared<EnvelopeResult>(out.envelope);
  out.a = [env, q](double t) { return 1.0 / env->value(t, q); };
  return out;
}

AlphaMajorant integrable_majorant_for_alpha(const LevelSetProfile& profile, const EnvelopeOptions& options) {
  if (profile.unreliable) throw Error("integrable_majorant_for_alpha: profile is unreliable");
  return integrable_majorant_for_alpha(profile.alpha_curve(), profile.rho, options);
}

}  // namespace kl
