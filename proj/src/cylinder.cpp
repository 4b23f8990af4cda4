#include "kl/cylinder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>

#include "kl/levelset.hpp"

namespace kl {

double hat_weight(double h, double center) {
  const double d = std::abs(h - center);
  if (d <= 1.0 / 6.0) return 1.0;
  if (d >= 1.0 / 3.0) return 0.0;
  const double s = 6.0 * d - 1.0;
  return 1.0 - s * s * (3.0 - 2.0 * s);
}

double hat_weight_derivative(double h, double center) {
  const double d = std::abs(h - center);
  if (d <= 1.0 / 6.0 || d >= 1.0 / 3.0) return 0.0;
  const double s = 6.0 * d - 1.0;
  const double sign = h >= center ? 1.0 : -1.0;
  return -6.0 * s * (1.0 - s) * 6.0 * sign;
}

namespace {

Box intersect(const Box& a, const Box& b) {
  if (a.dim() != b.dim()) throw Error("cylinder: certificate box has the wrong dimension");
  return Box(a.lo.cwiseMax(b.lo), a.hi.cwiseMin(b.hi));
}

std::string fmt_point(const Vec& x) {
  std::ostringstream os;
  os.precision(6);
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

// Runs the descending flow backwards: -grad of (c - f) is +grad f, and c - f vanishes on the
// reference level.
ScalarField ascent_field(const ScalarField& field, double c) {
  ScalarField up = field;
  up.name = field.name + "-ascent";
  const PointFn f = field.f;
  const VecFn g = field.grad;
  up.f = [f, c](const Vec& x) { return c - f(x); };
  up.grad = [g](const Vec& x) -> Vec { return -g(x); };
  if (field.hess) {
    const MatFn H = field.hess;
    up.hess = [H](const Vec& x) -> Mat { return -H(x); };
  }
  return up;
}

// Newton along the trajectory direction onto f = c.
Vec polish_onto_level(const ScalarField& field, Vec x, double c) {
  for (int it = 0; it < 20; ++it) {
    const double r = field.f(x) - c;
    if (std::abs(r) <= 1e-14 * c) break;
    const Vec g = field.grad(x);
    const double sl = field.slope(x, g);
    if (!(sl > 0.0)) break;
    x -= (r / sl) * g;
  }
  return x;
}

std::vector<double> dijkstra(const std::vector<Vec>& pts, const std::vector<std::vector<std::size_t>>& nb,
                             std::size_t src) {
  std::vector<double> d(pts.size(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  d[src] = 0.0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    const auto [di, i] = pq.top();
    pq.pop();
    if (di > d[i]) continue;
    for (std::size_t j : nb[i]) {
      const double dj = di + (pts[i] - pts[j]).norm();
      if (dj < d[j]) {
        d[j] = dj;
        pq.push({dj, j});
      }
    }
  }
  return d;
}

}  // namespace

std::vector<std::pair<int, double>> TrajectorySpaceChart::weights(int component, double hv) const {
  const ChartComponent& cp = components.at(static_cast<std::size_t>(component));
  if (cp.compact) return {{cp.bucket_offset + 1, 1.0}};
  const double top = 0.5 * (cp.bucket_count - 1);
  const double hc = std::clamp(hv, 0.0, top);
  const int j0 = static_cast<int>(std::floor(2.0 * hc));
  std::vector<std::pair<int, double>> out;
  for (int j = std::max(0, j0 - 1); j <= std::min(cp.bucket_count - 1, j0 + 1); ++j) {
    const double w = hat_weight(hc, 0.5 * j);
    if (w > 0.0) out.emplace_back(cp.bucket_offset + j + 1, w);
  }
  return out;
}

RefTag TrajectorySpaceChart::locate(const Vec& q) const {
  if (reference_points.empty()) throw Error("chart: no reference points");
  std::size_t best = 0;
  double bd = kInf;
  for (std::size_t i = 0; i < reference_points.size(); ++i) {
    const double d = (reference_points[i] - q).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  if (std::sqrt(bd) > 2.0 * link) {
    throw Error("chart: point " + fmt_point(q) + " meets the reference level outside the sampled region");
  }
  RefTag tag;
  tag.q = q;
  tag.nearest = best;
  tag.component = component_of[best];
  tag.h = h[best];
  if (components[static_cast<std::size_t>(tag.component)].compact) return tag;
  // Interpolate h along the neighbor edge that passes closest to q.
  const Vec& p1 = reference_points[best];
  double resid = kInf;
  for (std::size_t j : neighbors[best]) {
    const Vec e = reference_points[j] - p1;
    const double s = (q - p1).dot(e) / e.squaredNorm();
    if (s < 0.0 || s > 1.0) continue;
    const double r = (q - p1 - s * e).norm();
    if (r < resid) {
      resid = r;
      tag.h = h[best] + s * (h[j] - h[best]);
    }
  }
  return tag;
}

TrajectorySpaceChart build_chart(const ScalarField& field, const KLCertificate& cert, double c_ref,
                                 const ChartOptions& options) {
  if (!(c_ref > 0.0) || !(c_ref < cert.rho)) throw Error("build_chart: c_ref must lie in (0, rho)");
  if (!(options.h_scale > 0.0)) throw Error("build_chart: h_scale must be positive");
  const Box K = intersect(field.domain.box, cert.U);
  TrajectorySpaceChart ch;
  ch.cert = cert;
  ch.c_ref = c_ref;
  const LevelSample ls = sample_level(field, c_ref, K, options.budget);
  // A sample cut off by the budget has artificial edges, so no piece of it counts as closed.
  const bool truncated = static_cast<int>(ls.points.size()) >= options.budget;
  for (const Vec& p : ls.points) {
    if (safe_set_test(field, p, cert).in_V) ch.reference_points.push_back(p);
  }
  const std::size_t n = ch.reference_points.size();
  if (n == 0) throw Error("build_chart: the reference level f = c_ref has no sampled points in V");

  // The level sampler steps diam(K)/512 along the level.
  ch.link = 3.0 * K.diameter() / 512.0;
  ch.neighbors.assign(n, {});
  parallel_for(n, options.workers, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && (ch.reference_points[i] - ch.reference_points[j]).norm() <= ch.link) ch.neighbors[i].push_back(j);
    }
  });

  ch.component_of.assign(n, -1);
  ch.h.assign(n, 0.0);
  const double g_ref = cert.psi.value(c_ref);
  const bool u_inside = !(cert.U.lo.isApprox(field.domain.box.lo) && cert.U.hi.isApprox(field.domain.box.hi));
  int offset = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (ch.component_of[s] >= 0) continue;
    ChartComponent cp;
    const int id = static_cast<int>(ch.components.size());
    std::vector<std::size_t> stack{s};
    ch.component_of[s] = id;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      cp.members.push_back(i);
      for (std::size_t j : ch.neighbors[i]) {
        if (ch.component_of[j] < 0) {
          ch.component_of[j] = id;
          stack.push_back(j);
        }
      }
    }
    std::sort(cp.members.begin(), cp.members.end());
    Vec centroid = Vec::Zero(field.dim());
    for (std::size_t i : cp.members) centroid += ch.reference_points[i];
    centroid /= static_cast<double>(cp.members.size());
    cp.base = *std::min_element(cp.members.begin(), cp.members.end(), [&](std::size_t a, std::size_t b) {
      return (ch.reference_points[a] - centroid).squaredNorm() < (ch.reference_points[b] - centroid).squaredNorm();
    });
    // A piece that never comes near the edge of V (or of U) is a closed level component.
    double edge = kInf;
    for (std::size_t i : cp.members) {
      const Vec& x = ch.reference_points[i];
      edge = std::min(edge, field.domain.margin(x) - g_ref);
      if (u_inside) edge = std::min(edge, cert.U.distance_to_frontier(x));
    }
    cp.compact = !truncated && edge > 3.0 * ch.link;
    const std::vector<double> d = dijkstra(ch.reference_points, ch.neighbors, cp.base);
    for (std::size_t i : cp.members) {
      ch.h[i] = cp.compact ? 0.0 : d[i] / options.h_scale;
      cp.h_max = std::max(cp.h_max, ch.h[i]);
    }
    cp.bucket_count = cp.compact ? 1 : static_cast<int>(std::ceil(2.0 * cp.h_max)) + 1;
    cp.bucket_offset = offset;
    offset += cp.bucket_count;
    for (int j = 0; j < cp.bucket_count; ++j) {
      Bucket b;
      b.index = cp.bucket_offset + j + 1;
      b.component = id;
      b.center = 0.5 * j;
      for (std::size_t i : cp.members) {
        if (cp.compact || std::abs(ch.h[i] - b.center) < 1.0 / 3.0) b.members.push_back(i);
      }
      ch.buckets.push_back(std::move(b));
    }
    ch.components.push_back(std::move(cp));
  }
  return ch;
}

CSequence choose_c_sequence(const ScalarField& field, const TrajectorySpaceChart& chart,
                            const CSequenceOptions& options) {
  const int nb = chart.bucket_count();
  const std::size_t n = chart.reference_points.size();
  const double floor_level = chart.c_ref * std::exp2(-(nb + 1));
  const double min_margin = options.containment * field.domain.box.diameter();

  // Lowest level each reference trajectory reaches while staying clear of the frontier.
  std::vector<double> reach(n, 0.0);
  parallel_for(n, options.workers, [&](std::size_t i) {
    IntegratorControls ctl = options.controls;
    ctl.f_stop = floor_level;
    ctl.output_params.clear();
    const Trajectory tr = integrate(field, chart.reference_points[i], Clock::level, ctl);
    double last = tr.front().f;
    for (const Sample& smp : tr.samples) {
      if (field.domain.margin(smp.x) < min_margin) {
        reach[i] = last;
        return;
      }
      last = smp.f;
    }
    reach[i] = tr.termination == Termination::reached_zero_locus ? 0.0 : last;
  });
  // First bucket holding each point: it belongs to U_n for every n at or after it.
  std::vector<int> first(n, nb + 1);
  for (const Bucket& b : chart.buckets) {
    for (std::size_t i : b.members) first[i] = std::min(first[i], b.index);
  }

  CSequence out;
  double prev = chart.c_ref;
  for (int k = 1; k <= nb; ++k) {
    double cand = std::min(chart.c_ref * std::exp2(-k), 0.5 * prev);
    int halv = 0;
    for (;;) {
      std::size_t bad = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (first[i] <= k && reach[i] > cand) {
          bad = i;
          break;
        }
      }
      if (bad == n) break;
      if (halv == options.max_halvings) {
        std::ostringstream os;
        os << "c_" << k << ": trajectory from reference point " << bad << " " << fmt_point(chart.reference_points[bad])
           << " stops at level " << reach[bad] << " above every candidate down to " << cand;
        out.failure = os.str();
        return out;
      }
      cand *= 0.5;
      ++halv;
    }
    out.c.push_back(cand);
    out.halvings.push_back(halv);
    prev = cand;
  }
  out.ok = true;
  return out;
}

double FhatChart::phi_hat(const RefTag& tag) const {
  double s = 0.0;
  for (const auto& [i, w] : chart.weights(tag.component, tag.h)) s += w / c.at(static_cast<std::size_t>(i - 1));
  return s;
}

RefTag tag_point(const ScalarField& field, const TrajectorySpaceChart& chart, const Vec& x,
                 const IntegratorControls& controls) {
  const double c = chart.c_ref;
  const double f0 = field.f(x);
  if (!(f0 > controls.f_stop)) throw Error("tag_point: point " + fmt_point(x) + " lies on the zero locus");
  Vec q = x;
  if (std::abs(f0 - c) > 1e-12 * c) {
    IntegratorControls ctl = controls;
    ctl.output_params.clear();
    Trajectory tr;
    if (f0 > c) {
      ctl.f_stop = c;
      tr = integrate(field, x, Clock::level, ctl);
    } else {
      ctl.f_stop = 1e-13 * c;
      tr = integrate(ascent_field(field, c), x, Clock::level, ctl);
    }
    if (tr.termination != Termination::reached_zero_locus) {
      throw Error("tag_point: trajectory through " + fmt_point(x) + " ends by " + to_string(tr.termination) +
                  " before the reference level");
    }
    q = tr.back().x;
  }
  return chart.locate(polish_onto_level(field, q, c));
}

FhatValue evaluate_fhat_detail(const ScalarField& field, const FhatChart& fc, const Vec& x,
                               const IntegratorControls& controls) {
  FhatValue v;
  v.tag = tag_point(field, fc.chart, x, controls);
  v.phi_hat = fc.phi_hat(v.tag);
  v.fhat = field.f(x) * v.phi_hat;
  return v;
}

double evaluate_fhat(const ScalarField& field, const FhatChart& fc, const Vec& x, const IntegratorControls& controls) {
  return evaluate_fhat_detail(field, fc, x, controls).fhat;
}

namespace {

// Farthest-point selection over the whole sample; any dimension.
std::vector<Vec> farthest_starts(const TrajectorySpaceChart& ch, std::size_t m) {
  const std::size_t n = ch.reference_points.size();
  std::vector<double> gap(n, kInf);
  std::vector<bool> taken(n, false);
  std::size_t next = ch.components.front().base;
  for (std::size_t k = 0; k < m && next < n; ++k) {
    taken[next] = true;
    for (std::size_t i = 0; i < n; ++i) gap[i] = std::min(gap[i], (ch.reference_points[i] - ch.reference_points[next]).norm());
    std::size_t far = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && (far == n || gap[i] > gap[far])) far = i;
    }
    next = far;
  }
  std::vector<Vec> out;
  for (const ChartComponent& cp : ch.components) {
    for (std::size_t i : cp.members) {
      if (taken[i]) out.push_back(ch.reference_points[i]);
    }
  }
  return out;
}

// Arclength parameter along a sampled level curve: from one end for an open piece, signed from
// the base for a closed one (the sign records on which side of the base the shortest path leaves).
std::vector<std::pair<double, std::size_t>> curve_parameter(const TrajectorySpaceChart& ch, const ScalarField& field,
                                                            const ChartComponent& cp) {
  const auto& P = ch.reference_points;
  std::vector<std::pair<double, std::size_t>> out;
  if (!cp.compact) {
    const auto d0 = dijkstra(P, ch.neighbors, cp.base);
    const std::size_t end = *std::max_element(cp.members.begin(), cp.members.end(),
                                               [&](std::size_t a, std::size_t b) { return d0[a] < d0[b]; });
    const auto d = dijkstra(P, ch.neighbors, end);
    for (std::size_t i : cp.members) out.emplace_back(d[i], i);
  } else {
    const std::size_t n = P.size();
    std::vector<double> d(n, kInf);
    std::vector<double> side(n, 0.0);
    const Vec g = field.grad(P[cp.base]);
    const Vec tangent = (Vec(2) << -g[1], g[0]).finished();
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    d[cp.base] = 0.0;
    side[cp.base] = 1.0;
    pq.push({0.0, cp.base});
    while (!pq.empty()) {
      const auto [di, i] = pq.top();
      pq.pop();
      if (di > d[i]) continue;
      for (std::size_t j : ch.neighbors[i]) {
        const double dj = di + (P[i] - P[j]).norm();
        if (dj < d[j]) {
          d[j] = dj;
          side[j] = i == cp.base ? ((P[j] - P[i]).dot(tangent) >= 0.0 ? 1.0 : -1.0) : side[i];
          pq.push({dj, j});
        }
      }
    }
    for (std::size_t i : cp.members) out.emplace_back(side[i] * d[i], i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Starts equally spaced in arclength on each curve piece, interpolated between samples and put
// back on the level.
std::vector<Vec> curve_starts(const TrajectorySpaceChart& ch, const ScalarField& field, std::size_t m) {
  std::vector<std::vector<std::pair<double, std::size_t>>> params;
  double total = 0.0;
  for (const ChartComponent& cp : ch.components) {
    params.push_back(curve_parameter(ch, field, cp));
    total += params.back().back().first - params.back().front().first;
  }
  std::vector<Vec> out;
  for (std::size_t c = 0; c < params.size(); ++c) {
    const auto& pr = params[c];
    const double lo = pr.front().first, hi = pr.back().first;
    const bool closed = ch.components[c].compact;
    std::size_t k_c = total > 0.0 ? static_cast<std::size_t>(std::llround(m * (hi - lo) / total)) : 1;
    if (c + 1 == params.size()) k_c = m > out.size() ? m - out.size() : 0;
    k_c = std::max<std::size_t>(k_c, 1);
    // A closed piece also spans the seam between its two extreme samples.
    const double seam = closed ? (ch.reference_points[pr.back().second] - ch.reference_points[pr.front().second]).norm() : 0.0;
    for (std::size_t k = 0; k < k_c; ++k) {
      const double frac = closed ? (k + 0.5) / k_c : (k_c == 1 ? 0.5 : static_cast<double>(k) / (k_c - 1));
      const double target = lo + frac * (hi - lo + seam);
      if (target > hi) {
        const double s = seam > 0.0 ? (target - hi) / seam : 0.0;
        const Vec x = (1.0 - s) * ch.reference_points[pr.back().second] + s * ch.reference_points[pr.front().second];
        out.push_back(polish_onto_level(field, x, ch.c_ref));
        continue;
      }
      auto it = std::lower_bound(pr.begin(), pr.end(), std::make_pair(target, std::size_t{0}));
      if (it == pr.begin()) ++it;
      if (it == pr.end()) --it;
      const auto& [pa, ia] = *(it - 1);
      const auto& [pb, ib] = *it;
      const double s = pb > pa ? std::clamp((target - pa) / (pb - pa), 0.0, 1.0) : 0.0;
      const Vec x = (1.0 - s) * ch.reference_points[ia] + s * ch.reference_points[ib];
      out.push_back(polish_onto_level(field, x, ch.c_ref));
    }
  }
  return out;
}

}  // namespace

std::vector<Trajectory> chart_trajectories(const ScalarField& field, const FhatChart& fc, int count,
                                           const IntegratorControls& controls, int workers) {
  const TrajectorySpaceChart& ch = fc.chart;
  if (count <= 0 || fc.c.empty()) return {};
  const std::size_t m = std::min(ch.reference_points.size(), static_cast<std::size_t>(count));
  const std::vector<Vec> starts = field.dim() == 2 ? curve_starts(ch, field, m) : farthest_starts(ch, m);
  IntegratorControls ctl = controls;
  ctl.f_stop = std::min(controls.f_stop, 1e-3 * *std::min_element(fc.c.begin(), fc.c.end()));
  ctl.output_params.clear();
  return integrate_many(field, starts, Clock::level, ctl, workers);
}

CylinderChart extract_H(const ScalarField& field, const FhatChart& fc, const std::vector<Trajectory>& trajectories,
                        const ExtractOptions& options) {
  CylinderChart cc;
  cc.fhat = fc;
  const std::size_t m = trajectories.size();
  cc.crossings.assign(m, 0);
  std::vector<std::optional<HPoint>> found(m);
  std::vector<std::string> issue(m);
  std::vector<double> variation(m, 0.0), increase(m, -kInf);
  parallel_for(m, options.workers, [&](std::size_t k) {
    const Trajectory& tr = trajectories[k];
    try {
      const FhatValue v0 = evaluate_fhat_detail(field, fc, tr.front().x, options.controls);
      const double phi = v0.phi_hat;
      std::vector<double> g(tr.samples.size());
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = tr.samples[j].f * phi - 1.0;
      for (std::size_t j = 1; j < g.size(); ++j) increase[k] = std::max(increase[k], g[j] - g[j - 1]);
      if (options.retag_stride > 0) {
        double lo = phi, hi = phi;
        for (std::size_t j = 0; j < g.size(); j += static_cast<std::size_t>(options.retag_stride)) {
          if (!(tr.samples[j].f > options.controls.f_stop * 10.0)) continue;
          const double p = fc.phi_hat(tag_point(field, fc.chart, tr.samples[j].x, options.controls));
          lo = std::min(lo, p);
          hi = std::max(hi, p);
        }
        variation[k] = (hi - lo) / phi;
      }
      std::size_t at = g.size();
      int changes = 0;
      for (std::size_t j = 1; j < g.size(); ++j) {
        if ((g[j - 1] > 0.0) != (g[j] > 0.0)) {
          ++changes;
          at = j;
        }
      }
      cc.crossings[k] = changes;
      if (changes != 1) {
        std::ostringstream os;
        os << "trajectory " << k << ": " << changes << " sign changes of fhat - 1";
        if (changes == 0) os << (g.front() <= 0.0 ? " (starts below H)" : " (never reaches H)");
        issue[k] = os.str();
        return;
      }
      // Bisection in the trajectory parameter between the bracketing samples.
      double a = tr.samples[at - 1].s, b = tr.samples[at].s;
      Vec x = tr.samples[at].x;
      double r = g[at];
      for (int it = 0; it < 200 && std::abs(r) > options.tolerance; ++it) {
        const double mid = 0.5 * (a + b);
        x = tr.point_at(mid);
        r = field.f(x) * phi - 1.0;
        if (r > 0.0) {
          a = mid;
        } else {
          b = mid;
        }
      }
      HPoint hp;
      hp.x = x;
      hp.trajectory = k;
      hp.tag = v0.tag;
      hp.phi_hat = phi;
      hp.residual = r;
      hp.limit = retract(field, x, fc.chart.cert, options.controls);
      found[k] = std::move(hp);
    } catch (const Error& e) {
      issue[k] = "trajectory " + std::to_string(k) + ": " + e.what();
    }
  });
  cc.max_fhat_increase = m ? *std::max_element(increase.begin(), increase.end()) : 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    cc.max_phi_variation = std::max(cc.max_phi_variation, variation[k]);
    if (!issue[k].empty()) cc.violations.push_back(issue[k]);
    if (found[k]) {
      if (std::abs(found[k]->residual) > options.tolerance) {
        cc.violations.push_back("trajectory " + std::to_string(k) + ": bisection stalled at |fhat - 1| = " +
                                std::to_string(std::abs(found[k]->residual)));
      }
      cc.H_points.push_back(std::move(*found[k]));
    }
  }
  cc.valid = cc.violations.empty() && !cc.H_points.empty();
  return cc;
}

std::vector<Vec> cylinder_coords(const ScalarField& field, const CylinderChart& cc, std::size_t h_index,
                                 const std::vector<double>& ts, const IntegratorControls& controls) {
  if (h_index >= cc.H_points.size()) throw Error("cylinder_coords: H index out of range");
  const HPoint& hp = cc.H_points[h_index];
  const double fq = field.f(hp.x);
  std::vector<double> params;
  double t_min = 1.0;
  for (double t : ts) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error("cylinder_coords: t must lie in [0, 1]");
    if (t > 0.0 && t < 1.0) {
      params.push_back((1.0 - t) * fq);
      t_min = std::min(t_min, t);
    }
  }
  Trajectory tr;
  if (!params.empty()) {
    std::sort(params.begin(), params.end());
    params.erase(std::unique(params.begin(), params.end()), params.end());
    IntegratorControls ctl = controls;
    ctl.f_stop = std::min(controls.f_stop, 0.5 * t_min * fq);
    ctl.output_params = params;
    tr = integrate(field, hp.x, Clock::level, ctl);
    if (tr.back().s < params.back() * (1.0 - 1e-12)) {
      throw Error("cylinder_coords: flow from H point ended by " + to_string(tr.termination) + " before level " +
                  std::to_string(fq - params.back()));
    }
  }
  std::vector<Vec> out;
  out.reserve(ts.size());
  for (double t : ts) {
    if (t == 1.0) {
      out.push_back(hp.x);
    } else if (t == 0.0) {
      out.push_back(hp.limit);
    } else {
      out.push_back(tr.point_at((1.0 - t) * fq));
    }
  }
  return out;
}

Vec cylinder_coords(const ScalarField& field, const CylinderChart& cc, std::size_t h_index, double t,
                    const IntegratorControls& controls) {
  return cylinder_coords(field, cc, h_index, std::vector<double>{t}, controls).front();
}

CylinderReport verify_cylinder(const ScalarField& field, const CylinderChart& cc, const VerifyCylinderOptions& options) {
  CylinderReport rep;
  for (int c : cc.crossings) rep.single_crossing_failures += c == 1 ? 0 : 1;
  const std::size_t nh = cc.H_points.size();
  if (nh == 0) {
    rep.note = "no H points";
    return rep;
  }
  const std::size_t nq = std::min(nh, static_cast<std::size_t>(std::max(1, options.n_q)));
  const int nt = std::max(1, options.n_t);
  std::vector<std::size_t> qs(nq);
  for (std::size_t a = 0; a < nq; ++a) qs[a] = nq == 1 ? 0 : a * (nh - 1) / (nq - 1);
  std::vector<double> ts;
  for (int b = 1; b <= nt; ++b) ts.push_back(static_cast<double>(b) / nt);
  rep.n_q = static_cast<int>(nq);
  rep.n_t = nt;

  std::vector<std::vector<Vec>> img(nq);
  std::vector<double> lvl(nq, 0.0), rmis(nq, 0.0);
  parallel_for(nq, options.workers, [&](std::size_t a) {
    const HPoint& hp = cc.H_points[qs[a]];
    img[a] = cylinder_coords(field, cc, qs[a], ts, options.controls);
    const double fq = field.f(hp.x);
    for (std::size_t b = 0; b < ts.size(); ++b) lvl[a] = std::max(lvl[a], std::abs(field.f(img[a][b]) - ts[b] * fq));
    // The stored target came from the level clock; cross-check on the arclength clock.
    const Trajectory lc = limit_curve(field, hp.x, options.controls);
    rmis[a] = (*lc.limit_point - hp.limit).norm();
  });
  rep.max_level_error = *std::max_element(lvl.begin(), lvl.end());
  rep.retraction_mismatch = *std::max_element(rmis.begin(), rmis.end());

  std::vector<Vec> all;
  for (const auto& row : img) all.insert(all.end(), row.begin(), row.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) rep.min_pair_distance = std::min(rep.min_pair_distance, (all[i] - all[j]).norm());
  }
  for (std::size_t a = 0; a < nq; ++a) {
    for (std::size_t b = 0; b < ts.size(); ++b) {
      if (b + 1 < ts.size()) rep.continuity_modulus = std::max(rep.continuity_modulus, (img[a][b + 1] - img[a][b]).norm());
      if (a + 1 < nq) rep.continuity_modulus = std::max(rep.continuity_modulus, (img[a + 1][b] - img[a][b]).norm());
    }
  }

  Vec lo = cc.H_points.front().limit, hi = lo;
  for (const HPoint& hp : cc.H_points) {
    lo = lo.cwiseMin(hp.limit);
    hi = hi.cwiseMax(hp.limit);
  }
  rep.charted_extent = (hi - lo).norm();
  const double slack = 1e-9 * std::max(1.0, rep.charted_extent);
  // Boundary samples usually sit slightly off Z, so the box gets a margin well below the tolerance.
  const double reach = std::max(slack, 0.1 * options.coverage_tol * rep.charted_extent);
  for (const Vec& z : options.boundary_samples) {
    if ((z.array() < lo.array() - reach).any() || (z.array() > hi.array() + reach).any()) continue;
    double best = kInf;
    for (const HPoint& hp : cc.H_points) best = std::min(best, (hp.limit - z).norm());
    rep.coverage_gap = std::max(rep.coverage_gap, best);
    ++rep.boundary_samples_used;
  }
  const Vec mid = 0.5 * (lo + hi), quarter = 0.25 * (hi - lo);
  for (const HPoint& hp : cc.H_points) {
    if (((hp.limit - mid).array().abs() <= quarter.array() + slack).all()) {
      rep.preimage_h_extent = std::max(rep.preimage_h_extent, hp.tag.h);
    }
  }

  const bool coverage_ok = rep.boundary_samples_used == 0 || rep.coverage_gap < options.coverage_tol * rep.charted_extent;
  if (rep.boundary_samples_used == 0) rep.note = "no boundary samples inside the target box; coverage not checked";
  rep.passed = rep.single_crossing_failures == 0 && cc.valid && rep.max_level_error <= options.level_tol &&
               rep.min_pair_distance > 1e-9 * field.domain.box.diameter() && coverage_ok;
  return rep;
}

}  // namespace kl
