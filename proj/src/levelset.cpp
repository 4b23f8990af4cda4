#include "kl/levelset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

namespace kl {

namespace {

Vec differential(const ScalarField& field, const Vec& x) {
  const Vec g = field.grad(x);
  return field.metric ? Vec(field.metric(x) * g) : g;
}

// Newton projection onto f = t along df. Coordinates in `pinned` stay fixed; others are pinned on
// the faces of K they would leave. Backtracks when a full step increases the residual.
bool project(const ScalarField& field, const Box& K, Vec& x, double t, double tol,
             const std::vector<bool>& pinned = {}) {
  double r = field.f(x) - t;
  for (int it = 0; it < 100; ++it) {
    if (std::abs(r) <= tol) return true;
    Vec d = differential(field, x);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double move = -r * d[i];
      if ((x[i] <= K.lo[i] && move < 0.0) || (x[i] >= K.hi[i] && move > 0.0)) d[i] = 0.0;
      if (!pinned.empty() && pinned[static_cast<std::size_t>(i)]) d[i] = 0.0;
    }
    const double dn2 = d.squaredNorm();
    if (!(dn2 > 0.0)) return false;
    const Vec step = (r / dn2) * d;
    bool improved = false;
    for (double lam = 1.0; lam > 1e-3; lam *= 0.5) {
      const Vec y = K.clamp(x - lam * step);
      const double ry = field.f(y) - t;
      if (std::abs(ry) < std::abs(r)) {
        x = y;
        r = ry;
        improved = true;
        break;
      }
    }
    if (!improved) return false;
  }
  return std::abs(r) <= tol;
}

// Unit directions spanning the tangent space of the level set at a point with differential d.
std::vector<Vec> tangent_directions(const Vec& d) {
  const auto n = d.size();
  std::vector<Vec> dirs;
  if (n < 2) return dirs;
  if (n == 2) {
    const Vec tau = (Vec(2) << -d[1], d[0]).finished().normalized();
    return {tau, Vec(-tau)};
  }
  const Mat dm = d;
  Eigen::HouseholderQR<Mat> qr(dm);
  const Mat Q = qr.householderQ() * Mat::Identity(n, n);
  if (n == 3) {
    const Vec u = Q.col(1), v = Q.col(2);
    for (int k = 0; k < 6; ++k) {
      const double a = k * M_PI / 3.0;
      dirs.push_back(std::cos(a) * u + std::sin(a) * v);
    }
    return dirs;
  }
  for (Eigen::Index j = 1; j < n; ++j) {
    dirs.push_back(Q.col(j));
    dirs.push_back(-Q.col(j));
  }
  return dirs;
}

// Kept points bucketed on a grid with cell size `radius`.
class SpacedSet {
 public:
  SpacedSet(double radius, int dim) : radius_(radius), dim_(dim) {}

  /// Inserts unless a kept point lies within `min_dist` (<= the bucket size) of x.
  bool try_insert(const Vec& x, double min_dist) {
    const std::vector<long> c = cell(x);
    bool clash = false;
    visit_neighbors(c, 0, std::vector<long>(c), [&](const std::vector<long>& key) {
      const auto it = cells_.find(hash(key));
      if (it == cells_.end()) return;
      for (std::size_t idx : it->second) {
        if ((points_[idx] - x).norm() < min_dist) clash = true;
      }
    });
    if (clash) return false;
    cells_[hash(c)].push_back(points_.size());
    points_.push_back(x);
    return true;
  }

  const std::vector<Vec>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<long> cell(const Vec& x) const {
    std::vector<long> c(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) c[static_cast<std::size_t>(i)] = static_cast<long>(std::floor(x[i] / radius_));
    return c;
  }
  static std::size_t hash(const std::vector<long>& key) {
    std::size_t h = 1469598103934665603ull;
    for (long k : key) h = (h ^ static_cast<std::size_t>(k)) * 1099511628211ull;
    return h;
  }
  template <class Fn>
  void visit_neighbors(const std::vector<long>& base, int axis, std::vector<long> cur, Fn&& fn) const {
    if (axis == dim_) {
      fn(cur);
      return;
    }
    for (long o = -1; o <= 1; ++o) {
      cur[static_cast<std::size_t>(axis)] = base[static_cast<std::size_t>(axis)] + o;
      visit_neighbors(base, axis + 1, cur, fn);
    }
  }

  double radius_;
  int dim_;
  std::vector<Vec> points_;
  // Hash collisions only merge buckets; distances are always checked exactly.
  std::unordered_map<std::size_t, std::vector<std::size_t>> cells_;
};

}  // namespace

LevelSample sample_level(const ScalarField& field, double t, const Box& K, int budget) {
  if (!(t > 0.0)) throw Error("sample_level: level must be positive");
  if (K.dim() != field.dim()) throw Error("sample_level: box dimension mismatch");
  const int n = K.dim();
  const int per_axis = n <= 3 ? 32 : std::max(2, static_cast<int>(std::pow(32768.0, 1.0 / n)));
  long total = 1;
  for (int i = 0; i < n; ++i) total *= per_axis;

  LevelSample out;
  out.seeds_total = static_cast<int>(total);
  const double tol = 1e-9 * t;
  const double delta = K.diameter() / 512.0;

  std::vector<Vec> converged;
  double f_max = 0.0;
  for (long idx = 0; idx < total; ++idx) {
    Vec x(n);
    long rem = idx;
    for (int i = 0; i < n; ++i) {
      const double u = (static_cast<double>(rem % per_axis) + 0.5) / per_axis;
      rem /= per_axis;
      x[i] = K.lo[i] + u * (K.hi[i] - K.lo[i]);
    }
    f_max = std::max(f_max, field.f(x));
    if (project(field, K, x, t, tol)) converged.push_back(x);
  }
  out.seeds_converged = static_cast<int>(converged.size());
  if (converged.empty()) {
    out.diagnostic = t >= f_max ? "level above the sampled max of f on K (" + std::to_string(f_max) + ")"
                                : "no seed converged onto the level";
    return out;
  }
  if (budget <= 0) {
    out.diagnostic = "budget is zero";
    return out;
  }

  const double spacing = 0.5 * delta;
  const double dedup = 1e-4 * K.diameter();
  SpacedSet kept(spacing, n);
  std::deque<std::size_t> queue;
  for (const Vec& x : converged) {
    if (kept.size() >= static_cast<std::size_t>(budget)) break;
    if (kept.try_insert(x, spacing)) queue.push_back(kept.size() - 1);
  }
  while (!queue.empty() && kept.size() < static_cast<std::size_t>(budget)) {
    const Vec x = kept.points()[queue.front()];
    queue.pop_front();
    for (const Vec& tau : tangent_directions(differential(field, x))) {
      if (kept.size() >= static_cast<std::size_t>(budget)) break;
      const Vec raw = x + delta * tau;
      Vec y = K.clamp(raw);
      // A step through a face of K continues within that face.
      std::vector<bool> pinned(static_cast<std::size_t>(n));
      bool on_face = false;
      for (int i = 0; i < n; ++i) {
        pinned[static_cast<std::size_t>(i)] = raw[i] != y[i];
        on_face = on_face || raw[i] != y[i];
      }
      if (!project(field, K, y, t, tol, pinned)) continue;
      // Face points carry the boundary extrema, so they only need to clear the dedup resolution.
      if (kept.try_insert(y, on_face ? dedup : spacing)) queue.push_back(kept.size() - 1);
    }
  }
  out.points = kept.points();
  return out;
}

namespace {

// One predictor-corrector step along the level; a step through a face of K continues within it.
bool level_step(const ScalarField& field, const Box& K, double t, const Vec& x, const Vec& dir, Vec& y) {
  const Vec raw = x + dir;
  y = K.clamp(raw);
  std::vector<bool> pinned(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) pinned[static_cast<std::size_t>(i)] = raw[i] != y[i];
  return project(field, K, y, t, 1e-9 * t, pinned);
}

}  // namespace

Vec refine_extremum(const ScalarField& field, double t, const Box& K, const Vec& start, bool minimize) {
  const double sign = minimize ? 1.0 : -1.0;
  auto score = [&](const Vec& x) { return sign * field.grad(x).norm(); };
  Vec x = start;
  double best = score(x);
  double sigma = K.diameter() / 512.0;
  const double sigma_min = 1e-13 * K.diameter();
  for (int it = 0; it < 2000 && sigma > sigma_min; ++it) {
    bool improved = false;
    for (const Vec& tau : tangent_directions(differential(field, x))) {
      Vec y;
      if (!level_step(field, K, t, x, sigma * tau, y)) continue;
      const double s = score(y);
      if (s < best) {
        best = s;
        x = y;
        improved = true;
        break;
      }
    }
    sigma *= improved ? 2.0 : 0.5;
  }
  return x;
}

std::vector<Vec> zoom_ring(const ScalarField& field, double t, const Box& K, const Vec& center, double step,
                           int rings) {
  std::vector<Vec> out;
  const std::vector<Vec> dirs = tangent_directions(differential(field, center));
  for (int k = 0; k < rings; ++k) {
    const double r = step * std::exp2(-0.5 * k);
    for (const Vec& tau : dirs) {
      Vec y;
      if (level_step(field, K, t, center, r * tau, y)) out.push_back(y);
    }
  }
  return out;
}

std::pair<double, double> gradient_extrema(const ScalarField& field, const std::vector<Vec>& points) {
  if (points.empty()) throw Error("gradient_extrema: no points");
  double lo = kInf, hi = 0.0;
  for (const Vec& x : points) {
    const double g = field.grad(x).norm();
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  return {lo, hi};
}

int LevelSetProfile::empty_levels() const {
  return static_cast<int>(std::count_if(levels.begin(), levels.end(), [](const LevelStats& s) { return s.empty(); }));
}

namespace {

std::vector<std::pair<double, double>> curve(const std::vector<LevelStats>& levels, double LevelStats::*field) {
  std::vector<std::pair<double, double>> c;
  for (const auto& s : levels) {
    if (!s.empty()) c.emplace_back(s.t, s.*field);
  }
  std::sort(c.begin(), c.end());
  return c;
}

}  // namespace

std::vector<std::pair<double, double>> LevelSetProfile::alpha_curve() const { return curve(levels, &LevelStats::alpha); }
std::vector<std::pair<double, double>> LevelSetProfile::beta_curve() const { return curve(levels, &LevelStats::beta); }

LevelSetProfile build_profile(const ScalarField& field, const Box& K, double rho, int m, int budget, int workers) {
  if (!(rho > 0.0)) throw Error("build_profile: rho must be positive");
  if (m < 1) throw Error("build_profile: need at least one level");
  LevelSetProfile prof;
  prof.K = K;
  prof.rho = rho;
  prof.levels.resize(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), workers, [&](std::size_t j) {
    LevelStats& s = prof.levels[j];
    s.t = rho * std::exp2(-static_cast<double>(j));
    const LevelSample ls = sample_level(field, s.t, K, budget);
    s.n_samples = static_cast<int>(ls.points.size());
    s.coverage = ls.coverage();
    if (ls.points.empty()) return;
    auto [lo, hi] = gradient_extrema(field, ls.points);
    // Sampled extrema are resolved only to the continuation step; polish them along the level.
    const auto by_grad = [&](const Vec& a, const Vec& b) { return field.grad(a).norm() < field.grad(b).norm(); };
    const Vec arg_lo = *std::min_element(ls.points.begin(), ls.points.end(), by_grad);
    const Vec arg_hi = *std::max_element(ls.points.begin(), ls.points.end(), by_grad);
    lo = std::min(lo, field.grad(refine_extremum(field, s.t, K, arg_lo, true)).norm());
    hi = std::max(hi, field.grad(refine_extremum(field, s.t, K, arg_hi, false)).norm());
    s.min_grad = lo;
    s.max_grad = hi;
    s.alpha = lo > 0.0 ? 1.0 / lo : kInf;
    s.beta = hi > 0.0 ? 1.0 / hi : kInf;
  });
  prof.unreliable = prof.empty_levels() > 0.2 * m;
  return prof;
}

}  // namespace kl
