#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kl/field.hpp"

namespace kl {

struct LevelSample {
  std::vector<Vec> points;
  int seeds_total = 0;
  int seeds_converged = 0;
  /// Empty unless the level could not be sampled.
  std::string diagnostic;
  double coverage() const { return seeds_total ? static_cast<double>(seeds_converged) / seeds_total : 0.0; }
};

/// Points of f^{-1}(t) inside K with |f - t| <= 1e-9 t.
///
/// Newton projection from a stratified seed grid (32 per axis for n <= 3), then multi-source
/// breadth-first continuation along tangent directions with step diam(K)/512. Steps leaving K are
/// clamped onto the face and corrected within it, so extrema on the frontier of K are sampled.
/// The output is a deterministic prefix of length <= budget: a larger budget returns a superset.
LevelSample sample_level(const ScalarField& field, double t, const Box& K, int budget);

/// Sampled min and max of |grad f|. These are inner estimates: min >= inf, max <= sup.
std::pair<double, double> gradient_extrema(const ScalarField& field, const std::vector<Vec>& points);

/// Pattern search along f^{-1}(t) within K for a local extremum of |grad f| (minimum or maximum),
/// from a point of the level. Steps shrink to 1e-13 diam(K).
Vec refine_extremum(const ScalarField& field, double t, const Box& K, const Vec& start, bool minimize);

/// Level points at distances step 2^{-k/2}, k < rings, along each tangent direction at `center`.
std::vector<Vec> zoom_ring(const ScalarField& field, double t, const Box& K, const Vec& center, double step,
                           int rings);

struct LevelStats {
  double t = 0.0;
  int n_samples = 0;
  double min_grad = 0.0;
  double max_grad = 0.0;
  double alpha = 0.0;  // 1/min_grad, biased low
  double beta = 0.0;   // 1/max_grad, biased high
  double coverage = 0.0;
  bool empty() const { return n_samples == 0; }
};

struct LevelSetProfile {
  Box K;
  double rho = 0.0;
  std::vector<LevelStats> levels;  // t decreasing
  bool unreliable = false;

  int empty_levels() const;
  /// Nonempty levels as ascending (t, value) pairs.
  std::vector<std::pair<double, double>> alpha_curve() const;
  std::vector<std::pair<double, double>> beta_curve() const;
};

/// Levels t_j = rho 2^{-j}, j = 0..m-1, processed in parallel. The sampled extrema of |grad f| are
/// polished with refine_extremum. More than 20% empty levels marks the profile unreliable.
LevelSetProfile build_profile(const ScalarField& field, const Box& K, double rho, int m, int budget,
                              int workers = 1);

}  // namespace kl
