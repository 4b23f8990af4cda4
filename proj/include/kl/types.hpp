#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised for malformed inputs and violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box, used both as a domain and as a compact neighborhood K.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lo_, Vec hi_);

  /// Box with given center and per-axis half-widths.
  static Box centered(const Vec& center, const Vec& half_widths);
  static Box cube(int dim, double lo, double hi);

  int dim() const { return static_cast<int>(lo.size()); }
  Vec center() const { return 0.5 * (lo + hi); }
  double diameter() const { return (hi - lo).norm(); }
  bool contains(const Vec& x, double slack = 0.0) const;
  /// Euclidean distance from an interior point to the box frontier (0 outside).
  double distance_to_frontier(const Vec& x) const;
  Vec clamp(const Vec& x) const;
  Vec uniform(std::mt19937_64& rng) const;
};

/// Splits [0, count) across `workers` threads; fn(i) must touch only slot i.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace kl
