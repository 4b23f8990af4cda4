#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kl/desing.hpp"
#include "kl/levelset.hpp"

namespace kl {

enum class SemiKind { lower, upper };
std::string to_string(SemiKind k);

/// Positive one-sided-semicontinuous u on (0, r0], known through pointwise evaluation on a grid.
/// The grid must contain every point where u jumps (dips for lower kind, spikes for upper).
struct SemicontinuousProfile {
  double r0 = 1.0;
  SemiKind kind = SemiKind::lower;
  std::function<double(double)> evaluator;
  /// Ascending base grid in (0, r0].
  std::vector<double> grid;

  /// Base grid plus r0, with every cell split into 2^levels equal parts.
  std::vector<double> refined(int levels) const;
};

/// Moreau envelope e(x) = min_j u_j + (x - s_j)^2 / (2 lambda) of the samples (s_j, u_j) at the
/// query points, by the lower envelope of parabolas. s and x ascending. e <= u at s exactly.
std::vector<double> moreau_envelope(const std::vector<double>& s, const std::vector<double>& u, double lambda,
                                    const std::vector<double>& x);

/// Envelope of a lower-kind profile on the grid nodes inside [a, b].
Curve moreau_envelope(const SemicontinuousProfile& u, double lambda, double a, double b, int refine = 0);

struct EnvelopeOptions {
  /// Maximum lambda halvings per interval.
  int budget = 60;
  /// Per-interval L1 targets are defect_scale / (k + 1)^2.
  double defect_scale = 1.0;
  /// Grid refinement levels applied to the profile's base grid.
  int refine = 0;
  /// Intervals below this t are dropped; 0 keeps everything down to the smallest grid point.
  double resolution_floor = 0.0;
  int workers = 1;
};

/// Per-interval record [a_{k+1}, a_k].
struct EnvelopePiece {
  int k = 0;
  double a_lo = 0.0, a_hi = 0.0;
  double lambda = 0.0;
  int halvings = 0;
  double defect = 0.0;  // int of |u - e_lambda| on the interval
  bool target_met = false;
  /// Stitch at a_hi with the next coarser piece: factor m, ramp width eps, and the side that was
  /// scaled ("low" = this piece, "high" = its neighbor, "none" when the values agree).
  double m = 1.0;
  double eps = 0.0;
  std::string stitched_side = "none";
  double stitch_correction = 0.0;
  bool stitch_met = true;
};

struct EnvelopeResult {
  SemiKind kind = SemiKind::lower;
  /// Reflection ceiling for the upper kind (2 max u), 0 for the lower kind.
  double ceiling = 0.0;
  std::vector<double> t, u, w;
  std::vector<EnvelopePiece> pieces;
  /// max over nodes of the wrong-side excess.
  double side_violation = 0.0;
  /// Trapezoid estimate of int |u - w| over the covered range.
  double l1_gap = 0.0;
  /// Largest difference between w at adjacent nodes.
  double continuity_modulus = 0.0;
  /// Largest mismatch between adjacent pieces at the a_k after stitching.
  double max_stitch_jump = 0.0;
  bool partial = false;
  std::string note;

  /// w between nodes by log-log interpolation; below the first node w is continued as a power
  /// law with exponent `tail_exponent` (w ~ t^{-tail_exponent}).
  double value(double x, double tail_exponent = 0.0) const;
};

/// Continuous w on the correct side of u with int |u - w| controlled: Moreau envelopes on the
/// dyadic intervals a_k = r0 2^{-k} with lambda halving, stitched by affine factors at the a_k.
/// The upper kind runs the lower construction on 2 max(u) - u.
EnvelopeResult build_envelope(const SemicontinuousProfile& u, const EnvelopeOptions& options = {});

struct AlphaMajorant {
  EnvelopeResult envelope;
  VerdictResult verdict;
  /// a = 1/w on (0, rho], w >= alpha-hat at the grid nodes.
  std::function<double(double)> a;
};

/// Upper-kind envelope of the alpha-hat curve (log-log interpolated between levels) and its
/// reciprocal. Throws unless alpha-hat is integrable.
AlphaMajorant integrable_majorant_for_alpha(const LevelSetProfile& profile, const EnvelopeOptions& options);
AlphaMajorant integrable_majorant_for_alpha(const Curve& alpha, double rho, const EnvelopeOptions& options);

}  // namespace kl
