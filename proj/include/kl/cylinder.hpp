#pragma once

#include <string>
#include <vector>

#include "kl/field.hpp"
#include "kl/flow.hpp"

namespace kl {

/// C1 hat of width 2/3 centred at `center`: 1 within 1/6, 0 beyond 1/3, smoothstep in between.
/// Hats centred on the half-integers sum to 1 on [0, inf).
double hat_weight(double h, double center);
double hat_weight_derivative(double h, double center);

struct ChartOptions {
  /// Sample budget for the reference level.
  int budget = 4000;
  /// Exhaustion units: h = graph distance / h_scale.
  double h_scale = 1.0;
  int workers = 1;
};

/// Connected piece of the sampled reference level. Compact pieces (away from the edge of V and of
/// U) get h = 0 and a single bucket.
struct ChartComponent {
  std::vector<std::size_t> members;
  std::size_t base = 0;
  bool compact = false;
  double h_max = 0.0;
  /// Global bucket indices are bucket_offset + 1 .. bucket_offset + bucket_count.
  int bucket_offset = 0;
  int bucket_count = 1;
};

/// Bucket A_i = h^{-1}((center - 1/3, center + 1/3)) within one component; index i >= 1 is global.
struct Bucket {
  int index = 1;
  int component = 0;
  double center = 0.0;
  std::vector<std::size_t> members;
};

/// Position of a trajectory in trajectory space: its component and exhaustion value.
struct RefTag {
  int component = 0;
  double h = 0.0;
  /// Where the trajectory meets the reference level.
  Vec q;
  std::size_t nearest = 0;
};

/// Reference level f^{-1}(c_ref) in V standing in for trajectory space.
struct TrajectorySpaceChart {
  KLCertificate cert;
  double c_ref = 0.0;
  std::vector<Vec> reference_points;
  std::vector<double> h;
  std::vector<int> component_of;
  std::vector<std::vector<std::size_t>> neighbors;
  /// Link radius of the neighbor graph.
  double link = 0.0;
  std::vector<ChartComponent> components;
  std::vector<Bucket> buckets;

  int bucket_count() const { return static_cast<int>(buckets.size()); }
  /// Nonzero (global index, weight) pairs at exhaustion value h of a component; at most two.
  std::vector<std::pair<int, double>> weights(int component, double h) const;
  /// Component and h of a point on the reference level, from its nearest sampled neighbors.
  /// Throws if the point is farther than 2 link from every sample.
  RefTag locate(const Vec& q) const;
};

/// Samples f^{-1}(c_ref) within V, splits it into components by the neighbor graph and sets h to
/// the graph distance from the sample nearest each component's centroid.
TrajectorySpaceChart build_chart(const ScalarField& field, const KLCertificate& cert, double c_ref,
                                 const ChartOptions& options = {});

struct CSequenceOptions {
  /// Trajectories must stay this far (times the box diameter) from the frontier down to c_n.
  double containment = 1e-3;
  int max_halvings = 60;
  IntegratorControls controls;
  int workers = 1;
};

struct CSequence {
  /// c[i - 1] belongs to global bucket i.
  std::vector<double> c;
  std::vector<int> halvings;
  bool ok = false;
  std::string failure;
};

/// c_n = c_ref 2^{-n}, halved while some reference trajectory in buckets <= n fails to reach
/// level c_n inside the box with margin. Every accepted c_{n+1} <= c_n / 2.
CSequence choose_c_sequence(const ScalarField& field, const TrajectorySpaceChart& chart,
                            const CSequenceOptions& options = {});

/// Chart plus sequence: enough to evaluate fhat.
struct FhatChart {
  TrajectorySpaceChart chart;
  std::vector<double> c;

  /// Phi-hat = sum_i phi_i(h) / c_i.
  double phi_hat(const RefTag& tag) const;
};

struct FhatValue {
  double fhat = 0.0;
  double phi_hat = 0.0;
  RefTag tag;
};

/// Moves x along its trajectory to the reference level (ascending below it, descending above).
/// Throws if the trajectory leaves the box first or lands outside the sampled level.
RefTag tag_point(const ScalarField& field, const TrajectorySpaceChart& chart, const Vec& x,
                 const IntegratorControls& controls = {});

FhatValue evaluate_fhat_detail(const ScalarField& field, const FhatChart& fc, const Vec& x,
                               const IntegratorControls& controls = {});
/// f(x) Phi-hat(x).
double evaluate_fhat(const ScalarField& field, const FhatChart& fc, const Vec& x,
                     const IntegratorControls& controls = {});

struct HPoint {
  Vec x;
  std::size_t trajectory = 0;
  RefTag tag;
  double phi_hat = 0.0;
  double residual = 0.0;  // fhat(x) - 1
  /// Retraction R(x).
  Vec limit;
};

struct ExtractOptions {
  double tolerance = 1e-8;
  /// Re-tag every k-th sample independently (0 = never) to measure Phi-hat constancy.
  int retag_stride = 0;
  IntegratorControls controls;
  int workers = 1;
};

struct CylinderChart {
  FhatChart fhat;
  std::vector<HPoint> H_points;
  /// Per input trajectory: number of sign changes of fhat - 1.
  std::vector<int> crossings;
  /// Largest relative spread of Phi-hat among re-tagged samples of one trajectory.
  double max_phi_variation = 0.0;
  /// Largest sign-change step in fhat among samples (must be negative).
  double max_fhat_increase = 0.0;
  std::vector<std::string> violations;
  bool valid = false;
};

/// Locates fhat = 1 on each trajectory by bisection in its parameter. Trajectories without exactly
/// one sign change are reported in `violations` and make the chart invalid.
CylinderChart extract_H(const ScalarField& field, const FhatChart& fc, const std::vector<Trajectory>& trajectories,
                        const ExtractOptions& options = {});

/// Level-clock trajectories from `count` starts on the reference level, run below the smallest c.
/// In the plane the starts are equally spaced in arclength along each component; otherwise they
/// are picked from the samples by farthest-point selection.
std::vector<Trajectory> chart_trajectories(const ScalarField& field, const FhatChart& fc, int count,
                                           const IntegratorControls& controls = {}, int workers = 1);

/// Phi(q, t) = gamma_q((1 - t) f(q)) on the level clock: t = 1 is q, t = 0 the limit R(q).
std::vector<Vec> cylinder_coords(const ScalarField& field, const CylinderChart& cc, std::size_t h_index,
                                 const std::vector<double>& ts, const IntegratorControls& controls = {});
Vec cylinder_coords(const ScalarField& field, const CylinderChart& cc, std::size_t h_index, double t,
                    const IntegratorControls& controls = {});

struct VerifyCylinderOptions {
  int n_q = 20;
  int n_t = 20;
  /// Samples of the frontier of Z; only those inside the hull box of the limit targets (widened by
  /// coverage_tol / 10 of its diameter) count.
  std::vector<Vec> boundary_samples;
  /// Coverage gap allowed, relative to the diameter of the limit-target box.
  double coverage_tol = 0.01;
  double level_tol = 1e-8;
  IntegratorControls controls;
  int workers = 1;
};

struct CylinderReport {
  int n_q = 0, n_t = 0;
  /// max |f(Phi(q,t)) - t f(q)|.
  double max_level_error = 0.0;
  /// Smallest distance between images of distinct grid pairs.
  double min_pair_distance = kInf;
  /// Largest step between images of grid neighbors.
  double continuity_modulus = 0.0;
  /// max |Phi(q, 0) - R(q)|.
  double retraction_mismatch = 0.0;
  double charted_extent = 0.0;
  double coverage_gap = 0.0;
  int boundary_samples_used = 0;
  /// Largest h among H points whose targets fall in the central half of the target box.
  double preimage_h_extent = 0.0;
  int single_crossing_failures = 0;
  bool passed = false;
  std::string note;
};

CylinderReport verify_cylinder(const ScalarField& field, const CylinderChart& cc,
                               const VerifyCylinderOptions& options = {});

}  // namespace kl
