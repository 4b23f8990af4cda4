#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kl/profile.hpp"
#include "kl/types.hpp"

namespace kl {

using PointFn = std::function<double(const Vec&)>;
using VecFn = std::function<Vec(const Vec&)>;
using MatFn = std::function<Mat(const Vec&)>;

/// Boxed domain with the distance to its frontier d(x, dM).
struct DomainSpec {
  Box box;
  /// Defaults to the distance to the box frontier when unset.
  PointFn boundary_distance;
  /// Distance to the zero locus; only used by validation and tests.
  PointFn zero_locus_distance;

  int dim() const { return box.dim(); }
  double margin(const Vec& x) const;
};

/// Nonnegative field with its gradient. With a metric g, `grad` is g^{-1} df; all norms of the
/// gradient vector are Euclidean.
struct ScalarField {
  std::string name;
  DomainSpec domain;
  PointFn f;
  VecFn grad;
  MatFn metric;
  MatFn hess;
  /// Continuous but not C1 across the boundary of the zero locus.
  bool c1_only_off_zero = false;

  int dim() const { return domain.dim(); }
  double value(const Vec& x) const { return f(x); }
  Vec gradient(const Vec& x) const { return grad(x); }
  /// df(grad f) = <metric * grad, grad>; the rate at which f decreases along -grad.
  double slope(const Vec& x, const Vec& g) const;

  /// Random-sampling checks: f >= 0 in the box, and grad = g^{-1} * (finite-difference df)
  /// to relative tolerance `rel_tol` when a metric is present. Throws kl::Error naming the point.
  void validate(std::mt19937_64& rng, int samples = 200, double rel_tol = 1e-5) const;
};

/// Central finite-difference Euclidean differential.
Vec finite_difference_differential(const ScalarField& field, const Vec& x, double h = 1e-6);

enum class PrimitiveKind { point, circle, segment, disk };

/// Zero locus for distance fields. Circles and disks are spheres and balls in n > 2.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::point;
  Vec center;
  double radius = 0.0;
  Vec a, b;  // segment endpoints

  static Primitive point(Vec c);
  static Primitive circle(Vec c, double r);
  static Primitive disk(Vec c, double r);
  static Primitive segment(Vec a, Vec b);
};

struct FieldZooEntry {
  std::string name;
  ScalarField field;
  std::optional<KLCertificate> known_certificate;
  std::optional<double> known_exponent;
  std::string notes;
};

/// x -> d(x, Z)^p with certificate Psi(t) = t^{1/p}. Zero-radius circles and disks are relabeled
/// as points (see `notes`).
FieldZooEntry make_distance_power_field(double p, const Primitive& zero_set, const Box& box);

/// Positive part of 1/2 (x_1^2 + ... + x_k^2 - x_{k+1}^2 - ... - x_n^2), gradient g^{-1} J x.
/// The certificate is Psi(t) = sqrt(2t / C) with C = 0.99 * min over a grid of lambda_min(G),
/// G = (g^{-1} J)^T (g^{-1} J).
FieldZooEntry make_morse_field(int k, const Box& box, MatFn metric = {});

/// Smallest eigenvalue of G over a grid with `per_axis` points per axis (unshrunk).
double morse_spectral_bound(int k, const Box& box, const MatFn& metric, int per_axis = 33);

/// Radial field f(x) = F(|x|) with F' = sqrt(b(F)), F(0) = 0, tabulated by inverting
/// r(F) = int_0^F b^{-1/2}. The attached certificate is Psi = r, which is tight.
FieldZooEntry make_transnormal_field(std::function<double(double)> b, const Box& box);

/// psi o f with gradient psi'(f) grad f (zero on the zero locus).
ScalarField compose_with_psi(const ScalarField& field, const Profile1D& psi);

/// Names accepted by `zoo_entry`.
std::vector<std::string> zoo_names();
FieldZooEntry zoo_entry(const std::string& name);
std::vector<FieldZooEntry> field_zoo();

/// Field from definition text: name, dimension, box, f, optional metric, optional known psi
/// as `psi = coefficient exponent` (with `rho`). See README for the format.
FieldZooEntry field_from_definition(const std::string& text, const std::string& source = "<field>");

/// Zoo name or definition file path.
FieldZooEntry load_field(const std::string& name_or_path);

}  // namespace kl
