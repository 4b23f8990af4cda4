#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kl/types.hpp"

namespace kl {

/// Geometric grid rho*2^{-j/per_octave} down to (and including) a point <= t_min, ascending.
std::vector<double> geometric_grid(double rho, double t_min, int per_octave);

/// Monotone 1D profile on [0, rho): either closed-form or tabulated (grid, values, derivatives).
///
/// Tabulated profiles interpolate by cubic Hermite between grid points. Below the first grid
/// point they continue as the power law through the origin matching value and log-slope there.
class Profile1D {
 public:
  Profile1D() = default;

  static Profile1D tabulated(std::vector<double> grid, std::vector<double> values,
                             std::vector<double> derivs);
  static Profile1D analytic(std::function<double(double)> value,
                            std::function<double(double)> deriv, std::vector<double> grid);
  /// coef * t^exponent, tabulated on a geometric grid over (0, rho].
  static Profile1D power_law(double coef, double exponent, double rho);

  double value(double t) const;
  double derivative(double t) const;

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& derivs() const { return derivs_; }
  bool empty() const { return grid_.empty() && !value_fn_; }
  bool is_analytic() const { return static_cast<bool>(value_fn_); }

  /// Strictly increasing values on the grid and positive derivatives on (0, last grid point].
  bool strictly_increasing() const;

 private:
  std::vector<double> grid_;
  std::vector<double> values_;
  std::vector<double> derivs_;
  std::function<double(double)> value_fn_;
  std::function<double(double)> deriv_fn_;
};

enum class CertSource { user, power_law_fit, built_from_a, known };

std::string to_string(CertSource s);

/// Desingularization triple (rho, U, Psi): Psi'(f)|grad f| >= 1 on U with 0 < f < rho.
struct KLCertificate {
  double rho = 0.0;
  Box U;
  Profile1D psi;
  CertSource source = CertSource::user;

  /// Throws kl::Error unless psi(0)=0, psi is strictly increasing and rho > 0.
  void validate() const;
};

}  // namespace kl
