#include "kl/profile.hpp"

#include <algorithm>
#include <cmath>

namespace kl {

std::vector<double> geometric_grid(double rho, double t_min, int per_octave) {
  if (!(rho > 0.0) || !(t_min > 0.0) || per_octave < 1) {
    throw Error("geometric_grid: need rho > 0, t_min > 0, per_octave >= 1");
  }
  std::vector<double> g;
  for (int j = 0;; ++j) {
    const double t = rho * std::exp2(-static_cast<double>(j) / per_octave);
    g.push_back(t);
    if (t <= t_min) break;
  }
  std::reverse(g.begin(), g.end());
  return g;
}

Profile1D Profile1D::tabulated(std::vector<double> grid, std::vector<double> values,
                               std::vector<double> derivs) {
  if (grid.size() < 2 || grid.size() != values.size() || grid.size() != derivs.size()) {
    throw Error("profile: need at least two grid points with matching values/derivatives");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error("profile: grid must be strictly ascending");
  }
  if (grid.front() < 0.0) throw Error("profile: grid must lie in [0, rho)");
  Profile1D p;
  p.grid_ = std::move(grid);
  p.values_ = std::move(values);
  p.derivs_ = std::move(derivs);
  return p;
}

Profile1D Profile1D::analytic(std::function<double(double)> value,
                              std::function<double(double)> deriv, std::vector<double> grid) {
  Profile1D p;
  p.value_fn_ = std::move(value);
  p.deriv_fn_ = std::move(deriv);
  p.grid_ = std::move(grid);
  p.values_.reserve(p.grid_.size());
  p.derivs_.reserve(p.grid_.size());
  for (double t : p.grid_) {
    p.values_.push_back(p.value_fn_(t));
    p.derivs_.push_back(p.deriv_fn_(t));
  }
  return p;
}

Profile1D Profile1D::power_law(double coef, double exponent, double rho) {
  if (!(coef > 0.0) || !(exponent > 0.0)) {
    throw Error("power-law profile: coefficient and exponent must be positive");
  }
  return analytic([coef, exponent](double t) { return t > 0.0 ? coef * std::pow(t, exponent) : 0.0; },
                  [coef, exponent](double t) {
                    return t > 0.0 ? coef * exponent * std::pow(t, exponent - 1.0)
                                   : (exponent < 1.0 ? kInf : (exponent == 1.0 ? coef : 0.0));
                  },
                  geometric_grid(rho, rho * 1e-12, 4));
}

namespace {

struct HermiteSpan {
  double t0, t1, v0, v1, d0, d1;

  double value(double t) const {
    const double h = t1 - t0;
    const double s = (t - t0) / h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * v0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * v1 +
           (s3 - s2) * h * d1;
  }
  double derivative(double t) const {
    const double h = t1 - t0;
    const double s = (t - t0) / h;
    const double s2 = s * s;
    return ((6 * s2 - 6 * s) * v0 + (-6 * s2 + 6 * s) * v1) / h + (3 * s2 - 4 * s + 1) * d0 +
           (3 * s2 - 2 * s) * d1;
  }
};

}  // namespace

double Profile1D::value(double t) const {
  if (value_fn_) return value_fn_(t);
  if (grid_.empty()) throw Error("profile: empty");
  if (t <= 0.0) return grid_.front() == 0.0 ? values_.front() : 0.0;
  if (t < grid_.front()) {
    const double t0 = grid_.front(), v0 = values_.front();
    if (v0 <= 0.0) return v0 * t / t0;
    const double e = t0 * derivs_.front() / v0;
    return v0 * std::pow(t / t0, e);
  }
  if (t >= grid_.back()) return values_.back() + derivs_.back() * (t - grid_.back());
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - grid_.begin()) - 1;
  return HermiteSpan{grid_[i], grid_[i + 1], values_[i], values_[i + 1], derivs_[i], derivs_[i + 1]}
      .value(t);
}

double Profile1D::derivative(double t) const {
  if (deriv_fn_) return deriv_fn_(t);
  if (grid_.empty()) throw Error("profile: empty");
  if (t < grid_.front()) {
    const double t0 = grid_.front(), v0 = values_.front();
    if (v0 <= 0.0 || t <= 0.0) return derivs_.front();
    const double e = t0 * derivs_.front() / v0;
    return e * v0 * std::pow(t / t0, e) / t;
  }
  if (t >= grid_.back()) return derivs_.back();
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - grid_.begin()) - 1;
  return HermiteSpan{grid_[i], grid_[i + 1], values_[i], values_[i + 1], derivs_[i], derivs_[i + 1]}
      .derivative(t);
}

bool Profile1D::strictly_increasing() const {
  for (std::size_t i = 1; i < values_.size(); ++i) {
    if (!(values_[i] > values_[i - 1])) return false;
  }
  for (std::size_t i = 0; i < derivs_.size(); ++i) {
    if (grid_[i] > 0.0 && !(derivs_[i] > 0.0)) return false;
  }
  return true;
}

std::string to_string(CertSource s) {
  switch (s) {
    case CertSource::user: return "user";
    case CertSource::power_law_fit: return "power_law_fit";
    case CertSource::built_from_a: return "built_from_a";
    case CertSource::known: return "known";
  }
  return "unknown";
}

void KLCertificate::validate() const {
  if (!(rho > 0.0)) throw Error("certificate: rho must be positive");
  if (psi.empty()) throw Error("certificate: missing psi");
  if (std::abs(psi.value(0.0)) > 1e-12) throw Error("certificate: psi(0) must be 0");
  if (!psi.strictly_increasing()) throw Error("certificate: psi must be strictly increasing");
}

}  // namespace kl
