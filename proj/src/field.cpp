#include "kl/field.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "kl/config.hpp"
#include "kl/expr.hpp"

namespace kl {

double DomainSpec::margin(const Vec& x) const {
  return boundary_distance ? boundary_distance(x) : box.distance_to_frontier(x);
}

double ScalarField::slope(const Vec& x, const Vec& g) const {
  if (metric) return g.dot(metric(x) * g);
  return g.squaredNorm();
}

Vec finite_difference_differential(const ScalarField& field, const Vec& x, double h) {
  Vec d(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    const double hi = h * std::max(1.0, std::abs(x[i]));
    xp[i] += hi;
    xm[i] -= hi;
    d[i] = (field.f(xp) - field.f(xm)) / (2.0 * hi);
  }
  return d;
}

namespace {

std::string point_str(const Vec& x) {
  std::ostringstream os;
  os.precision(6);
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

}  // namespace

void ScalarField::validate(std::mt19937_64& rng, int samples, double rel_tol) const {
  if (!f || !grad) throw Error("field '" + name + "': missing f or grad");
  for (int s = 0; s < samples; ++s) {
    const Vec x = domain.box.uniform(rng);
    const double v = f(x);
    if (!(v >= 0.0)) throw Error("field '" + name + "': f < 0 or NaN at " + point_str(x));
    if (domain.margin(x) <= 0.0 && domain.box.distance_to_frontier(x) > 0.0) {
      throw Error("field '" + name + "': boundary distance not positive at " + point_str(x));
    }
    if (!metric) continue;
    const Mat g = metric(x);
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success || (g - g.transpose()).norm() > 1e-12 * (1.0 + g.norm())) {
      throw Error("field '" + name + "': metric not symmetric positive-definite at " + point_str(x));
    }
    if (v < 1e-6) continue;
    const Vec expected = llt.solve(finite_difference_differential(*this, x));
    const Vec got = grad(x);
    if ((got - expected).norm() > rel_tol * std::max(expected.norm(), 1e-8)) {
      throw Error("field '" + name + "': gradient disagrees with metric^{-1} df at " + point_str(x));
    }
  }
}

Primitive Primitive::point(Vec c) {
  Primitive p;
  p.kind = PrimitiveKind::point;
  p.center = std::move(c);
  return p;
}
Primitive Primitive::circle(Vec c, double r) {
  Primitive p = point(std::move(c));
  p.kind = PrimitiveKind::circle;
  p.radius = r;
  return p;
}
Primitive Primitive::disk(Vec c, double r) {
  Primitive p = point(std::move(c));
  p.kind = PrimitiveKind::disk;
  p.radius = r;
  return p;
}
Primitive Primitive::segment(Vec a, Vec b) {
  Primitive p;
  p.kind = PrimitiveKind::segment;
  p.a = std::move(a);
  p.b = std::move(b);
  return p;
}

namespace {

// Distance to the primitive and the unit direction pointing away from it (zero where undefined).
struct DistanceEval {
  double d;
  Vec dir;
};

DistanceEval primitive_distance(const Primitive& z, const Vec& x) {
  switch (z.kind) {
    case PrimitiveKind::point: {
      const Vec v = x - z.center;
      const double r = v.norm();
      return {r, r > 0.0 ? Vec(v / r) : Vec(Vec::Zero(x.size()))};
    }
    case PrimitiveKind::circle: {
      const Vec v = x - z.center;
      const double r = v.norm();
      if (r == 0.0) return {z.radius, Vec::Zero(x.size())};
      return {std::abs(r - z.radius), Vec((r >= z.radius ? 1.0 : -1.0) * v / r)};
    }
    case PrimitiveKind::disk: {
      const Vec v = x - z.center;
      const double r = v.norm();
      if (r <= z.radius) return {0.0, Vec::Zero(x.size())};
      return {r - z.radius, Vec(v / r)};
    }
    case PrimitiveKind::segment: {
      const Vec ab = z.b - z.a;
      const double s = std::clamp((x - z.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
      const Vec v = x - (z.a + s * ab);
      const double r = v.norm();
      return {r, r > 0.0 ? Vec(v / r) : Vec(Vec::Zero(x.size()))};
    }
  }
  return {0.0, Vec::Zero(x.size())};
}

double max_over_corners(const Box& box, const std::function<double(const Vec&)>& fn) {
  const int n = box.dim();
  double best = 0.0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    Vec c(n);
    for (int i = 0; i < n; ++i) c[i] = (mask >> i & 1) ? box.hi[i] : box.lo[i];
    best = std::max(best, fn(c));
  }
  return best;
}

KLCertificate power_certificate(double coef, double exponent, double rho, const Box& U) {
  KLCertificate cert;
  cert.rho = rho;
  cert.U = U;
  cert.psi = Profile1D::power_law(coef, exponent, rho);
  cert.source = CertSource::known;
  return cert;
}

}  // namespace

FieldZooEntry make_distance_power_field(double p, const Primitive& zero_set, const Box& box) {
  if (!(p > 0.0)) throw Error("distance field: exponent p must be positive");
  Primitive z = zero_set;
  const int n = box.dim();
  std::string notes;
  if ((z.kind == PrimitiveKind::circle || z.kind == PrimitiveKind::disk) && z.radius == 0.0) {
    z.kind = PrimitiveKind::point;
    notes = "zero-radius primitive relabeled as point; ";
  }
  if (z.kind == PrimitiveKind::segment) {
    if (z.a.size() != n || z.b.size() != n) throw Error("distance field: segment dimension mismatch");
    if ((z.b - z.a).norm() == 0.0) {
      z = Primitive::point(z.a);
      notes = "zero-length segment relabeled as point; ";
    } else if (!box.contains(z.a) || !box.contains(z.b)) {
      throw Error("distance field: segment does not fit in the domain box");
    }
  } else {
    if (z.center.size() != n) throw Error("distance field: center dimension mismatch");
    if (z.radius < 0.0) throw Error("distance field: negative radius");
    const Vec r = Vec::Constant(n, z.radius);
    if (!box.contains(z.center - r) || !box.contains(z.center + r)) {
      throw Error("distance field: primitive does not fit in the domain box");
    }
  }

  FieldZooEntry e;
  const char* kind_names[] = {"point", "circle", "segment", "disk"};
  e.name = "distance_" + std::string(kind_names[static_cast<int>(z.kind)]);
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = box;
  fld.domain.zero_locus_distance = [z](const Vec& x) { return primitive_distance(z, x).d; };
  fld.f = [z, p](const Vec& x) { return std::pow(primitive_distance(z, x).d, p); };
  fld.grad = [z, p](const Vec& x) -> Vec {
    const DistanceEval de = primitive_distance(z, x);
    if (de.d == 0.0) return Vec::Zero(x.size());
    return p * std::pow(de.d, p - 1.0) * de.dir;
  };
  fld.c1_only_off_zero = p <= 1.0;
  const double rho = std::pow(max_over_corners(box, fld.domain.zero_locus_distance), p) * 1.01 + 1e-12;
  e.known_certificate = power_certificate(1.0, 1.0 / p, rho, box);
  e.known_exponent = 1.0 - 1.0 / p;
  e.notes = notes + "f = d(x, Z)^p; Psi(t) = t^(1/p)";
  if (fld.c1_only_off_zero) e.notes += "; C1 only away from Z";
  return e;
}

double morse_spectral_bound(int k, const Box& box, const MatFn& metric, int per_axis) {
  const int n = box.dim();
  Vec J(n);
  for (int i = 0; i < n; ++i) J[i] = i < k ? 1.0 : -1.0;
  if (!metric) return 1.0;
  double lam = kInf;
  long total = 1;
  for (int i = 0; i < n; ++i) total *= per_axis;
  for (long idx = 0; idx < total; ++idx) {
    Vec x(n);
    long rem = idx;
    for (int i = 0; i < n; ++i) {
      const double s = static_cast<double>(rem % per_axis) / (per_axis - 1);
      rem /= per_axis;
      x[i] = box.lo[i] + s * (box.hi[i] - box.lo[i]);
    }
    const Mat g = metric(x);
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) {
      throw Error("morse field: metric not positive-definite at " + point_str(x));
    }
    const Mat A = llt.solve(Mat(J.asDiagonal()));
    Eigen::SelfAdjointEigenSolver<Mat> es(A.transpose() * A, Eigen::EigenvaluesOnly);
    lam = std::min(lam, es.eigenvalues()[0]);
  }
  return lam;
}

FieldZooEntry make_morse_field(int k, const Box& box, MatFn metric) {
  const int n = box.dim();
  if (k < 0 || k > n) throw Error("morse field: need 0 <= k <= n");
  Vec J(n);
  for (int i = 0; i < n; ++i) J[i] = i < k ? 1.0 : -1.0;

  const double C = 0.99 * morse_spectral_bound(k, box, metric);

  FieldZooEntry e;
  e.name = "morse_" + std::to_string(k) + "_" + std::to_string(n - k);
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = box;
  auto raw = [J](const Vec& x) { return 0.5 * x.dot(J.cwiseProduct(x)); };
  fld.f = [raw](const Vec& x) { return std::max(raw(x), 0.0); };
  fld.metric = metric;
  fld.grad = [raw, J, metric](const Vec& x) -> Vec {
    if (raw(x) <= 0.0) return Vec::Zero(x.size());
    const Vec df = J.cwiseProduct(x);
    if (!metric) return df;
    return metric(x).llt().solve(df);
  };
  double rho = 0.0;
  for (int i = 0; i < k; ++i) rho += 0.5 * std::max(box.lo[i] * box.lo[i], box.hi[i] * box.hi[i]);
  e.known_certificate = power_certificate(std::sqrt(2.0 / C), 0.5, std::max(rho, 1e-3) * 1.01, box);
  e.known_exponent = 0.5;
  e.notes = "positive part of a quadratic of index " + std::to_string(n - k) +
            "; Psi(t) = sqrt(2t/C), C = " + std::to_string(C);
  return e;
}

FieldZooEntry make_transnormal_field(std::function<double(double)> b, const Box& box) {
  const double r_max = max_over_corners(box, [](const Vec& x) { return x.norm(); });

  auto inv_sqrt_b = [&b](double t) {
    const double bt = b(t);
    if (!(bt > 0.0)) throw Error("transnormal field: b must be positive on (0, t_max]; b(" +
                                 std::to_string(t) + ") = " + std::to_string(bt));
    return 1.0 / std::sqrt(bt);
  };

  // r(F) = int_0^F b^{-1/2} on a geometric F grid until r covers the box.
  constexpr int kPerOctave = 32;
  std::vector<double> Fs, rs;
  double F = 1e-12;
  boost::math::quadrature::tanh_sinh<double> ts;
  double r = ts.integrate(inv_sqrt_b, 0.0, F);
  Fs.push_back(F);
  rs.push_back(r);
  while (r < 1.02 * r_max) {
    if (Fs.size() > 200 * kPerOctave) throw Error("transnormal field: b grows too fast to cover the box");
    const double F_next = F * std::exp2(1.0 / kPerOctave);
    r += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(inv_sqrt_b, F, F_next, 0, 0.0);
    F = F_next;
    Fs.push_back(F);
    rs.push_back(r);
  }
  std::vector<double> dF(Fs.size()), dr(Fs.size());
  for (std::size_t i = 0; i < Fs.size(); ++i) {
    dF[i] = 1.0 / inv_sqrt_b(Fs[i]);
    dr[i] = 1.0 / dF[i];
  }
  const auto radial = std::make_shared<const Profile1D>(Profile1D::tabulated(rs, Fs, dF));
  const auto psi_table = std::make_shared<const Profile1D>(Profile1D::tabulated(Fs, rs, dr));

  FieldZooEntry e;
  e.name = "transnormal";
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = box;
  fld.domain.zero_locus_distance = [](const Vec& x) { return x.norm(); };
  fld.f = [radial](const Vec& x) { return radial->value(x.norm()); };
  fld.grad = [radial, b](const Vec& x) -> Vec {
    const double r = x.norm();
    if (r == 0.0) return Vec::Zero(x.size());
    return std::sqrt(b(radial->value(r))) * x / r;
  };

  KLCertificate cert;
  cert.rho = radial->value(r_max) * 1.01;
  cert.U = box;
  cert.source = CertSource::known;
  cert.psi = Profile1D::analytic([psi_table](double t) { return t > 0.0 ? psi_table->value(t) : 0.0; },
                                 [b](double t) { return t > 0.0 ? 1.0 / std::sqrt(b(t)) : kInf; },
                                 geometric_grid(cert.rho, cert.rho * 1e-12, 4));
  e.known_certificate = cert;
  e.notes = "radial f = F(|x|), F' = sqrt(b(F)); Psi = F^{-1}";
  return e;
}

ScalarField compose_with_psi(const ScalarField& field, const Profile1D& psi) {
  if (psi.empty() || !psi.strictly_increasing()) {
    throw Error("compose_with_psi: psi must be strictly increasing on its grid");
  }
  if (std::abs(psi.value(0.0)) > 1e-12) throw Error("compose_with_psi: psi(0) must be 0");
  ScalarField out = field;
  out.name = "psi(" + field.name + ")";
  const auto p = std::make_shared<const Profile1D>(psi);
  const PointFn f = field.f;
  const VecFn grad = field.grad;
  out.f = [p, f](const Vec& x) { return p->value(f(x)); };
  out.grad = [p, f, grad](const Vec& x) -> Vec {
    const double v = f(x);
    if (v <= 0.0) return Vec::Zero(x.size());
    return p->derivative(v) * grad(x);
  };
  out.hess = {};
  return out;
}

namespace {

FieldZooEntry quadratic_entry() {
  FieldZooEntry e;
  e.name = "quadratic";
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = Box::cube(2, -1.0, 1.0);
  fld.domain.zero_locus_distance = [](const Vec& x) { return x.norm(); };
  fld.f = [](const Vec& x) { return x.squaredNorm(); };
  fld.grad = [](const Vec& x) -> Vec { return 2.0 * x; };
  fld.hess = [](const Vec& x) -> Mat { return 2.0 * Mat::Identity(x.size(), x.size()); };
  e.known_certificate = power_certificate(1.0, 0.5, 2.0, fld.domain.box);
  e.known_exponent = 0.5;
  e.notes = "|x|^2; |grad f| = 2 sqrt(f), Psi(t) = sqrt(t) is tight";
  return e;
}

FieldZooEntry strip_entry() {
  constexpr double L = 4.0, top = 2.0;
  FieldZooEntry e;
  e.name = "strip";
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = Box(Vec((Vec(2) << -L, 0.0).finished()), Vec((Vec(2) << L, top).finished()));
  // Z is the bottom edge y = 0; the remaining edges form the frontier.
  fld.domain.boundary_distance = [](const Vec& x) {
    return std::max(0.0, std::min(L - std::abs(x[0]), top - x[1]));
  };
  fld.domain.zero_locus_distance = [](const Vec& x) { return std::abs(x[1]); };
  fld.f = [](const Vec& x) { return x[1] * x[1]; };
  fld.grad = [](const Vec& x) -> Vec { return (Vec(2) << 0.0, 2.0 * x[1]).finished(); };
  e.known_certificate = power_certificate(1.0, 0.5, top * top, fld.domain.box);
  e.known_exponent = 0.5;
  e.notes = "y^2 on (-4,4) x [0,2); noncompact Z in the chart, R(a,b) = (a,0)";
  return e;
}

FieldZooEntry exp_product_entry() {
  FieldZooEntry e;
  e.name = "exp_product";
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = Box::cube(2, -1.0, 1.0);
  fld.domain.zero_locus_distance = [](const Vec& x) { return std::abs(x[0]); };
  fld.f = [](const Vec& x) { return x[0] * x[0] * std::exp(x[1]); };
  fld.grad = [](const Vec& x) -> Vec {
    const double ey = std::exp(x[1]);
    return (Vec(2) << 2.0 * x[0] * ey, x[0] * x[0] * ey).finished();
  };
  // |grad f|^2 = 4 f e^y + f^2 >= 4 f / e.
  e.known_certificate = power_certificate(std::sqrt(std::exp(1.0)), 0.5, std::exp(1.0) * 1.01,
                                          fld.domain.box);
  e.known_exponent = 0.5;
  e.notes = "x1^2 exp(x2); level-dependent gradient spread";
  return e;
}

}  // namespace

std::vector<std::string> zoo_names() {
  return {"quadratic",  "distance_point", "disk",       "disk_quartic",      "strip",
          "morse_saddle", "morse_bowl",   "morse_bowl_metric", "transnormal_4t", "exp_product"};
}

FieldZooEntry zoo_entry(const std::string& name) {
  const Vec origin = Vec::Zero(2);
  FieldZooEntry e;
  if (name == "quadratic") {
    e = quadratic_entry();
  } else if (name == "distance_point") {
    e = make_distance_power_field(1.0, Primitive::point(origin), Box::cube(2, -1.0, 1.0));
  } else if (name == "disk") {
    e = make_distance_power_field(2.0, Primitive::disk(origin, 1.0), Box::cube(2, -3.0, 3.0));
  } else if (name == "disk_quartic") {
    e = make_distance_power_field(4.0, Primitive::disk(origin, 1.0), Box::cube(2, -3.0, 3.0));
  } else if (name == "strip") {
    e = strip_entry();
  } else if (name == "morse_saddle") {
    e = make_morse_field(1, Box::cube(2, -1.0, 1.0));
  } else if (name == "morse_bowl") {
    e = make_morse_field(2, Box::cube(2, -1.0, 1.0));
  } else if (name == "morse_bowl_metric") {
    // Dominates the identity, so Euclidean lengths stay below the certificate bound.
    e = make_morse_field(2, Box::cube(2, -1.0, 1.0), [](const Vec& x) -> Mat {
      Mat g(2, 2);
      g << 2.0 + 0.5 * x[0] * x[0], 0.5, 0.5, 1.5;
      return g;
    });
  } else if (name == "transnormal_4t") {
    e = make_transnormal_field([](double t) { return 4.0 * t; }, Box::cube(2, -1.0, 1.0));
    e.known_exponent = 0.5;
  } else if (name == "exp_product") {
    e = exp_product_entry();
  } else {
    throw Error("unknown zoo field '" + name + "'");
  }
  e.name = name;
  e.field.name = name;
  return e;
}

std::vector<FieldZooEntry> field_zoo() {
  std::vector<FieldZooEntry> out;
  for (const auto& n : zoo_names()) out.push_back(zoo_entry(n));
  return out;
}

namespace {

// Splits at separators outside parentheses.
std::vector<std::string> split_top_level(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && seps.find(c) != std::string::npos) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

FieldZooEntry field_from_definition(const std::string& text, const std::string& source) {
  const Config cfg = Config::parse(text, source);
  const long n = cfg.get_int("dimension");
  if (n < 1) throw Error(source + ": dimension must be positive");
  const std::vector<double> bounds = cfg.get_doubles("box");
  if (bounds.size() != static_cast<std::size_t>(2 * n)) {
    throw Error(source + ": box needs " + std::to_string(2 * n) + " numbers (lo hi per axis)");
  }
  Vec lo(n), hi(n);
  for (long i = 0; i < n; ++i) {
    lo[i] = bounds[2 * i];
    hi[i] = bounds[2 * i + 1];
  }
  const int dim = static_cast<int>(n);
  const Expr f = Expr::parse(cfg.get_string("f"), dim);
  std::vector<Expr> df;
  for (int i = 0; i < dim; ++i) df.push_back(f.derivative(i));

  FieldZooEntry e;
  e.name = cfg.get_string("name", "user");
  ScalarField& fld = e.field;
  fld.name = e.name;
  fld.domain.box = Box(lo, hi);
  fld.f = [f](const Vec& x) { return f.eval(x); };
  VecFn euclid = [df](const Vec& x) -> Vec {
    Vec g(x.size());
    for (std::size_t i = 0; i < df.size(); ++i) g[static_cast<Eigen::Index>(i)] = df[i].eval(x);
    return g;
  };
  if (cfg.has("metric")) {
    const auto parts = split_top_level(cfg.get_string("metric"), ",;");
    if (parts.size() != static_cast<std::size_t>(dim * dim)) {
      throw Error(source + ": metric needs " + std::to_string(dim * dim) + " entries (row-major)");
    }
    std::vector<Expr> entries;
    for (const auto& p : parts) entries.push_back(Expr::parse(p, dim));
    fld.metric = [entries, dim](const Vec& x) -> Mat {
      Mat g(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = entries[static_cast<std::size_t>(i * dim + j)].eval(x);
      return g;
    };
    const MatFn metric = fld.metric;
    fld.grad = [euclid, metric](const Vec& x) -> Vec { return metric(x).llt().solve(euclid(x)); };
  } else {
    fld.grad = euclid;
  }

  std::mt19937_64 rng(0x5eed);
  fld.validate(rng);

  if (cfg.has("psi")) {
    const auto ce = cfg.get_doubles("psi");
    if (ce.size() != 2) throw Error(source + ": psi needs 'coefficient exponent'");
    double rho = cfg.get_double("rho", 0.0);
    if (rho <= 0.0) {
      for (int s = 0; s < 4096; ++s) rho = std::max(rho, fld.f(fld.domain.box.uniform(rng)));
      rho *= 1.01;
    }
    KLCertificate cert = power_certificate(ce[0], ce[1], rho, fld.domain.box);
    cert.source = CertSource::user;
    e.known_certificate = cert;
  }
  if (cfg.has("theta")) e.known_exponent = cfg.get_double("theta");
  e.notes = "f = " + cfg.get_string("f");
  return e;
}

FieldZooEntry load_field(const std::string& name_or_path) {
  const auto names = zoo_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return zoo_entry(name_or_path);
  if (std::filesystem::exists(name_or_path)) {
    std::ifstream in(name_or_path);
    std::stringstream ss;
    ss << in.rdbuf();
    return field_from_definition(ss.str(), name_or_path);
  }
  throw Error("unknown field '" + name_or_path + "' (not a zoo name or readable file)");
}

}  // namespace kl
