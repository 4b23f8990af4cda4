#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "kl/config.hpp"
#include "kl/cylinder.hpp"
#include "kl/desing.hpp"
#include "kl/envelope.hpp"
#include "kl/expr.hpp"
#include "kl/io.hpp"

namespace kl::cli {

namespace {

namespace fs = std::filesystem;

// Bad configuration, unknown fields and unsupported requests; everything maps to exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Rethrows errors raised while reading parameters as usage errors.
template <class F>
auto param(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

struct Run {
  std::string command;
  Config cfg;
  fs::path out_dir;
  std::uint64_t seed = 1;
  int workers = 1;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  std::vector<std::string> outputs;

  std::string file(const std::string& name) {
    outputs.push_back(name);
    return (out_dir / name).string();
  }
};

std::string padded(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return buf;
}

// Output bytes must not depend on where they are written or on the thread count.
Json manifest_header(const Run& r, const std::string& statement) {
  Json j;
  j["tool"] = "kltool";
  j["command"] = r.command;
  j["statement"] = statement;
  j["seed"] = r.seed;
  Json c = Json::object();
  for (const auto& k : r.cfg.keys()) {
    if (k != "out" && k != "workers") c[k] = r.cfg.get_string(k);
  }
  j["config"] = std::move(c);
  return j;
}

void finish_manifest(Run& r, Json& j) {
  j["outputs"] = r.outputs;
  write_json((r.out_dir / "manifest.json").string(), j);
}

FieldZooEntry load(const Run& r) {
  return param([&] { return load_field(r.cfg.get_string("field")); });
}

Box read_box(const Config& cfg, const std::string& key, const Box& fallback) {
  if (!cfg.has(key)) return fallback;
  const auto v = cfg.get_doubles(key);
  const auto n = static_cast<std::size_t>(fallback.dim());
  if (v.size() != 2 * n) throw Error("key '" + key + "': needs " + std::to_string(2 * n) + " numbers (lo hi per axis)");
  Vec lo(fallback.dim()), hi(fallback.dim());
  for (std::size_t i = 0; i < n; ++i) {
    lo[static_cast<Eigen::Index>(i)] = v[2 * i];
    hi[static_cast<Eigen::Index>(i)] = v[2 * i + 1];
  }
  return Box(lo, hi);
}

std::vector<Vec> read_points(const Config& cfg, const std::string& key, int dim) {
  const auto v = cfg.get_doubles(key);
  if (v.empty() || v.size() % static_cast<std::size_t>(dim)) {
    throw Error("key '" + key + "': expected groups of " + std::to_string(dim) + " coordinates");
  }
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < v.size(); i += static_cast<std::size_t>(dim)) {
    pts.push_back(Eigen::Map<const Vec>(v.data() + i, dim));
  }
  return pts;
}

IntegratorControls read_controls(const Config& cfg) {
  IntegratorControls c;
  c.f_stop = cfg.get_double("f_stop", c.f_stop);
  c.rtol = cfg.get_double("rtol", c.rtol);
  c.atol = cfg.get_double("atol", c.atol);
  c.max_steps = cfg.get_int("max_steps", c.max_steps);
  return c;
}

// Seeded uniform starts with f > 0, restricted to V when a certificate is known.
std::vector<Vec> random_starts(const FieldZooEntry& e, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec> out;
  const long max_attempts = 10000L * std::max(n, 1);
  for (long a = 0; a < max_attempts && static_cast<int>(out.size()) < n; ++a) {
    const Vec x = e.field.domain.box.uniform(rng);
    if (!(e.field.f(x) > 0.0)) continue;
    if (e.known_certificate && !safe_set_test(e.field, x, *e.known_certificate).in_V) continue;
    out.push_back(x);
  }
  if (static_cast<int>(out.size()) < n) throw Error("could not place " + std::to_string(n) + " starts in the safe set");
  return out;
}

std::vector<Vec> starts_for(const Run& r, const FieldZooEntry& e) {
  const auto pts = param([&] {
    if (r.cfg.has("starts")) return read_points(r.cfg, "starts", e.field.dim());
    const long n = r.cfg.get_int("n_starts", 5);
    if (n < 1) throw Error("key 'n_starts': must be positive");
    return std::vector<Vec>(static_cast<std::size_t>(n));
  });
  if (r.cfg.has("starts")) {
    for (const auto& x : pts) {
      if (!e.field.domain.box.contains(x)) throw UsageError("start outside the field box");
    }
    return pts;
  }
  return random_starts(e, static_cast<int>(pts.size()), r.seed);
}

const KLCertificate& require_certificate(const FieldZooEntry& e) {
  if (!e.known_certificate) {
    throw UsageError("field '" + e.name + "' carries no certificate (add 'psi = coefficient exponent' to its definition)");
  }
  return *e.known_certificate;
}

int cmd_flow(Run& r) {
  const FieldZooEntry e = load(r);
  const auto [clock, ctl] = param([&] {
    return std::pair{clock_from_string(r.cfg.get_string("clock", "arclength")), read_controls(r.cfg)};
  });
  const auto starts = starts_for(r, e);
  const auto trajs = integrate_many(e.field, starts, clock, ctl, r.workers);

  Json j = manifest_header(r, "Descending trajectories that start in the safe set have length at most "
                              "Psi(f(x0)) and converge to a single point of the zero locus.");
  j["field"] = e.name;
  Json rows = Json::array();
  int violations = 0;
  const bool cert = e.known_certificate.has_value();
  if (cert) *r.out << "  id          f(x0)         length      Psi(f(x0))  ok\n";
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    write_trajectory_csv(r.file("trajectory_" + padded(i) + ".csv"), tr);
    Json t = trajectory_manifest(tr);
    t["id"] = i;
    t["start"] = to_json(starts[i]);
    const bool ended = tr.termination == Termination::reached_zero_locus || tr.termination == Termination::left_domain;
    const double len = ended ? trajectory_length(tr) : std::nan("");
    t["length"] = std::isfinite(len) ? Json(len) : Json(nullptr);
    if (cert) {
      const auto& c = *e.known_certificate;
      const auto q = safe_set_test(e.field, starts[i], c);
      const double f0 = tr.front().f;
      const bool applies = q.in_V && f0 < c.rho;
      const double bound = applies ? c.psi.value(f0) : std::nan("");
      const bool ok = !applies || (std::isfinite(len) && len <= bound + 1e-6);
      violations += !ok;
      t["in_V"] = q.in_V;
      t["psi_bound"] = applies ? Json(bound) : Json(nullptr);
      t["within_bound"] = ok;
      char line[160];
      std::snprintf(line, sizeof line, "%4zu  %13.6e  %13.6e  %13.6e  %s\n", i, f0, len, bound,
                    applies ? (ok ? "yes" : "NO") : "n/a");
      *r.out << line;
    }
    rows.push_back(std::move(t));
  }
  j["trajectories"] = std::move(rows);
  j["bound_violations"] = violations;
  finish_manifest(r, j);
  *r.out << trajs.size() << " trajectories written to " << r.out_dir.string() << "\n";
  return violations ? kFailure : kOk;
}

int cmd_retract(Run& r) {
  const FieldZooEntry e = load(r);
  const KLCertificate& cert = require_certificate(e);
  const auto ctl = param([&] { return read_controls(r.cfg); });
  const auto starts = starts_for(r, e);
  const int n = e.field.dim();

  std::vector<Vec> limits(starts.size());
  std::vector<double> nu(starts.size(), std::nan(""));
  std::vector<std::string> issue(starts.size());
  parallel_for(starts.size(), r.workers, [&](std::size_t i) {
    try {
      limits[i] = retract(e.field, starts[i], cert, ctl);
      nu[i] = length_function(e.field, {starts[i]}, cert, ctl, 1).front();
    } catch (const Error& ex) {
      limits[i] = Vec::Constant(n, std::nan(""));
      issue[i] = ex.what();
    }
  });

  std::vector<std::string> header;
  for (int k = 1; k <= n; ++k) header.push_back("x_" + std::to_string(k));
  for (int k = 1; k <= n; ++k) header.push_back("r_" + std::to_string(k));
  header.push_back("length");
  std::vector<std::vector<double>> rows;
  Json failures = Json::array();
  for (std::size_t i = 0; i < starts.size(); ++i) {
    std::vector<double> row(starts[i].data(), starts[i].data() + n);
    row.insert(row.end(), limits[i].data(), limits[i].data() + n);
    row.push_back(nu[i]);
    rows.push_back(std::move(row));
    if (!issue[i].empty()) failures.push_back({{"id", i}, {"error", issue[i]}});
  }
  write_csv(r.file("retract.csv"), header, rows);

  Json j = manifest_header(r, "The forward-limit map of the descending flow retracts the safe set onto the "
                              "zero locus; length is the distance travelled along the trajectory.");
  j["field"] = e.name;
  j["points"] = starts.size();
  j["failures"] = failures;
  finish_manifest(r, j);
  *r.out << starts.size() - failures.size() << " of " << starts.size() << " points retracted\n";
  return failures.empty() ? kOk : kFailure;
}

int cmd_levelset(Run& r) {
  const FieldZooEntry e = load(r);
  struct P {
    Box K;
    double rho;
    int levels, budget;
  };
  const P p = param([&] {
    return P{read_box(r.cfg, "K", e.field.domain.box), r.cfg.get_double("rho", 0.5),
             static_cast<int>(r.cfg.get_int("levels", 24)), static_cast<int>(r.cfg.get_int("budget", 2000))};
  });
  const auto prof = build_profile(e.field, p.K, p.rho, p.levels, p.budget, r.workers);
  write_profile_csv(r.file("profile.csv"), prof);

  Json j = manifest_header(r, "alpha(t) and beta(t) are the reciprocals of the infimum and supremum of |grad f| "
                              "over the level set f = t inside K, sampled at t = rho 2^-j.");
  j["field"] = e.name;
  j["levels"] = prof.levels.size();
  j["empty_levels"] = prof.empty_levels();
  j["unreliable"] = prof.unreliable;
  finish_manifest(r, j);
  *r.out << "profile: " << prof.levels.size() << " levels, " << prof.empty_levels() << " empty"
         << (prof.unreliable ? " (unreliable)" : "") << "\n";
  return kOk;
}

Curve injected_curve(const std::vector<double>& ce, double rho) {
  if (ce.size() != 2) throw Error("injected profile needs 'coefficient exponent'");
  Curve c;
  for (double t : geometric_grid(rho, 1e-12, 4)) c.emplace_back(t, ce[0] * std::pow(t, ce[1]));
  return c;
}

// Lowest sampled point of f, followed down its trajectory.
Vec locate_zero(const ScalarField& field, const Box& K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vec best = K.center();
  double fb = field.f(best);
  for (int i = 0; i < 4096; ++i) {
    const Vec x = K.uniform(rng);
    if (const double v = field.f(x); v < fb) {
      fb = v;
      best = x;
    }
  }
  if (fb <= 0.0) return best;
  const auto tr = integrate(field, best, Clock::level, {});
  const Vec p = tr.limit_point.value_or(tr.back().x);
  return K.contains(p) ? p : K.clamp(p);
}

int exit_for(PointVerdict v) {
  switch (v) {
    case PointVerdict::good: return kOk;
    case PointVerdict::bad: return kBad;
    case PointVerdict::ugly: return kUgly;
    case PointVerdict::inconclusive: return kInconclusive;
  }
  return kInconclusive;
}

int cmd_classify(Run& r) {
  const double rho = param([&] { return r.cfg.get_double("rho", 0.5); });
  PointClass pc;
  std::string field_name;
  std::optional<LevelSetProfile> profile;
  if (r.cfg.has("inject_alpha") || r.cfg.has("inject_beta")) {
    const auto [a, b] = param([&] {
      return std::pair{injected_curve(r.cfg.get_doubles("inject_alpha"), rho),
                       injected_curve(r.cfg.get_doubles("inject_beta"), rho)};
    });
    pc = classify_profiles(a, b, rho);
    field_name = "injected";
  } else {
    const FieldZooEntry e = load(r);
    field_name = e.name;
    struct P {
      Box K;
      ClassifyOptions o;
      std::optional<Vec> point;
    };
    const P p = param([&] {
      P q{read_box(r.cfg, "K", e.field.domain.box), {}, std::nullopt};
      q.o.levels = static_cast<int>(r.cfg.get_int("levels", q.o.levels));
      q.o.budget = static_cast<int>(r.cfg.get_int("budget", q.o.budget));
      q.o.fit_exponent = r.cfg.get_bool("fit_exponent", true);
      q.o.seed = r.seed;
      q.o.workers = r.workers;
      q.o.fit.workers = r.workers;
      if (r.cfg.has("point")) {
        const auto pts = read_points(r.cfg, "point", e.field.dim());
        if (pts.size() != 1) throw Error("key 'point': expected one point");
        q.point = pts.front();
      }
      return q;
    });
    const Vec point = p.point ? *p.point : locate_zero(e.field, p.K, r.seed);
    if (!p.K.contains(point)) throw UsageError("classification point lies outside K");
    LevelSetProfile prof;
    pc = classify_point(e.field, point, p.K, rho, p.o, prof);
    profile = std::move(prof);
  }

  write_json(r.file("classification.json"), to_json(pc));
  if (profile) write_profile_csv(r.file("profile.csv"), *profile);
  Json j = manifest_header(r, "A simple nondegenerate boundary point is good when alpha is integrable near 0 "
                              "(a desingularization exists), bad when only beta is, ugly when neither is.");
  j["field"] = field_name;
  j["verdict"] = to_string(pc.verdict);
  j["profile"] = profile ? Json("profile.csv") : Json(nullptr);
  finish_manifest(r, j);
  *r.out << "verdict: " << to_string(pc.verdict) << (pc.note.empty() ? "" : " (" + pc.note + ")") << "\n";
  return exit_for(pc.verdict);
}

void write_psi_csv(const std::string& path, const KLCertificate& cert) {
  std::vector<std::vector<double>> rows;
  for (double t : cert.psi.grid()) rows.push_back({t, cert.psi.value(t), cert.psi.derivative(t)});
  write_csv(path, {"t", "psi", "dpsi"}, rows);
}

int cmd_desing(Run& r) {
  const std::string mode = param([&] { return r.cfg.get_string("mode", r.cfg.has("a") ? "build_psi" : "fit"); });
  const double rho = param([&] { return r.cfg.get_double("rho", 0.5); });
  std::optional<FieldZooEntry> e;
  if (r.cfg.has("field")) e = load(r);

  Json j = manifest_header(r, "Psi(t) = integral of 1/a over (0, t) is a desingularization whenever "
                              "|grad f| >= a(f) and 1/a is integrable; a power-law floor gives a = C t^theta.");
  j["mode"] = mode;
  j["field"] = e ? Json(e->name) : Json(nullptr);
  std::optional<KLCertificate> cert;
  if (mode == "build_psi") {
    const Expr a = param([&] { return Expr::parse(r.cfg.get_string("a"), 1); });
    const Box U = e ? e->field.domain.box : Box::cube(1, 0.0, rho);
    cert = build_psi_from_a([a](double t) { return a.eval(Vec::Constant(1, t)); }, rho, U);
  } else if (mode == "fit") {
    if (!e) throw UsageError("mode 'fit' needs a field");
    FitOptions fo;
    const Box K = param([&] {
      fo.levels = static_cast<int>(r.cfg.get_int("levels", fo.levels));
      fo.budget = static_cast<int>(r.cfg.get_int("budget", fo.budget));
      return read_box(r.cfg, "K", e->field.domain.box);
    });
    fo.workers = r.workers;
    const ExponentFit fit = fit_lojasiewicz_exponent(e->field, K, rho, fo);
    write_json(r.file("fit.json"), to_json(fit));
    j["fit"] = to_json(fit);
    cert = fit.certificate;
  } else {
    throw UsageError("key 'mode': expected build_psi or fit, got '" + mode + "'");
  }

  if (cert) {
    write_psi_csv(r.file("psi.csv"), *cert);
    if (e) {
      VerifyOptions vo;
      vo.seed = r.seed;
      vo.samples = static_cast<int>(param([&] { return r.cfg.get_int("verify_samples", 2000); }));
      const auto rep = verify_certificate(e->field, *cert, vo);
      write_json(r.file("verify.json"), to_json(rep));
      j["worst_margin"] = rep.worst_margin;
      *r.out << "certificate check: worst margin " << format_real(rep.worst_margin) << "\n";
    }
  } else {
    *r.out << "no certificate produced\n";
  }
  j["certificate"] = cert.has_value();
  finish_manifest(r, j);
  return cert ? kOk : kFailure;
}

SemicontinuousProfile profile_from_file(const std::string& path, SemiKind kind) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open profile '" + path + "'");
  std::vector<std::pair<double, double>> pts;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double t, u;
    if (!(ss >> t >> u)) {
      if (n == 1) continue;  // header
      throw Error(path + ":" + std::to_string(n) + ": expected 't, u'");
    }
    pts.emplace_back(t, u);
  }
  std::sort(pts.begin(), pts.end());
  if (pts.size() < 2) throw Error(path + ": profile needs at least two points");
  SemicontinuousProfile p;
  p.kind = kind;
  p.r0 = pts.back().first;
  for (const auto& [t, u] : pts) p.grid.push_back(t);
  // Linear between the listed points, so refinement never invents new extremes.
  p.evaluator = [pts](double t) {
    auto it = std::lower_bound(pts.begin(), pts.end(), std::pair{t, -kInf});
    if (it == pts.end()) return pts.back().second;
    if (it->first == t || it == pts.begin()) return it->second;
    const auto& [t0, u0] = *(it - 1);
    return u0 + (it->second - u0) * (t - t0) / (it->first - t0);
  };
  return p;
}

SemicontinuousProfile comb_profile(const Config& cfg, SemiKind kind) {
  const double base = cfg.get_double("comb_base", 1.0);
  const double mark = cfg.get_double("comb_value", kind == SemiKind::lower ? 0.5 : 2.0);
  const long marks = cfg.get_int("comb_marks", 5);
  const long points = cfg.get_int("grid_points", 4000);
  const double lo = cfg.get_double("grid_min", 1e-3);
  if (points < 1 || !(lo > 0.0 && lo < 1.0)) throw Error("comb grid needs grid_points >= 1 and 0 < grid_min < 1");
  std::vector<double> mk;
  for (long k = 1; k <= marks; ++k) mk.push_back(std::exp2(-static_cast<double>(k)));
  SemicontinuousProfile p;
  p.kind = kind;
  p.r0 = 1.0;
  for (long i = 0; i <= points; ++i) p.grid.push_back(lo + (1.0 - lo) * static_cast<double>(i) / static_cast<double>(points));
  p.grid.insert(p.grid.end(), mk.begin(), mk.end());
  std::sort(p.grid.begin(), p.grid.end());
  p.grid.erase(std::unique(p.grid.begin(), p.grid.end()), p.grid.end());
  p.evaluator = [mk, base, mark](double t) {
    return std::find(mk.begin(), mk.end(), t) != mk.end() ? mark : base;
  };
  return p;
}

int cmd_envelope(Run& r) {
  struct P {
    SemicontinuousProfile u;
    EnvelopeOptions o;
  };
  const P p = param([&] {
    const std::string k = r.cfg.get_string("kind", "lower");
    if (k != "lower" && k != "upper") throw Error("key 'kind': expected lower or upper");
    const SemiKind kind = k == "lower" ? SemiKind::lower : SemiKind::upper;
    const std::string src = r.cfg.get_string("source", "comb");
    P q;
    if (src == "comb") {
      q.u = comb_profile(r.cfg, kind);
    } else if (src == "file") {
      q.u = profile_from_file(r.cfg.get_string("profile_file"), kind);
    } else {
      throw Error("key 'source': expected comb or file, got '" + src + "'");
    }
    q.o.budget = static_cast<int>(r.cfg.get_int("budget", q.o.budget));
    q.o.defect_scale = r.cfg.get_double("defect_scale", q.o.defect_scale);
    q.o.refine = static_cast<int>(r.cfg.get_int("refine", q.o.refine));
    q.o.resolution_floor = r.cfg.get_double("resolution_floor", q.o.resolution_floor);
    q.o.workers = r.workers;
    return q;
  });
  const auto env = build_envelope(p.u, p.o);
  write_envelope_csv(r.file("envelope.csv"), env);
  write_json(r.file("trace.json"), envelope_trace(env));

  Json j = manifest_header(r, "A positive one-sided semicontinuous profile u admits a continuous w on the same "
                              "side of u with the L1 distance between them as small as required.");
  j["kind"] = to_string(env.kind);
  j["side_violation"] = env.side_violation;
  j["l1_gap"] = env.l1_gap;
  j["partial"] = env.partial;
  finish_manifest(r, j);
  *r.out << "envelope: side violation " << format_real(env.side_violation) << ", L1 gap " << format_real(env.l1_gap)
         << (env.partial ? " (partial)" : "") << "\n";
  return kOk;
}

int cmd_cylinder(Run& r) {
  const FieldZooEntry e = load(r);
  const int n = e.field.dim();
  if (n != 2 && n != 3) throw UsageError("cylinder construction is supported for n = 2 and n = 3 only (field has n = " + std::to_string(n) + ")");
  const KLCertificate& cert = require_certificate(e);
  struct P {
    double c_ref;
    ChartOptions chart;
    CSequenceOptions seq;
    ExtractOptions extract;
    VerifyCylinderOptions verify;
    int trajectories;
    double boundary_level;
    int boundary_budget;
  };
  P p = param([&] {
    P q;
    q.c_ref = r.cfg.get_double("c_ref", std::min(0.5, 0.5 * cert.rho));
    q.chart.budget = static_cast<int>(r.cfg.get_int("budget", q.chart.budget));
    q.chart.workers = r.workers;
    q.seq.containment = r.cfg.get_double("containment", q.seq.containment);
    q.seq.workers = r.workers;
    q.extract.tolerance = r.cfg.get_double("tolerance", q.extract.tolerance);
    q.extract.workers = r.workers;
    q.verify.n_q = static_cast<int>(r.cfg.get_int("n_q", 20));
    q.verify.n_t = static_cast<int>(r.cfg.get_int("n_t", 20));
    q.verify.workers = r.workers;
    q.trajectories = static_cast<int>(r.cfg.get_int("trajectories", 200));
    q.boundary_level = r.cfg.get_double("boundary_level", 1e-12);
    q.boundary_budget = static_cast<int>(r.cfg.get_int("boundary_budget", 4000));
    return q;
  });

  FhatChart fc;
  fc.chart = build_chart(e.field, cert, p.c_ref, p.chart);
  const CSequence seq = choose_c_sequence(e.field, fc.chart, p.seq);
  write_json(r.file("chart.json"), chart_manifest(fc, seq));
  Json j = manifest_header(r, "A hypersurface H meeting every descending trajectory exactly once, together with the "
                              "level-clock flow from H, gives a mapping cylinder neighborhood of the zero locus.");
  j["field"] = e.name;
  if (!seq.ok) {
    j["failure"] = seq.failure;
    finish_manifest(r, j);
    *r.err << "c sequence: " << seq.failure << "\n";
    return kFailure;
  }
  fc.c = seq.c;

  std::vector<Trajectory> trajs;
  if (r.cfg.has("starts")) {
    // User-chosen verification trajectories, run like the generated ones.
    const auto starts = param([&] { return read_points(r.cfg, "starts", n); });
    IntegratorControls ctl = p.extract.controls;
    ctl.f_stop = std::min(ctl.f_stop, 1e-3 * *std::min_element(fc.c.begin(), fc.c.end()));
    trajs = integrate_many(e.field, starts, Clock::level, ctl, r.workers);
  } else {
    trajs = chart_trajectories(e.field, fc, p.trajectories, p.extract.controls, r.workers);
  }
  const CylinderChart cc = extract_H(e.field, fc, trajs, p.extract);
  std::vector<Vec> H;
  for (const auto& hp : cc.H_points) H.push_back(hp.x);
  if (n == 2) {
    write_polyline_csv(r.file("H.csv"), H);
  } else {
    write_obj(r.file("H.obj"), H);
  }

  Json offending = Json::array();
  for (std::size_t k = 0; k < cc.crossings.size(); ++k) {
    if (cc.crossings[k] != 1) offending.push_back(k);
  }
  j["H_points"] = H.size();
  j["violations"] = cc.violations;
  j["offending_trajectories"] = offending;
  if (!cc.valid) {
    finish_manifest(r, j);
    for (const auto& v : cc.violations) *r.err << "single-crossing violation: " << v << "\n";
    return kCrossing;
  }

  // Boundary of Z, approximated by a level far below every c_i.
  const LevelSample bs = sample_level(e.field, p.boundary_level, e.field.domain.box, p.boundary_budget);
  p.verify.boundary_samples = bs.points;
  const CylinderReport rep = verify_cylinder(e.field, cc, p.verify);
  write_json(r.file("report.json"), to_json(rep));

  // Grid images Phi(q, t) at the same (q, t) nodes the report checks.
  const int nq = std::min<int>(p.verify.n_q, static_cast<int>(cc.H_points.size()));
  std::vector<double> ts;
  for (int b = 0; b <= p.verify.n_t; ++b) ts.push_back(static_cast<double>(b) / p.verify.n_t);
  std::vector<std::vector<Vec>> grid(static_cast<std::size_t>(nq));
  parallel_for(grid.size(), r.workers, [&](std::size_t a) {
    const std::size_t idx = a * cc.H_points.size() / static_cast<std::size_t>(nq);
    grid[a] = cylinder_coords(e.field, cc, idx, ts, p.extract.controls);
  });
  if (n == 2) {
    std::vector<std::vector<double>> rows;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      for (std::size_t b = 0; b < ts.size(); ++b) {
        rows.push_back({static_cast<double>(a), ts[b], grid[a][b][0], grid[a][b][1]});
      }
    }
    write_csv(r.file("cylinder_grid.csv"), {"q", "t", "x_1", "x_2"}, rows);
  } else {
    std::vector<Vec> verts;
    std::vector<std::vector<std::size_t>> lines;
    for (const auto& row : grid) {
      std::vector<std::size_t> l;
      for (const auto& x : row) {
        verts.push_back(x);
        l.push_back(verts.size());
      }
      lines.push_back(std::move(l));
    }
    write_obj(r.file("cylinder_grid.obj"), verts, lines);
  }

  j["report"] = to_json(rep);
  finish_manifest(r, j);
  *r.out << "H: " << H.size() << " points, " << fc.c.size() << " buckets; verification "
         << (rep.passed ? "passed" : "failed") << (rep.note.empty() ? "" : " (" + rep.note + ")") << "\n";
  return rep.passed ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kurdyka-Lojasiewicz analysis of nonnegative scalar fields"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string field, config_path, out_dir = "kl_out";
  std::uint64_t seed = 1;
  int workers = 1;
  std::optional<long> budget;
  std::vector<std::string> sets;
  app.add_option("--field", field, "Zoo field name or field definition file");
  app.add_option("--config", config_path, "Run configuration (key = value lines)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  auto* workers_opt = app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--budget", budget, "Sample or iteration budget of the command");
  app.add_option("--set", sets, "Config override key=value (repeatable)");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"flow", "Integrate descending trajectories"},
      {"retract", "Limit points and trajectory lengths"},
      {"levelset", "Gradient extrema profile over level sets"},
      {"classify", "Good / bad / ugly classification of a zero-locus point"},
      {"desing", "Desingularization from a gradient floor or an exponent fit"},
      {"envelope", "Continuous one-sided approximation of a semicontinuous profile"},
      {"cylinder", "Transversal hypersurface and mapping cylinder coordinates"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Run r;
  r.command = app.get_subcommands().front()->get_name();
  r.out = &out;
  r.err = &err;
  try {
    r.cfg = config_path.empty() ? Config{} : Config::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw Error("--set expects key=value, got '" + s + "'");
      r.cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!field.empty()) r.cfg.set("field", field);
    if (budget) r.cfg.set("budget", std::to_string(*budget));
    // Flags win over the config file, which wins over the defaults.
    if (!seed_opt->count() && r.cfg.has("seed")) seed = static_cast<std::uint64_t>(r.cfg.get_int("seed"));
    if (!workers_opt->count() && r.cfg.has("workers")) workers = static_cast<int>(r.cfg.get_int("workers"));
    if (!out_opt->count() && r.cfg.has("out")) out_dir = r.cfg.get_string("out");
    if (workers < 1) throw Error("workers must be positive");
    r.cfg.set("seed", std::to_string(seed));
    r.seed = seed;
    r.workers = workers;
    r.out_dir = out_dir;
    fs::create_directories(r.out_dir);
  } catch (const std::exception& e) {
    err << "kltool " << r.command << ": " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (r.command == "flow") return cmd_flow(r);
    if (r.command == "retract") return cmd_retract(r);
    if (r.command == "levelset") return cmd_levelset(r);
    if (r.command == "classify") return cmd_classify(r);
    if (r.command == "desing") return cmd_desing(r);
    if (r.command == "envelope") return cmd_envelope(r);
    return cmd_cylinder(r);
  } catch (const UsageError& e) {
    err << "kltool " << r.command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "kltool " << r.command << ": " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace kl::cli
