#include "kl/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace kl {

namespace {

// JSON has no infinities; they are spelled out instead of collapsing to null.
Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw Error("write_csv: row width differs from header in '" + path + "'");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_real(row[i]);
    out << '\n';
  }
}

void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  const int n = static_cast<int>(traj.front().x.size());
  std::vector<std::string> header{"s"};
  for (int i = 1; i <= n; ++i) header.push_back("x_" + std::to_string(i));
  header.insert(header.end(), {"f", "arclen"});
  std::vector<std::vector<double>> rows;
  rows.reserve(traj.samples.size());
  for (const auto& smp : traj.samples) {
    std::vector<double> r{smp.s};
    r.insert(r.end(), smp.x.data(), smp.x.data() + n);
    r.push_back(smp.f);
    r.push_back(smp.arclen);
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

Json trajectory_manifest(const Trajectory& traj) {
  Json j;
  j["clock"] = to_string(traj.clock);
  j["termination"] = to_string(traj.termination);
  j["samples"] = traj.samples.size();
  j["extent"] = num(traj.extent());
  j["f_start"] = num(traj.front().f);
  j["f_end"] = num(traj.back().f);
  j["arclength"] = num(traj.back().arclen - traj.front().arclen);
  j["limit_point"] = traj.limit_point ? to_json(*traj.limit_point) : Json(nullptr);
  return j;
}

void write_profile_csv(const std::string& path, const LevelSetProfile& profile) {
  std::vector<std::vector<double>> rows;
  for (const auto& l : profile.levels) {
    rows.push_back({l.t, static_cast<double>(l.n_samples), l.min_grad, l.max_grad, l.alpha, l.beta, l.coverage});
  }
  write_csv(path, {"t", "n_samples", "min_grad", "max_grad", "alpha", "beta", "coverage"}, rows);
}

void write_envelope_csv(const std::string& path, const EnvelopeResult& env) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < env.t.size(); ++i) rows.push_back({env.t[i], env.u[i], env.w[i]});
  write_csv(path, {"t", "u", "w"}, rows);
}

Json envelope_trace(const EnvelopeResult& env) {
  Json j;
  j["kind"] = to_string(env.kind);
  j["ceiling"] = num(env.ceiling);
  j["side_violation"] = num(env.side_violation);
  j["l1_gap"] = num(env.l1_gap);
  j["continuity_modulus"] = num(env.continuity_modulus);
  j["max_stitch_jump"] = num(env.max_stitch_jump);
  j["partial"] = env.partial;
  j["note"] = env.note;
  Json pieces = Json::array();
  for (const auto& p : env.pieces) {
    Json q;
    q["k"] = p.k;
    q["a_lo"] = num(p.a_lo);
    q["a_hi"] = num(p.a_hi);
    q["lambda"] = num(p.lambda);
    q["halvings"] = p.halvings;
    q["defect"] = num(p.defect);
    q["target_met"] = p.target_met;
    q["m"] = num(p.m);
    q["eps"] = num(p.eps);
    q["stitched_side"] = p.stitched_side;
    q["stitch_correction"] = num(p.stitch_correction);
    q["stitch_met"] = p.stitch_met;
    pieces.push_back(std::move(q));
  }
  j["pieces"] = std::move(pieces);
  return j;
}

void write_polyline_csv(const std::string& path, const std::vector<Vec>& points) {
  std::vector<std::vector<double>> rows;
  for (const auto& p : points) rows.push_back({p[0], p[1]});
  write_csv(path, {"x_1", "x_2"}, rows);
}

void write_obj(const std::string& path, const std::vector<Vec>& vertices,
               const std::vector<std::vector<std::size_t>>& lines) {
  auto out = open_out(path);
  for (const auto& v : vertices) {
    out << 'v';
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_real(v[i]);
    out << '\n';
  }
  for (const auto& l : lines) {
    out << 'l';
    for (std::size_t i : l) out << ' ' << i;
    out << '\n';
  }
}

Json to_json(const Vec& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(num(v[i]));
  return j;
}

Json to_json(const VerdictResult& v) {
  Json j;
  j["verdict"] = to_string(v.verdict);
  j["integral"] = num(v.integral);
  j["tail_exponent"] = num(v.tail_exponent);
  j["tail_coef"] = num(v.tail_coef);
  j["tail_points"] = v.tail_points;
  j["note"] = v.note;
  return j;
}

Json to_json(const ExponentFit& fit) {
  Json j;
  j["theta"] = num(fit.theta);
  j["C"] = num(fit.C);
  j["C_quantile"] = num(fit.C_quantile);
  j["r2"] = num(fit.r2);
  j["n_points"] = fit.n_points;
  j["has_certificate"] = fit.certificate.has_value();
  j["note"] = fit.note;
  return j;
}

Json to_json(const PointClass& pc) {
  Json j;
  j["verdict"] = to_string(pc.verdict);
  j["point"] = to_json(pc.point);
  j["simple_nondegenerate"] = pc.simple_nondegenerate;
  j["witness_margin"] = num(pc.witness_margin);
  j["alpha_integral"] = num(pc.alpha_integral);
  j["beta_integral"] = num(pc.beta_integral);
  j["alpha"] = to_json(pc.alpha);
  j["beta"] = to_json(pc.beta);
  j["exponent_fit"] = pc.fitted_exponent ? to_json(*pc.fitted_exponent) : Json(nullptr);
  j["note"] = pc.note;
  return j;
}

Json to_json(const VerifyReport& r) {
  Json j;
  j["checked"] = r.checked;
  j["worst_margin"] = num(r.worst_margin);
  j["worst_point"] = to_json(r.worst_point);
  j["n_failures"] = r.n_failures;
  Json f = Json::array();
  for (const auto& x : r.failures) f.push_back(to_json(x));
  j["failures"] = std::move(f);
  j["passed"] = r.passed;
  return j;
}

Json to_json(const CylinderReport& r) {
  Json j;
  j["n_q"] = r.n_q;
  j["n_t"] = r.n_t;
  j["max_level_error"] = num(r.max_level_error);
  j["min_pair_distance"] = num(r.min_pair_distance);
  j["continuity_modulus"] = num(r.continuity_modulus);
  j["retraction_mismatch"] = num(r.retraction_mismatch);
  j["charted_extent"] = num(r.charted_extent);
  j["coverage_gap"] = num(r.coverage_gap);
  j["boundary_samples_used"] = r.boundary_samples_used;
  j["preimage_h_extent"] = num(r.preimage_h_extent);
  j["single_crossing_failures"] = r.single_crossing_failures;
  j["passed"] = r.passed;
  j["note"] = r.note;
  return j;
}

Json chart_manifest(const FhatChart& fc, const CSequence& seq) {
  const auto& ch = fc.chart;
  Json j;
  j["c_ref"] = num(ch.c_ref);
  j["reference_points"] = ch.reference_points.size();
  j["link"] = num(ch.link);
  Json comps = Json::array();
  for (const auto& c : ch.components) {
    Json q;
    q["members"] = c.members.size();
    q["compact"] = c.compact;
    q["h_max"] = num(c.h_max);
    q["base"] = to_json(ch.reference_points[c.base]);
    q["bucket_offset"] = c.bucket_offset;
    q["bucket_count"] = c.bucket_count;
    comps.push_back(std::move(q));
  }
  j["components"] = std::move(comps);
  Json buckets = Json::array();
  for (const auto& b : ch.buckets) {
    Json q;
    q["index"] = b.index;
    q["component"] = b.component;
    q["center"] = num(b.center);
    q["members"] = b.members.size();
    buckets.push_back(std::move(q));
  }
  j["buckets"] = std::move(buckets);
  Json c = Json::array();
  for (double v : seq.c) c.push_back(num(v));
  j["c_sequence"] = std::move(c);
  j["halvings"] = seq.halvings;
  j["ok"] = seq.ok;
  j["failure"] = seq.failure;
  return j;
}

}  // namespace kl
