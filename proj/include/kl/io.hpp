#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "kl/cylinder.hpp"
#include "kl/envelope.hpp"
#include "kl/flow.hpp"
#include "kl/levelset.hpp"

namespace kl {

using Json = nlohmann::ordered_json;

/// Every real is written with %.17g so files round-trip and compare byte for byte.
std::string format_real(double v);

/// Comma-separated table; throws kl::Error if the file cannot be written.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
void write_json(const std::string& path, const Json& j);
void write_text(const std::string& path, const std::string& text);

/// Columns s, x_1..x_n, f, arclen.
void write_trajectory_csv(const std::string& path, const Trajectory& traj);
Json trajectory_manifest(const Trajectory& traj);

/// Columns t, n_samples, min_grad, max_grad, alpha, beta, coverage (t decreasing).
void write_profile_csv(const std::string& path, const LevelSetProfile& profile);

/// Columns t, u, w.
void write_envelope_csv(const std::string& path, const EnvelopeResult& env);
/// Per-interval lambda, eps, m and defects plus the global diagnostics.
Json envelope_trace(const EnvelopeResult& env);

/// Two-dimensional polyline: columns x_1, x_2 in the given order.
void write_polyline_csv(const std::string& path, const std::vector<Vec>& points);
/// Wavefront OBJ with vertices and optional polyline elements (1-based vertex indices).
void write_obj(const std::string& path, const std::vector<Vec>& vertices,
               const std::vector<std::vector<std::size_t>>& lines = {});

Json to_json(const Vec& v);
Json to_json(const VerdictResult& v);
Json to_json(const PointClass& pc);
Json to_json(const ExponentFit& fit);
Json to_json(const VerifyReport& r);
Json to_json(const CylinderReport& r);
/// c_ref, components, buckets and the c sequence.
Json chart_manifest(const FhatChart& fc, const CSequence& seq);

}  // namespace kl
