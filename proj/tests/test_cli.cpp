#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result kltool(std::vector<std::string> args) {
  args.insert(args.begin(), "kltool");
  std::ostringstream out, err;
  const int code = kl::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("kltool_test_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Numeric rows of a CSV with one header line.
std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::directory_iterator(a)) fa.push_back(e.path().filename());
  for (const auto& e : fs::directory_iterator(b)) fb.push_back(e.path().filename());
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa) {
    if (slurp(a / f) != slurp(b / f)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("flow on the disk writes trajectories within the length bound") {
  const auto d = fresh_dir("flow");
  const auto r = kltool({"flow", "--field", "disk", "--set", "n_starts=5", "--out", d.string()});
  REQUIRE(r.code == 0);
  const auto m = read_json(d / "manifest.json");
  REQUIRE(m["trajectories"].size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& t = m["trajectories"][i];
    CHECK(t["termination"] == "reached_zero_locus");
    CHECK(t["within_bound"] == true);
    CHECK(t["length"].get<double>() <= t["psi_bound"].get<double>() + 1e-6);
    const auto rows = read_csv(d / ("trajectory_00" + std::to_string(i) + ".csv"));
    REQUIRE(rows.size() > 2);
    CHECK(rows.front().size() == 5);  // s, x_1, x_2, f, arclen
    CHECK(rows.back()[4] == doctest::Approx(t["length"].get<double>()).epsilon(1e-12));
  }
  CHECK(r.out.find("Psi(f(x0))") != std::string::npos);
}

TEST_CASE("field and config errors exit with 2") {
  const auto d = fresh_dir("errors");
  auto r = kltool({"flow", "--field", "no_such_field", "--out", d.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("no_such_field") != std::string::npos);

  CHECK(kltool({"flow", "--out", d.string()}).code == 2);  // no field at all

  fs::create_directories(d);
  const auto cfg = d / "bad.cfg";
  std::ofstream(cfg) << "field = disk\nthis line has no equals sign\n";
  r = kltool({"flow", "--config", cfg.string(), "--out", d.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.cfg:2") != std::string::npos);

  std::ofstream(d / "typo.cfg") << "field = disk\nn_starts = five\n";
  r = kltool({"flow", "--config", (d / "typo.cfg").string(), "--out", d.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("typo.cfg:2") != std::string::npos);

  CHECK(kltool({"bogus"}).code == 2);
  CHECK(kltool({"flow", "--workers", "0"}).code == 2);
  CHECK(kltool({"--help"}).code == 0);
}

TEST_CASE("classify exit codes follow the verdict") {
  const auto d = fresh_dir("classify");
  auto r = kltool({"classify", "--field", "quadratic", "--out", (d / "q").string()});
  CHECK(r.code == 0);
  CHECK(read_json(d / "q" / "classification.json")["verdict"] == "good");
  CHECK(fs::exists(d / "q" / "profile.csv"));

  r = kltool({"classify", "--set", "inject_alpha=1 -1", "--set", "inject_beta=1 -1", "--out", (d / "u").string()});
  CHECK(r.code == 4);
  const auto u = read_json(d / "u" / "classification.json");
  CHECK(u["verdict"] == "ugly");
  CHECK(u["alpha"]["tail_exponent"].get<double>() == doctest::Approx(1.0).epsilon(0.02));

  r = kltool({"classify", "--set", "inject_alpha=1 -1", "--set", "inject_beta=1 -0.5", "--out", (d / "b").string()});
  CHECK(r.code == 3);

  r = kltool({"classify", "--field", "quadratic", "--budget", "0", "--out", (d / "z").string()});
  CHECK(r.code == 5);
  CHECK(read_json(d / "z" / "classification.json")["verdict"] == "inconclusive");
}

TEST_CASE("cylinder on the disk and strip") {
  const auto d = fresh_dir("cylinder");
  auto r = kltool({"cylinder", "--field", "disk", "--set", "c_ref=0.5", "--out", (d / "disk").string()});
  REQUIRE(r.code == 0);
  const auto chart = read_json(d / "disk" / "chart.json");
  REQUIRE(chart["c_sequence"].size() == 1);
  CHECK(chart["c_sequence"][0].get<double>() == 0.25);
  const auto H = read_csv(d / "disk" / "H.csv");
  CHECK(H.size() == 200);
  for (const auto& p : H) CHECK(std::hypot(p[0], p[1]) == doctest::Approx(1.5).epsilon(1e-7));
  CHECK(read_json(d / "disk" / "report.json")["passed"] == true);
  CHECK(read_csv(d / "disk" / "cylinder_grid.csv").size() == 20 * 21);

  r = kltool({"cylinder", "--field", "strip", "--set", "c_ref=0.25", "--out", (d / "strip").string()});
  REQUIRE(r.code == 0);
  // Height falls off with the distance from the component base, where h = 0.
  const double x0 = read_json(d / "strip" / "chart.json")["components"][0]["base"][0].get<double>();
  auto hs = read_csv(d / "strip" / "H.csv");
  std::sort(hs.begin(), hs.end(), [x0](const auto& a, const auto& b) { return std::abs(a[0] - x0) < std::abs(b[0] - x0); });
  for (std::size_t i = 1; i < hs.size(); ++i) CHECK(hs[i][1] <= hs[i - 1][1] + 1e-12);
  CHECK(hs.back()[1] < 0.5 * hs.front()[1]);
}

TEST_CASE("cylinder rejects n = 4 and reports crossing violations") {
  const auto d = fresh_dir("cylinder_errors");
  fs::create_directories(d);
  std::ofstream(d / "w4.field") << "dimension = 4\nbox = -1 1 -1 1 -1 1 -1 1\nf = x1^2 + x2^2 + x3^2 + x4^2\npsi = 1 0.5\n";
  auto r = kltool({"cylinder", "--field", (d / "w4.field").string(), "--out", d.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("n = 4") != std::string::npos);

  // The second start lies below H = {f = 0.25}.
  r = kltool({"cylinder", "--field", "disk", "--set", "starts=1.6 0, 1.3 0, 0 1.8", "--out", d.string()});
  CHECK(r.code == 6);
  CHECK(r.err.find("trajectory 1") != std::string::npos);
  const auto m = read_json(d / "manifest.json");
  REQUIRE(m["offending_trajectories"].size() == 1);
  CHECK(m["offending_trajectories"][0] == 1);
}

TEST_CASE("desing, levelset and envelope outputs") {
  const auto d = fresh_dir("modules");
  REQUIRE(kltool({"desing", "--set", "a=2*sqrt(t)", "--out", (d / "psi").string()}).code == 0);
  const auto psi = read_csv(d / "psi" / "psi.csv");
  REQUIRE(psi.size() > 100);
  for (const auto& row : psi) {
    CHECK(std::abs(row[1] - std::sqrt(row[0])) <= 1e-6);
    CHECK(row[2] == doctest::Approx(0.5 / std::sqrt(row[0])).epsilon(1e-12));
  }

  REQUIRE(kltool({"levelset", "--field", "quadratic", "--set", "rho=0.5", "--out", (d / "ls").string()}).code == 0);
  const auto prof = read_csv(d / "ls" / "profile.csv");
  CHECK(prof.size() == 24);
  for (const auto& row : prof) {
    CHECK(row[1] > 0);
    CHECK(std::abs(row[4] - 0.5 / std::sqrt(row[0])) <= 1e-6);
  }

  REQUIRE(kltool({"envelope", "--out", (d / "env").string()}).code == 0);
  const auto trace = read_json(d / "env" / "trace.json");
  CHECK(trace["side_violation"].get<double>() == 0.0);
  CHECK(trace["pieces"].size() > 0);
  for (const auto& row : read_csv(d / "env" / "envelope.csv")) CHECK(row[2] <= row[1]);

  REQUIRE(kltool({"desing", "--field", "quadratic", "--set", "mode=fit", "--set", "levels=16", "--out",
                  (d / "fit").string()}).code == 0);
  CHECK(read_json(d / "fit" / "fit.json")["theta"].get<double>() == doctest::Approx(0.5).epsilon(0.04));
  CHECK(read_json(d / "fit" / "verify.json")["worst_margin"].get<double>() >= -1e-3);
}

TEST_CASE("retract on the disk") {
  const auto d = fresh_dir("retract");
  REQUIRE(kltool({"retract", "--field", "disk", "--set", "n_starts=10", "--out", d.string()}).code == 0);
  for (const auto& row : read_csv(d / "retract.csv")) {
    const double r = std::hypot(row[0], row[1]);
    CHECK(std::hypot(row[2] - row[0] / r, row[3] - row[1] / r) <= 1e-6);
    CHECK(row[4] == doctest::Approx(r - 1.0).epsilon(1e-6));
  }
  std::ofstream(d / "bare.field") << "dimension = 2\nbox = -1 1 -1 1\nf = x^2 + y^2\n";
  const auto r = kltool({"retract", "--field", (d / "bare.field").string(), "--out", d.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("certificate") != std::string::npos);
}

TEST_CASE("same seed gives identical bytes") {
  const auto d = fresh_dir("determinism");
  for (const char* run : {"a", "b"}) {
    REQUIRE(kltool({"flow", "--field", "strip", "--seed", "11", "--set", "n_starts=4", "--out", (d / run / "flow").string()}).code == 0);
    REQUIRE(kltool({"classify", "--field", "quadratic", "--seed", "11", "--out", (d / run / "cls").string()}).code == 0);
  }
  REQUIRE(kltool({"flow", "--field", "strip", "--seed", "11", "--set", "n_starts=4", "--workers", "3", "--out",
                  (d / "c" / "flow").string()}).code == 0);
  REQUIRE(kltool({"flow", "--field", "strip", "--seed", "12", "--set", "n_starts=4", "--out", (d / "e" / "flow").string()}).code == 0);
  CHECK(same_tree(d / "a" / "flow", d / "b" / "flow"));
  CHECK(same_tree(d / "a" / "cls", d / "b" / "cls"));
  CHECK(same_tree(d / "a" / "flow", d / "c" / "flow"));
  CHECK_FALSE(same_tree(d / "a" / "flow", d / "e" / "flow"));
}
