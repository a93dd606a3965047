#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace optdesign;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("optdesign_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Trace CSV without the wall-clock column.
std::string trace_body(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string error_of(const std::string& text) {
  try {
    cli::parse_config(text, "cfg.json");
  } catch (const cli::ValidationError& e) {
    return e.what();
  }
  return "";
}

const char* kSquare = R"({
  "space": "unit_cube",
  "basis": {"kind": "monomials", "degree": 1},
  "k": 4,
  "prior": {"kind": "scaled_identity", "c": 0.0001},
  "algorithm": {"name": "ALGO", "iterations": 20, "sweeps": 2},
  "seeds": [1, 2, 3, 4],
  "output": "out"
})";

std::string config_for(const std::string& algorithm) {
  std::string s = kSquare;
  s.replace(s.find("ALGO"), 4, algorithm);
  return s;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("validation errors carry the line of the key") {
  const std::string bad_k = "{\n  \"space\": \"unit_cube\",\n  \"basis\": {\"kind\": \"monomials\", \"degree\": 1},\n"
                            "  \"k\": 0,\n  \"algorithm\": \"lsa\"\n}";
  CHECK(error_of(bad_k).find("cfg.json:4: k:") == 0);

  const std::string bad_algo = "{\n  \"algorithm\": \"annealing\"\n}";
  CHECK(error_of(bad_algo).find("cfg.json:2: algorithm:") == 0);

  const std::string bad_sigma =
      "{\n  \"space\": \"unit_cube\",\n  \"basis\": {\"kind\": \"monomials\", \"degree\": 1},\n  \"k\": 3,\n"
      "  \"algorithm\": {\"name\": \"lsa\", \"sigma\": -1}\n}";
  CHECK(error_of(bad_sigma).find("cfg.json:5: algorithm:") == 0);

  const std::string missing_file =
      "{\n  \"space\": \"unit_cube\",\n  \"basis\": {\"kind\": \"monomials\", \"degree\": 1},\n  \"k\": 3,\n"
      "  \"algorithm\": \"lsa\",\n  \"reference_design\": \"nope.csv\"\n}";
  CHECK(error_of(missing_file).find("cfg.json:6: reference_design:") == 0);

  const std::string bad_prior =
      "{\n  \"space\": \"unit_cube\",\n  \"basis\": {\"kind\": \"monomials\", \"degree\": 1},\n  \"k\": 3,\n"
      "  \"algorithm\": \"lsa\",\n  \"prior\": {\"kind\": \"ridge\"}\n}";
  CHECK(error_of(bad_prior).find("cfg.json:6: prior:") == 0);

  const std::string bad_weights =
      "{\n  \"space\": {\"dimension\": 1, \"atoms\": [[0], [1]]},\n  \"basis\": {\"kind\": \"monomials\", \"degree\": 1},\n"
      "  \"k\": 2,\n  \"algorithm\": \"pvs\",\n  \"measure\": {\"kind\": \"atoms\", \"weights\": [1]}\n}";
  CHECK(error_of(bad_weights).find("cfg.json:6: measure:") == 0);
}

TEST_CASE("invalid JSON reports the failing line") {
  const std::string text = "{\n  \"k\": 3,\n  \"space\" \"unit_cube\"\n}";
  CHECK(error_of(text).find("cfg.json:3: invalid JSON") == 0);
}

TEST_CASE("run exit codes") {
  TempDir dir("exit");
  std::ostringstream out, err;
  CHECK(cli::run_command(dir.path / "missing.json", 1, out, err) == 2);
  const auto bad = write_file(dir.path / "bad.json", "{\"algorithm\": \"lsa\", \"k\": 0}");
  CHECK(cli::run_command(bad, 1, out, err) == 2);
  // a singular Gramian is a runtime failure
  const auto singular = write_file(dir.path / "singular.json", R"({
    "space": {"dimension": 1, "atoms": [[0.5], [0.7]]},
    "basis": {"kind": "monomials", "degree": 1},
    "k": 2, "algorithm": "pvs", "measure": {"kind": "atoms", "weights": [1, 0]}})");
  CHECK(cli::run_command(singular, 1, out, err) == 1);
}

TEST_CASE("summary criteria match the emitted designs") {
  TempDir dir("summary");
  for (const std::string algo : {"pvs-conditional", "lsa", "dogs", "exm", "iid"}) {
    CAPTURE(algo);
    const auto cfg = write_file(dir.path / (algo + ".json"), config_for(algo));
    std::ostringstream out, err;
    REQUIRE(cli::run_command(cfg, 2, out, err) == 0);
    const fs::path outdir = dir.path / "out";
    const auto summary = nlohmann::json::parse(slurp(outdir / "summary.json"));
    CHECK(summary["schema"] == "optdesign-summary/1");
    CHECK(summary["runs"].size() == 4);
    const Basis b = Basis::monomials(2, 1);
    const PriorMatrix prior = PriorMatrix::scaled_identity(3, 1e-4);
    for (const auto& run : summary["runs"]) {
      const PointSet d = cli::read_design_csv(outdir / run["design"].get<std::string>());
      CHECK(d.rows() == 4);
      const double value = criterion(information_matrix(b, d, prior), Criterion::D);
      CHECK(std::abs(run["criterion"].get<double>() - value) <= 1e-12 * value);
      if (algo != "pvs-conditional" && algo != "iid") CHECK(run.contains("trace"));
    }
    fs::remove_all(outdir);
  }
}

TEST_CASE("discrete runs with atoms, references and relaxation") {
  TempDir dir("discrete");
  write_file(dir.path / "ref.csv", "x1\n0\n0.5\n1\n");
  const auto cfg = write_file(dir.path / "cfg.json", R"({
    "space": {"dimension": 1, "atoms": [[0], [0.25], [0.5], [0.75], [1]]},
    "basis": {"kind": "monomials", "degree": 2},
    "k": 3,
    "algorithm": "relax",
    "reference_design": "ref.csv",
    "seeds": {"first": 10, "count": 3}
  })");
  std::ostringstream out, err;
  REQUIRE(cli::run_command(cfg, 1, out, err) == 0);
  const auto relax = nlohmann::json::parse(slurp(dir.path / "out" / "relaxation.json"));
  CHECK(relax["total"].get<double>() == doctest::Approx(3.0));
  const auto summary = nlohmann::json::parse(slurp(dir.path / "out" / "summary.json"));
  CHECK(summary["runs"][0]["seed"] == 10);
  CHECK(summary["runs"][0].contains("d_efficiency"));
  CHECK(fs::exists(dir.path / "out" / "design_12.csv"));

  const auto exm = write_file(dir.path / "exm.json", R"({
    "space": {"dimension": 1, "atoms": [[0], [0.25], [0.5], [0.75], [1]]},
    "basis": {"kind": "monomials", "degree": 2},
    "k": 3, "algorithm": "exm-discrete", "reference_design": "ref.csv", "output": "exm"
  })");
  REQUIRE(cli::run_command(exm, 1, out, err) == 0);
  const auto s2 = nlohmann::json::parse(slurp(dir.path / "exm" / "summary.json"));
  CHECK(s2["runs"][0]["d_efficiency"].get<double>() <= 1.0 + 1e-12);
}

TEST_CASE("runs are reproducible and independent of the worker count") {
  TempDir dir("determinism");
  for (const std::string algo : {"dogs", "lsa", "exm", "pvs-conditional"}) {
    CAPTURE(algo);
    std::string a = config_for(algo), b = a;
    b.replace(b.find("\"out\""), 5, "\"out2\"");
    const auto ca = write_file(dir.path / "a.json", a);
    const auto cb = write_file(dir.path / "b.json", b);
    std::ostringstream out, err;
    REQUIRE(cli::run_command(ca, 1, out, err) == 0);
    REQUIRE(cli::run_command(cb, 3, out, err) == 0);
    for (int seed = 1; seed <= 4; ++seed) {
      const std::string design = "design_" + std::to_string(seed) + ".csv";
      CHECK(slurp(dir.path / "out" / design) == slurp(dir.path / "out2" / design));
      const std::string trace = "trace_" + std::to_string(seed) + ".csv";
      if (fs::exists(dir.path / "out" / trace))
        CHECK(trace_body(dir.path / "out" / trace) == trace_body(dir.path / "out2" / trace));
    }
    const auto sa = nlohmann::json::parse(slurp(dir.path / "out" / "summary.json"));
    const auto sb = nlohmann::json::parse(slurp(dir.path / "out2" / "summary.json"));
    CHECK(sa["config_hash"] != sb["config_hash"]);
    fs::remove_all(dir.path / "out");
    fs::remove_all(dir.path / "out2");
  }
}

TEST_CASE("OPTDESIGN_SEED overrides the config seeds") {
  ::setenv("OPTDESIGN_SEED", "7,9", 1);
  auto cfg = cli::parse_config(config_for("lsa"), "cfg.json");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 9});
  ::setenv("OPTDESIGN_SEED", "x", 1);
  CHECK_THROWS_AS(cli::parse_config(config_for("lsa"), "cfg.json"), cli::ValidationError);
  ::unsetenv("OPTDESIGN_SEED");
  CHECK(cli::parse_config(config_for("lsa"), "cfg.json").seeds.size() == 4);
}

TEST_CASE("compare") {
  TempDir dir("compare");
  const auto cfg = write_file(dir.path / "cfg.json", config_for("lsa"));
  std::ostringstream out, err;
  REQUIRE(cli::run_command(cfg, 2, out, err) == 0);
  const fs::path summary = dir.path / "out" / "summary.json";

  REQUIRE(cli::compare_command({summary}, dir.path / "one.csv", err) == 0);
  const std::string one = slurp(dir.path / "one.csv");
  CHECK(one.rfind("algorithm,iteration,count,median,p05,p95\n", 0) == 0);
  std::istringstream lines(one);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(line.rfind("lsa,", 0) == 0);
    CHECK(line.find(",4,") != std::string::npos);
  }
  CHECK(rows == 21);

  REQUIRE(cli::compare_command({summary, summary}, dir.path / "two.csv", err) == 0);
  std::istringstream a(one), b(slurp(dir.path / "two.csv"));
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);
  auto cells = [](const std::string& l) {
    std::vector<std::string> c;
    std::stringstream ss(l);
    for (std::string x; std::getline(ss, x, ',');) c.push_back(x);
    return c;
  };
  while (std::getline(a, la) && std::getline(b, lb)) {
    auto ca = cells(la), cb = cells(lb);
    REQUIRE(ca.size() == 6);
    REQUIRE(cb.size() == 6);
    CHECK(std::stoi(cb[2]) == 2 * std::stoi(ca[2]));
    ca[2] = cb[2];
    CHECK(ca == cb);
  }

  auto doc = nlohmann::json::parse(slurp(summary));
  doc["schema"] = "something-else/2";
  write_file(dir.path / "other.json", doc.dump());
  std::ostringstream e2;
  CHECK(cli::compare_command({dir.path / "other.json"}, dir.path / "bad.csv", e2) == 1);
  CHECK(e2.str().find("schema mismatch") != std::string::npos);
  CHECK(cli::compare_command({}, dir.path / "bad.csv", e2) == 1);
}

TEST_CASE("nearest-rank percentiles") {
  CHECK(cli::nearest_rank({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(cli::nearest_rank({1, 2, 3, 4}, 0.5) == 2.0);
  CHECK(cli::nearest_rank({5.0}, 0.05) == 5.0);
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(cli::nearest_rank(v, 0.05) == 5.0);
  CHECK(cli::nearest_rank(v, 0.95) == 95.0);
  CHECK(cli::nearest_rank(v, 1.0) == 100.0);
}

TEST_CASE("verify") {
  std::ostringstream out;
  CHECK(cli::verify_command("F1", std::nullopt, out) == 0);
  CHECK(out.str().find("FAIL") == std::string::npos);
  CHECK(out.str().find("PASS") != std::string::npos);
  std::ostringstream r;
  CHECK(cli::verify_command("random", 5, r) == 0);
  std::ostringstream bad;
  CHECK(cli::verify_command("F9", std::nullopt, bad) == 2);
}

TEST_CASE("number formatting and CSV round trip") {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) CHECK(std::stod(cli::format_double(x)) == x);
  CHECK(cli::format_double(std::numeric_limits<double>::infinity()) == "inf");
  TempDir dir("csv");
  PointSet d(3, 2);
  d << 0.1, 0.2, 1.0 / 3.0, 2.0 / 3.0, 1e-17, 1.0;
  cli::write_design_csv(dir.path / "d.csv", d);
  CHECK(slurp(dir.path / "d.csv").rfind("x1,x2\n", 0) == 0);
  CHECK(cli::read_design_csv(dir.path / "d.csv") == d);
  CHECK(cli::config_hash({{"a", 1}}) == cli::config_hash({{"a", 1}}));
  CHECK(cli::config_hash({{"a", 1}}).size() == 16);
}

}
