#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "optdesign/oracle.hpp"

namespace optdesign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSchema = "optdesign-summary/1";

const std::vector<std::string> kAlgorithms = {"pvs", "pvs-conditional", "dogs", "lsa", "exm",
                                              "exm-discrete", "relax", "verify", "iid"};

bool uses_measure(const std::string& name) {
  return name == "pvs" || name == "pvs-conditional" || name == "relax" || name == "iid";
}

/// 1-based line of the first `"key":` in the config text, or 1 if absent.
int line_of(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  std::size_t pos = 0;
  while ((pos = text.find(quoted, pos)) != std::string::npos) {
    std::size_t after = pos + quoted.size();
    while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
    if (after < text.size() && text[after] == ':')
      return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
    pos = after;
  }
  return 1;
}

PointSet points_from(const json& j, int dimension) {
  PointSet out(static_cast<Eigen::Index>(j.size()), dimension);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = j[i].get<std::vector<double>>();
    if (static_cast<int>(row.size()) != dimension) throw DimensionMismatch("point has the wrong dimension");
    for (int c = 0; c < dimension; ++c) out(static_cast<Eigen::Index>(i), c) = row[static_cast<std::size_t>(c)];
  }
  return out;
}

Criterion criterion_from(const std::string& s) {
  if (s == "A") return Criterion::A;
  if (s == "D") return Criterion::D;
  if (s == "logD") return Criterion::LogD;
  throw Error("criterion must be A, D or logD, got '" + s + "'");
}

std::string criterion_name(Criterion c) {
  switch (c) {
    case Criterion::A: return "A";
    case Criterion::D: return "D";
    case Criterion::LogD: return "logD";
  }
  return "D";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  const auto last = s.find_last_not_of(" \t\r");
  if (first == std::string::npos) throw Error("empty CSV cell");
  const std::string t = s.substr(first, last - first + 1);
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  if (t == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw Error("not a number: '" + t + "'");
  return v;
}

PriorMatrix read_prior_file(const fs::path& path, int p) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open prior matrix file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    for (const auto& cell : split_csv_line(line)) row.push_back(parse_double(cell));
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != p) throw DimensionMismatch("prior matrix file must have p rows");
  Eigen::MatrixXd m(p, p);
  for (int i = 0; i < p; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != p)
      throw DimensionMismatch("prior matrix file must have p columns");
    for (int j = 0; j < p; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return PriorMatrix(m);
}

/// Objects derived once from the config and shared read-only by all workers.
struct Prepared {
  const ExperimentConfig* config = nullptr;
  std::shared_ptr<const ReferenceMeasure> measure;
  std::optional<PvsModel> model;
  std::optional<WeightSolution> relaxation;
  PointSet candidates;
  ProposalConfig proposal;
};

std::shared_ptr<const ReferenceMeasure> make_measure(const ExperimentConfig& cfg, Prepared& prep) {
  const double mass = cfg.measure.mass.value_or(static_cast<double>(cfg.k));
  const auto* finite = dynamic_cast<const FiniteSpace*>(cfg.space.get());
  const std::string& kind = cfg.measure.kind;
  if (finite) {
    Eigen::VectorXd w;
    if (kind == "uniform") {
      w = Eigen::VectorXd::Constant(finite->size(), mass / finite->size());
    } else if (kind == "atoms") {
      w = Eigen::Map<const Eigen::VectorXd>(cfg.measure.weights.data(),
                                            static_cast<Eigen::Index>(cfg.measure.weights.size()));
    } else {
      prep.relaxation = solve_discrete_weights(finite->atoms(), *cfg.basis, *cfg.prior, cfg.k, cfg.which);
      w = prep.relaxation->weights;
    }
    return std::make_shared<AtomicMeasure>(finite->atoms(), w);
  }
  if (kind == "uniform") return std::make_shared<UniformMeasure>(cfg.space, mass);
  const DensityFamily family = polynomial_corner_family(cfg.space, *cfg.basis, cfg.measure.max_degree);
  prep.relaxation = solve_density_weights(family, *cfg.prior, cfg.k, cfg.which);
  return density_from_weights(family, prep.relaxation->weights);
}

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared prep;
  prep.config = &cfg;
  const auto& params = cfg.algorithm.params;
  const std::string& name = cfg.algorithm.name;
  if (uses_measure(name)) {
    prep.measure = make_measure(cfg, prep);
    if (name == "pvs" || name == "pvs-conditional") {
      Rng rng(cfg.gramian_seed);
      prep.model = build_model(*cfg.basis, *cfg.prior, prep.measure, GramianOptions{cfg.gramian_samples, true, true}, rng);
    }
  }
  const auto* finite = dynamic_cast<const FiniteSpace*>(cfg.space.get());
  const auto* design = dynamic_cast<const DesignSpace*>(cfg.space.get());
  if (name == "exm-discrete") {
    const json c = params.value("candidates", json());
    if (c.is_object() && c.contains("grid_step"))
      prep.candidates = grid_candidates(*cfg.space, c.at("grid_step").get<double>());
    else if (c.is_array())
      prep.candidates = points_from(c, cfg.space->dimension());
    else if (finite)
      prep.candidates = finite->atoms();
    else if (design && design->candidates().rows() > 0)
      prep.candidates = design->candidates();
    else
      throw Error("exm-discrete needs candidates: a list, {\"grid_step\": h}, or a space with candidates");
  }
  if (name == "dogs") {
    prep.proposal.size = params.value("proposal_size", 50);
    const std::string mode = params.value("mode", std::string("uniform"));
    prep.proposal.mode = mode == "uniform" ? ProposalMode::uniform : ProposalMode::uniform_plus_candidates;
    if (prep.proposal.mode == ProposalMode::uniform_plus_candidates) {
      const json c = params.value("candidates", json("space"));
      if (c.is_array())
        prep.proposal.candidates = points_from(c, cfg.space->dimension());
      else if (design)
        prep.proposal.candidates = design->candidates();
      else if (finite)
        prep.proposal.candidates = finite->atoms();
    }
  }
  return prep;
}

SearchProblem problem_of(const ExperimentConfig& cfg) {
  return SearchProblem{cfg.space, *cfg.basis, *cfg.prior, cfg.k, cfg.which};
}

RunResult run_seed(const Prepared& prep, std::uint64_t seed) {
  const ExperimentConfig& cfg = *prep.config;
  const auto& params = cfg.algorithm.params;
  const auto& name = cfg.algorithm.name;
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  RunResult r;
  r.seed = seed;
  if (name == "pvs") {
    r.design = sample_pvs(*prep.model, rng).points;
  } else if (name == "pvs-conditional") {
    r.design = sample_pvs_conditional(*prep.model, cfg.k, rng).points;
  } else if (name == "iid" || name == "relax") {
    r.design.resize(cfg.k, cfg.space->dimension());
    for (int i = 0; i < cfg.k; ++i) r.design.row(i) = prep.measure->draw(rng).transpose();
  } else if (name == "dogs") {
    DogsOptions o;
    o.proposal = prep.proposal;
    o.iterations = params.value("iterations", 100);
    o.condition_on_k = params.value("condition_on_k", true);
    r.trace = dogs(problem_of(cfg), o, rng);
  } else if (name == "lsa") {
    LsaOptions o;
    o.sigma = params.value("sigma", 0.01);
    o.iterations = params.value("iterations", 1000);
    r.trace = lsa(problem_of(cfg), o, rng);
  } else if (name == "exm") {
    ExchangeOptions o;
    o.sweeps = params.value("sweeps", 20);
    o.inner_budget = params.value("inner_budget", 5);
    o.evaluations_per_start = params.value("evaluations_per_start", 200);
    r.trace = exchange_continuous(problem_of(cfg), o, rng);
  } else if (name == "exm-discrete") {
    ExchangeOptions o;
    o.sweeps = params.value("sweeps", 100);
    r.trace = exchange_discrete(prep.candidates, problem_of(cfg), o, rng);
  } else {
    throw Error("algorithm '" + name + "' has no per-seed run");
  }
  if (r.trace) {
    r.design = r.trace->best;
    r.warnings = r.trace->warnings;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json run_entry(const ExperimentConfig& cfg, const RunResult& r) {
  const Eigen::MatrixXd m = information_matrix(*cfg.basis, r.design, *cfg.prior);
  double value = std::numeric_limits<double>::infinity();
  double log_value = value;
  try {
    value = criterion(m, cfg.which);
    log_value = log_criterion(m, cfg.which);
  } catch (const SingularMatrixError&) {
  }
  json entry = {{"seed", r.seed},
                {"points", r.design.rows()},
                {"criterion", number_or_null(value)},
                {"criterion_log", number_or_null(log_value)},
                {"seconds", r.seconds},
                {"design", "design_" + std::to_string(r.seed) + ".csv"}};
  if (r.trace) entry["trace"] = "trace_" + std::to_string(r.seed) + ".csv";
  if (cfg.reference) {
    json d = nullptr, a = nullptr;
    try {
      d = d_efficiency(r.design, *cfg.reference, *cfg.basis, *cfg.prior);
    } catch (const Error&) {
    }
    try {
      a = a_efficiency(r.design, *cfg.reference, *cfg.basis, *cfg.prior);
    } catch (const Error&) {
    }
    entry["d_efficiency"] = d;
    entry["a_efficiency"] = a;
  }
  if (!r.warnings.empty()) entry["warnings"] = r.warnings;
  return entry;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, ptr};
}

void write_design_csv(const fs::path& path, const PointSet& design) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (Eigen::Index c = 0; c < design.cols(); ++c) out << (c ? "," : "") << "x" << c + 1;
  out << "\n";
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    for (Eigen::Index c = 0; c < design.cols(); ++c) out << (c ? "," : "") << format_double(design(i, c));
    out << "\n";
  }
}

PointSet read_design_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open design file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (first) {
      first = false;
      const auto t = cells.empty() ? std::string() : cells[0];
      if (t.find('x') != std::string::npos) continue;
    }
    std::vector<double> row;
    for (const auto& cell : cells) row.push_back(parse_double(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw Error("ragged design file " + path.string());
    rows.push_back(std::move(row));
  }
  PointSet out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return out;
}

void write_trace_csv(const fs::path& path, const SearchTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iteration,criterion_log,seconds\n";
  for (const auto& r : trace.records)
    out << r.iteration << "," << format_double(r.criterion_log) << "," << format_double(r.seconds) << "\n";
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::optional<std::vector<std::uint64_t>> seeds_from_env() {
  const char* v = std::getenv("OPTDESIGN_SEED");
  if (!v || !*v) return std::nullopt;
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::uint64_t s = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), s);
    if (ec != std::errc() || ptr != cell.data() + cell.size())
      throw ValidationError("OPTDESIGN_SEED: '" + cell + "' is not a nonnegative integer");
    seeds.push_back(s);
  }
  return seeds;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ":1: cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

ExperimentConfig parse_config(const std::string& text, const fs::path& source) {
  ExperimentConfig cfg;
  cfg.source = source;
  try {
    cfg.raw = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ValidationError(source.string() + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  const fs::path base = source.has_parent_path() ? source.parent_path() : fs::path(".");
  const json& j = cfg.raw;
  auto fail = [&](const std::string& key, const std::string& message) -> ValidationError {
    return ValidationError(source.string() + ":" + std::to_string(line_of(text, key)) + ": " + key + ": " + message);
  };
  auto section = [&](const std::string& key, auto&& body) {
    try {
      body();
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw fail(key, e.what());
    }
  };
  if (!j.is_object()) throw ValidationError(source.string() + ":1: config must be a JSON object");

  section("algorithm", [&] {
    const json& a = j.at("algorithm");
    cfg.algorithm.name = a.is_string() ? a.get<std::string>() : a.at("name").get<std::string>();
    cfg.algorithm.params = a.is_object() ? a : json::object();
    if (std::find(kAlgorithms.begin(), kAlgorithms.end(), cfg.algorithm.name) == kAlgorithms.end())
      throw Error("unknown algorithm '" + cfg.algorithm.name + "'");
  });
  section("output", [&] { cfg.output = base / j.value("output", std::string("out")); });
  if (cfg.algorithm.name == "verify") return cfg;

  section("space", [&] { cfg.space = space_from_json(j.at("space")); });
  section("basis", [&] { cfg.basis = basis_from_json(j.at("basis"), *cfg.space); });
  section("k", [&] {
    cfg.k = j.at("k").get<int>();
    if (cfg.k < 1) throw Error("must be at least 1");
  });
  section("criterion", [&] { cfg.which = criterion_from(j.value("criterion", std::string("D"))); });
  section("prior", [&] {
    const int p = cfg.basis->size();
    const json pr = j.value("prior", json("zero"));
    const std::string kind = pr.is_string() ? pr.get<std::string>() : pr.at("kind").get<std::string>();
    if (kind == "zero")
      cfg.prior = PriorMatrix::zero(p);
    else if (kind == "scaled_identity")
      cfg.prior = PriorMatrix::scaled_identity(p, pr.at("c").get<double>());
    else if (kind == "matrix_file") {
      const fs::path file = base / pr.at("path").get<std::string>();
      if (!fs::exists(file)) throw Error("file " + file.string() + " does not exist");
      cfg.prior = read_prior_file(file, p);
    } else
      throw Error("kind must be zero, scaled_identity or matrix_file");
  });
  section("seeds", [&] {
    const json s = j.value("seeds", json::array({0}));
    if (s.is_array()) {
      cfg.seeds = s.get<std::vector<std::uint64_t>>();
    } else {
      const auto first = s.at("first").get<std::uint64_t>();
      const auto count = s.at("count").get<std::uint64_t>();
      for (std::uint64_t i = 0; i < count; ++i) cfg.seeds.push_back(first + i);
    }
    if (cfg.seeds.empty()) throw Error("at least one seed is required");
  });
  if (auto env = seeds_from_env()) cfg.seeds = *env;
  section("reference_design", [&] {
    if (!j.contains("reference_design")) return;
    const fs::path file = base / j.at("reference_design").get<std::string>();
    if (!fs::exists(file)) throw Error("file " + file.string() + " does not exist");
    cfg.reference = read_design_csv(file);
    if (cfg.reference->cols() != cfg.space->dimension()) throw DimensionMismatch("reference design dimension");
  });
  section("gramian", [&] {
    if (!j.contains("gramian")) return;
    cfg.gramian_samples = j.at("gramian").value("samples", cfg.gramian_samples);
    cfg.gramian_seed = j.at("gramian").value("seed", cfg.gramian_seed);
  });
  section("measure", [&] {
    const json m = j.value("measure", json::object());
    cfg.measure.kind = m.value("kind", std::string("uniform"));
    if (m.contains("mass")) cfg.measure.mass = m.at("mass").get<double>();
    cfg.measure.max_degree = m.value("max_degree", 3);
    cfg.measure.quadrature_nodes = m.value("quadrature_nodes", 16);
    const bool finite = dynamic_cast<const FiniteSpace*>(cfg.space.get()) != nullptr;
    if (cfg.measure.kind == "atoms") {
      if (!finite) throw Error("atoms measure requires a finite space");
      cfg.measure.weights = m.at("weights").get<std::vector<double>>();
      if (static_cast<int>(cfg.measure.weights.size()) != dynamic_cast<const FiniteSpace&>(*cfg.space).size())
        throw Error("one weight per atom required");
    } else if (cfg.measure.kind != "uniform" && cfg.measure.kind != "relaxed") {
      throw Error("kind must be uniform, atoms or relaxed");
    }
    if (cfg.algorithm.name == "relax") cfg.measure.kind = "relaxed";
    if (cfg.measure.mass && !(*cfg.measure.mass > 0.0)) throw Error("mass must be positive");
  });
  section("algorithm", [&] {
    const json& a = cfg.algorithm.params;
    const std::string& name = cfg.algorithm.name;
    if (name == "lsa" && !(a.value("sigma", 0.01) > 0.0)) throw Error("sigma must be positive");
    if ((name == "dogs" || name == "lsa") && a.value("iterations", 1) < 0) throw Error("iterations must be >= 0");
    if (name == "exm" && a.value("inner_budget", 5) < 1) throw Error("inner_budget must be positive");
    if (name == "dogs") {
      if (a.value("proposal_size", 50) < 1) throw Error("proposal_size must be positive");
      const std::string mode = a.value("mode", std::string("uniform"));
      if (mode != "uniform" && mode != "uniform_plus_candidates")
        throw Error("mode must be uniform or uniform_plus_candidates");
      if (mode == "uniform_plus_candidates") {
        const json c = a.value("candidates", json("space"));
        long count = 0;
        if (c.is_array())
          count = static_cast<long>(c.size());
        else if (const auto* d = dynamic_cast<const DesignSpace*>(cfg.space.get()))
          count = static_cast<long>(d->candidates().rows());
        if (count > a.value("proposal_size", 50)) throw Error("proposal_size must be at least the number of candidates");
      }
    }
    if (name == "pvs-conditional" && cfg.prior->kernel_dimension() > cfg.k)
      throw Error("k is smaller than the number of unit eigenvalues; conditioning event is empty");
  });
  return cfg;
}

json run_experiment(const ExperimentConfig& cfg, int workers, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output);
  const Prepared prep = prepare(cfg);
  if (prep.relaxation) {
    std::ofstream out(cfg.output / "relaxation.json");
    out << to_json(*prep.relaxation).dump(2) << "\n";
  }

  const std::size_t n = cfg.seeds.size();
  std::vector<std::optional<RunResult>> results(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        RunResult r = run_seed(prep, cfg.seeds[i]);
        write_design_csv(cfg.output / ("design_" + std::to_string(r.seed) + ".csv"), r.design);
        if (r.trace) write_trace_csv(cfg.output / ("trace_" + std::to_string(r.seed) + ".csv"), *r.trace);
        if (!r.warnings.empty()) {
          std::lock_guard lock(log_mutex);
          for (const auto& w : r.warnings) log << "warning: seed " << r.seed << ": " << w << "\n";
        }
        results[i] = std::move(r);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int count = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int w = 1; w < count; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw Error("seed " + std::to_string(cfg.seeds[i]) + ": " + errors[i]);

  json runs = json::array();
  for (const auto& r : results) runs.push_back(run_entry(cfg, *r));
  json summary = {{"schema", kSchema},
                  {"algorithm", cfg.algorithm.name},
                  {"criterion", criterion_name(cfg.which)},
                  {"k", cfg.k},
                  {"p", cfg.basis->size()},
                  {"config_hash", config_hash(cfg.raw)},
                  {"runs", runs},
                  {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  if (cfg.raw.contains("reference_design")) summary["reference_design"] = cfg.raw.at("reference_design");
  std::ofstream out(cfg.output / "summary.json");
  out << summary.dump(2) << "\n";
  return summary;
}

int run_command(const fs::path& config_path, int workers, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ValidationError& e) {
    err << e.what() << "\n";
    return 2;
  }
  try {
    if (cfg.algorithm.name == "verify") {
      const auto& a = cfg.algorithm.params;
      std::optional<std::uint64_t> seed;
      if (a.contains("seed")) seed = a.at("seed").get<std::uint64_t>();
      return verify_command(a.value("fixture", std::string("all")), seed, out);
    }
    const json summary = run_experiment(cfg, workers, err);
    out << "wrote " << summary.at("runs").size() << " runs to " << cfg.output.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n)));
  return values[std::min(rank, values.size()) - 1];
}

int compare_command(const std::vector<fs::path>& summaries, const fs::path& output, std::ostream& err) {
  try {
    if (summaries.empty()) throw Error("compare needs at least one summary file");
    // algorithm -> one best-so-far sequence per run
    std::map<std::string, std::vector<std::vector<std::pair<int, double>>>> series;
    for (const auto& path : summaries) {
      std::ifstream in(path);
      if (!in) throw Error("cannot open " + path.string());
      const json s = json::parse(in);
      if (!s.contains("schema") || s.at("schema") != kSchema)
        throw Error(path.string() + ": schema mismatch (expected " + std::string(kSchema) + ")");
      const std::string algorithm = s.at("algorithm").get<std::string>();
      const fs::path dir = path.parent_path();
      for (const auto& run : s.at("runs")) {
        std::vector<std::pair<int, double>> points;
        if (run.contains("trace")) {
          std::ifstream t(dir / run.at("trace").get<std::string>());
          if (!t) throw Error("cannot open trace " + (dir / run.at("trace").get<std::string>()).string());
          std::string line;
          std::getline(t, line);
          while (std::getline(t, line)) {
            if (line.empty()) continue;
            const auto cells = split_csv_line(line);
            points.emplace_back(std::stoi(cells.at(0)), parse_double(cells.at(1)));
          }
        } else {
          const json& c = run.at("criterion_log");
          points.emplace_back(0, c.is_null() ? std::numeric_limits<double>::infinity() : c.get<double>());
        }
        series[algorithm].push_back(std::move(points));
      }
    }
    std::ofstream out(output);
    if (!out) throw Error("cannot write " + output.string());
    out << "algorithm,iteration,count,median,p05,p95\n";
    for (const auto& [algorithm, runs] : series) {
      std::set<int> iterations;
      for (const auto& r : runs)
        for (const auto& [it, v] : r) iterations.insert(it);
      for (int it : iterations) {
        std::vector<double> values;
        for (const auto& r : runs) {
          // Best-so-far value at `it`: last record at or before it.
          const auto pos = std::upper_bound(r.begin(), r.end(), it,
                                            [](int x, const std::pair<int, double>& e) { return x < e.first; });
          if (pos != r.begin()) values.push_back(std::prev(pos)->second);
        }
        if (values.empty()) continue;
        out << algorithm << "," << it << "," << values.size() << "," << format_double(nearest_rank(values, 0.5)) << ","
            << format_double(nearest_rank(values, 0.05)) << "," << format_double(nearest_rank(values, 0.95)) << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

namespace {

struct VerifyPrinter {
  std::ostream& out;
  int failures = 0;
  void check(bool ok, const std::string& name, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) out << " (" << detail << ")";
    out << "\n";
    if (!ok) ++failures;
  }
};

std::string sci(double x) {
  std::ostringstream s;
  s.precision(6);
  s << std::scientific << x;
  return s.str();
}

void verify_fixture(const Fixture& base, bool with_truncation, VerifyPrinter& pr) {
  const int p = base.basis.size();
  const Eigen::MatrixXd phi = base.basis.design_matrix(base.atoms);
  const Eigen::MatrixXd g = symmetrize(phi.transpose() * base.weights.asDiagonal() * phi);
  for (const bool identity : {false, true}) {
    const PriorMatrix prior = identity ? PriorMatrix::scaled_identity(p, 1.0) : PriorMatrix::zero(p);
    const std::string tag = base.name + (identity ? " Lambda=I" : " Lambda=0");
    const ExactDistribution pvs = enumerate_conditional_pvs(base.atoms, base.weights, base.basis, prior, base.k);

    bool symmetric = true;
    std::map<std::vector<int>, double> seen;
    for (std::size_t t = 0; t < pvs.size(); ++t) {
      auto key = pvs.tuple(t);
      std::sort(key.begin(), key.end());
      const auto [it, inserted] = seen.emplace(key, pvs.probabilities[t]);
      if (!inserted && it->second != pvs.probabilities[t]) symmetric = false;
    }
    pr.check(symmetric, tag + ": permutation symmetry", "");

    const double inv_det = exact_conditional_expectation(pvs, Statistic::inv_det);
    const double d_rhs = pvs_d_bound(g, prior, base.k);
    pr.check(inv_det <= d_rhs * (1 + 1e-10), tag + ": D bound", sci(inv_det) + " <= " + sci(d_rhs));
    const ExactDistribution iid = enumerate_iid(base.atoms, base.weights, base.basis, prior, base.k);
    if (!identity) {
      // Tuples with singular M carry i.i.d. mass 1 - q and drop out of the expectation.
      const double q = exact_conditional_expectation(iid, Statistic::nonsingular);
      const double target = d_rhs * q;
      pr.check(std::abs(inv_det - target) <= 1e-10 * target, tag + ": D bound equality on nonsingular tuples",
               "relative error " + sci(std::abs(inv_det - target) / target) + ", nonsingular mass " + sci(q));
    }

    const double trace_inv = exact_conditional_expectation(pvs, Statistic::trace_inv);
    const double a_rhs = pvs_a_bound(g, prior, base.k);
    pr.check(trace_inv <= a_rhs + 1e-10, tag + ": A bound", sci(trace_inv) + " <= " + sci(a_rhs));

    const double iid_inv_det = exact_conditional_expectation(iid, Statistic::inv_det, Criterion::D, true);
    pr.check(inv_det <= iid_inv_det, tag + ": PVS beats i.i.d.", sci(inv_det) + " <= " + sci(iid_inv_det));

    if (with_truncation && identity) {
      const TruncationReport rep = truncated_unconditional_check(base.atoms, base.weights, base.basis, prior, 20);
      for (const auto& c : rep.checks)
        pr.check(c.passed, tag + ": truncated " + c.name, "error " + sci(c.error) + ", tolerance " + sci(c.tolerance));
    }
  }
}

}  // namespace

int verify_command(const std::string& fixture, std::optional<std::uint64_t> seed, std::ostream& out) {
  VerifyPrinter pr{out};
  try {
    if (fixture == "F1" || fixture == "all") verify_fixture(fixture_f1(), true, pr);
    if (fixture == "random") {
      verify_fixture(random_fixture(seed.value_or(1)), false, pr);
    } else if (fixture == "all") {
      for (std::uint64_t s = 1; s <= 10; ++s) verify_fixture(random_fixture(s), false, pr);
    } else if (fixture != "F1") {
      out << "error: unknown fixture '" << fixture << "' (expected F1 or random)\n";
      return 2;
    }
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return 1;
  }
  out << (pr.failures == 0 ? "all checks passed" : std::to_string(pr.failures) + " checks failed") << "\n";
  return pr.failures == 0 ? 0 : 1;
}

}  // namespace optdesign::cli
