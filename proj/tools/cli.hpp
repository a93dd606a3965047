#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optdesign/features.hpp"
#include "optdesign/pvs_sampler.hpp"
#include "optdesign/relaxation.hpp"
#include "optdesign/search.hpp"

namespace optdesign::cli {

/// Config problem detected before any run starts; maps to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

struct MeasureConfig {
  /// uniform, atoms or relaxed.
  std::string kind = "uniform";
  std::optional<double> mass;
  std::vector<double> weights;
  int max_degree = 3;
  int quadrature_nodes = 16;
};

struct AlgorithmConfig {
  std::string name;
  nlohmann::json params;
};

struct ExperimentConfig {
  std::filesystem::path source;
  nlohmann::json raw;
  std::shared_ptr<const Space> space;
  std::optional<Basis> basis;
  std::optional<PriorMatrix> prior;
  int k = 1;
  Criterion which = Criterion::D;
  AlgorithmConfig algorithm;
  MeasureConfig measure;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output;
  std::optional<PointSet> reference;
  long gramian_samples = 100000;
  std::uint64_t gramian_seed = 0;
};

/// Parses and validates a config file. Throws ValidationError with "file:line: message".
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& source);

/// Seeds from OPTDESIGN_SEED ("7" or "1,2,3"), if set.
std::optional<std::vector<std::uint64_t>> seeds_from_env();

/// FNV-1a hash of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Shortest round-trip decimal form.
std::string format_double(double x);

void write_design_csv(const std::filesystem::path& path, const PointSet& design);
PointSet read_design_csv(const std::filesystem::path& path);
void write_trace_csv(const std::filesystem::path& path, const SearchTrace& trace);

struct RunResult {
  std::uint64_t seed = 0;
  PointSet design;
  std::optional<SearchTrace> trace;
  double seconds = 0.0;
  std::vector<std::string> warnings;
};

/// Runs every seed of the config; returns the summary document written to summary.json.
nlohmann::json run_experiment(const ExperimentConfig& config, int workers, std::ostream& log);

/// Entry points returning process exit codes.
int run_command(const std::filesystem::path& config_path, int workers, std::ostream& out, std::ostream& err);
int compare_command(const std::vector<std::filesystem::path>& summaries, const std::filesystem::path& output,
                    std::ostream& err);
int verify_command(const std::string& fixture, std::optional<std::uint64_t> seed, std::ostream& out);

/// Nearest-rank percentile of unsorted values, q in (0, 1].
double nearest_rank(std::vector<double> values, double q);

}  // namespace optdesign::cli
