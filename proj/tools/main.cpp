#include <iostream>

#include <CLI11.hpp>

#include "cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Optimal experimental designs with proportional volume sampling"};
  app.require_subcommand(1);
  int workers = 1;
  app.add_option("--workers", workers, "Parallel workers for seeded runs")->check(CLI::PositiveNumber);

  std::string config;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config, "Config JSON file")->required();

  std::vector<std::string> files;
  std::string output = "compare.csv";
  auto* compare = app.add_subcommand("compare", "Merge summary files into percentile rows");
  compare->add_option("files", files, "summary.json files")->required();
  compare->add_option("-o,--output", output, "Output CSV");

  std::string fixture = "all";
  std::uint64_t seed = 1;
  auto* verify = app.add_subcommand("verify", "Run the exact oracle checks");
  verify->add_option("--fixture", fixture, "F1, random or all")->check(CLI::IsMember({"F1", "random", "all"}));
  auto* seed_opt = verify->add_option("--seed", seed, "Seed of the random fixture");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  namespace cli = optdesign::cli;
  if (*run) return cli::run_command(config, workers, std::cout, std::cerr);
  if (*compare) {
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    return cli::compare_command(paths, output, std::cerr);
  }
  std::optional<std::uint64_t> s;
  if (*seed_opt) s = seed;
  return cli::verify_command(fixture, s, std::cout);
}
