#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "optdesign/features.hpp"
#include "optdesign/relaxation.hpp"

namespace optdesign {

/// Log-scale criterion of a design: -log det(M) for D, log Tr(M^-1) for A.
/// Returns +inf when M is singular.
double design_objective(const Basis& basis, const PriorMatrix& prior, const PointSet& design, Criterion which);

struct TraceRecord {
  int iteration = 0;
  double criterion_log = 0.0;
  double seconds = 0.0;
};

struct SearchTrace {
  std::vector<TraceRecord> records;
  PointSet best;
  double best_objective = 0.0;
  int accepted = 0;
  int skipped = 0;
  std::vector<std::string> warnings;
};

/// Problem shared by all heuristics. The space is only read.
struct SearchProblem {
  std::shared_ptr<const Space> space;
  Basis basis;
  PriorMatrix prior;
  int k = 1;
  Criterion which = Criterion::D;
};

enum class ProposalMode { uniform, uniform_plus_candidates };

struct ProposalConfig {
  int size = 50;
  ProposalMode mode = ProposalMode::uniform;
  /// Always included in uniform_plus_candidates mode; the rest of the proposal is uniform.
  PointSet candidates;
};

struct DogsOptions {
  ProposalConfig proposal;
  int iterations = 100;
  /// Sample PVS with exactly k points in step 4; unconditioned PVS when false.
  bool condition_on_k = true;
  FrankWolfeOptions relaxation;
};

SearchTrace dogs(const SearchProblem& problem, const DogsOptions& options, Rng& rng,
                 std::optional<PointSet> initial = std::nullopt);

struct LsaOptions {
  double sigma = 0.01;
  int iterations = 1000;
};

SearchTrace lsa(const SearchProblem& problem, const LsaOptions& options, Rng& rng,
                std::optional<PointSet> initial = std::nullopt);

struct ExchangeOptions {
  int sweeps = 20;
  /// Uniform starts per one-point subproblem (continuous variant).
  int inner_budget = 5;
  int evaluations_per_start = 200;
  double relative_stop = 1e-10;
};

SearchTrace exchange_continuous(const SearchProblem& problem, const ExchangeOptions& options, Rng& rng,
                                std::optional<PointSet> initial = std::nullopt);

/// Cyclic exchange over a finite candidate list (problem.space is not used).
SearchTrace exchange_discrete(const PointSet& candidates, const SearchProblem& problem,
                              const ExchangeOptions& options, Rng& rng,
                              std::optional<PointSet> initial = std::nullopt);

/// Points of the lattice step * Z^d inside the bounding box that belong to the space.
PointSet grid_candidates(const Space& space, double step);

/// Best of `count` i.i.d. uniform k-point designs, by objective.
SearchTrace best_iid_design(const SearchProblem& problem, int count, Rng& rng);

/// True when no single-point swap to a candidate lowers the objective.
bool is_exchange_local_optimum(const PointSet& design, const PointSet& candidates, const Basis& basis,
                               const PriorMatrix& prior, Criterion which);

}  // namespace optdesign
