#pragma once

#include <memory>

#include "optdesign/search.hpp"

namespace testfix {

/// Six atoms in the unit square, basis (x1, x2), k = 3, Lambda = 0.
inline optdesign::SearchProblem six_atom_problem() {
  optdesign::PointSet atoms(6, 2);
  atoms << 0.9, 0.1, 0.2, 0.8, 0.6, 0.6, 0.35, 0.15, 0.1, 0.45, 0.75, 0.9;
  auto space = std::make_shared<optdesign::FiniteSpace>(atoms, "six_atoms");
  return {space, optdesign::Basis::monomials(2, 1).select({1, 2}), optdesign::PriorMatrix::zero(2), 3,
          optdesign::Criterion::D};
}

inline const optdesign::PointSet& atoms_of(const optdesign::SearchProblem& problem) {
  return static_cast<const optdesign::FiniteSpace&>(*problem.space).atoms();
}

/// DOGS options proposing every atom at each iteration.
inline optdesign::DogsOptions all_atom_proposal(const optdesign::SearchProblem& problem, int iterations) {
  optdesign::DogsOptions opts;
  opts.iterations = iterations;
  opts.proposal.mode = optdesign::ProposalMode::uniform_plus_candidates;
  opts.proposal.candidates = atoms_of(problem);
  opts.proposal.size = static_cast<int>(opts.proposal.candidates.rows());
  return opts;
}

/// Lattice points (i/100, j/100) of the mixture region, counted in integer arithmetic.
inline int atkinson_lattice_count() {
  int count = 0;
  for (long i = 0; i <= 100; ++i)
    for (long j = 0; i + j <= 100; ++j) {
      // both sides scaled by 1e7, with x = i/100 and y = j/100
      const bool lower = 296200 * i + 100000 * j - 4062 * i * i >= 6075000;
      const bool upper = 105700 * i + 100000 * j - 1174 * i * i <= 5019000;
      count += lower && upper;
    }
  return count;
}

}  // namespace testfix
