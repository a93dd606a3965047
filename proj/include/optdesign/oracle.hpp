#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optdesign/features.hpp"

namespace optdesign {

/// Exact law of k-point designs over a small atom set.
struct ExactDistribution {
  int k = 0;
  int atom_count = 0;
  /// Ordered tuples, row-major: tuple t is indices[t*k .. t*k+k).
  std::vector<int> indices;
  std::vector<double> probabilities;
  /// Feature matrix of the atoms and the prior, for evaluating statistics.
  Eigen::MatrixXd phi;
  Eigen::MatrixXd prior;

  std::size_t size() const { return probabilities.size(); }
  std::vector<int> tuple(std::size_t t) const;

  struct Multiset {
    /// Sorted atom indices.
    std::vector<int> atoms;
    /// Number of ordered tuples aggregated into this entry.
    long multiplicity = 0;
    double probability = 0.0;
  };
  /// Ordered tuples aggregated by their sorted content.
  std::vector<Multiset> multisets() const;
  nlohmann::json to_json() const;
};

/// Conditional PVS law: P(x) proportional to det(phi(x)^T phi(x) + Lambda) prod w(x_i)
/// over ordered tuples in atoms^k. Determinants below 1e-10 times the Hadamard bound
/// count as exactly zero.
ExactDistribution enumerate_conditional_pvs(const PointSet& atoms, const Eigen::VectorXd& weights,
                                            const Basis& basis, const PriorMatrix& prior, int k);

/// i.i.d. law from nu / nu(Omega): P(x) = prod w(x_i) / nu(Omega)^k.
ExactDistribution enumerate_iid(const PointSet& atoms, const Eigen::VectorXd& weights, const Basis& basis,
                                const PriorMatrix& prior, int k);

/// `nonsingular` is the indicator of an invertible M (never throws).
enum class Statistic { inv_det, trace_inv, criterion, nonsingular };

/// Sum of p(x) * statistic(x) in ascending-probability order. `which` selects the
/// criterion for Statistic::criterion. A singular M on a positive-probability tuple
/// throws unless `allow_infinite`, in which case the result is +inf.
double exact_conditional_expectation(const ExactDistribution& dist, Statistic statistic,
                                     Criterion which = Criterion::D, bool allow_infinite = false);

struct IdentityCheck {
  std::string name;
  double truncated = 0.0;
  double exact = 0.0;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct TruncationReport {
  int n_max = 0;
  double tail_bound = 0.0;
  double probability_mass = 0.0;
  Eigen::MatrixXd expected_inverse;
  Eigen::MatrixXd exact_inverse;
  std::vector<IdentityCheck> checks;

  bool passed() const;
  nlohmann::json to_json() const;
};

/// Truncated sums over |X| <= n_max of the unconditional PVS law with atomic nu,
/// compared with E[(M)^-1] = (G + Lambda)^-1, E[det(M)^-1] = det(G + Lambda)^-1 and
/// E[|X|] = nu(Omega) + Tr((G + Lambda)^-1 G). Cardinalities are summed over multisets
/// with multinomial counts. Throws when the Poisson tail beyond n_max - p is >= 1e-8.
TruncationReport truncated_unconditional_check(const PointSet& atoms, const Eigen::VectorXd& weights,
                                               const Basis& basis, const PriorMatrix& prior, int n_max,
                                               double tolerance = 1e-6);

struct ExhaustiveResult {
  PointSet design;
  std::vector<int> atoms;
  double objective = 0.0;
  /// All optimal multisets (objective within 1e-12 relative of the best).
  std::vector<std::vector<int>> ties;
  long evaluated = 0;
};

/// Global optimum of the log-scale objective over all size-k multisets of atoms.
ExhaustiveResult exhaustive_best_design(const PointSet& atoms, const Basis& basis, const PriorMatrix& prior,
                                        int k, Criterion which);

/// Right-hand side of the conditional D bound for nu(Omega) = k.
double pvs_d_bound(const Eigen::MatrixXd& gramian, const PriorMatrix& prior, int k);
/// Right-hand side of the conditional A bound for nu(Omega) = k.
double pvs_a_bound(const Eigen::MatrixXd& gramian, const PriorMatrix& prior, int k);
/// Lower bound on expected D-efficiency, (k! / ((k - p)! k^p))^(1/p).
double d_efficiency_floor(int k, int p);
/// Lower bound on expected A-efficiency without prior, (k - p + 1) / k.
double a_efficiency_floor(int k, int p);

/// P(N >= m) for N ~ Poisson(mean).
double poisson_upper_tail(double mean, int m);

/// Small atomic instance for oracle tests.
struct Fixture {
  std::string name;
  PointSet atoms;
  Eigen::VectorXd weights;
  Basis basis;
  PriorMatrix prior;
  int k = 1;
};

/// Atoms {0, 1/2, 1}, phi = (1, x), weights 2/3, k = 2; prior as given.
Fixture fixture_f1(const PriorMatrix& prior);
Fixture fixture_f1();
/// n <= 5 atoms in [0,1]^d, p <= 3, p <= k <= 4, weights summing to k, Lambda = 0.
Fixture random_fixture(std::uint64_t seed);

}  // namespace optdesign
