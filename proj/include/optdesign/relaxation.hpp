#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optdesign/features.hpp"
#include "optdesign/pvs_sampler.hpp"

namespace optdesign {

struct FrankWolfeOptions {
  /// Stop when the Frank-Wolfe gap is at most tol * max(|h|, 1).
  double tol = 1e-7;
  int max_iter = 100000;
  /// Away steps give linear convergence on the simplex; plain FW steps only when false.
  bool away_steps = true;
  int line_search_iters = 60;
  bool record_objective = false;
};

struct WeightSolution {
  Eigen::VectorXd weights;
  double total = 0.0;
  /// Objective at the solution: Tr(M^-1) for A, -log det(M) for D.
  double criterion = 0.0;
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

nlohmann::json to_json(const WeightSolution& s);

/// Minimizes h(sum_i w_i phi(x_i) phi(x_i)^T + Lambda) over w >= 0, sum w = k.
WeightSolution solve_discrete_weights(const PointSet& points, const Basis& basis, const PriorMatrix& prior,
                                      double k, Criterion which, const FrankWolfeOptions& options = {});

using DensityFunction = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;

struct DensityComponent {
  std::string name;
  DensityFunction g;
  /// Integral of g over the domain.
  double mass = 0.0;
  /// Integral of g phi phi^T over the domain.
  Eigen::MatrixXd gramian;
  /// Upper estimate of g on the domain, used as rejection envelope.
  double sup = 0.0;
};

/// Nonnegative functions g_i whose weighted sums parametrize reference densities.
struct DensityFamily {
  std::shared_ptr<const Space> domain;
  std::vector<DensityComponent> components;
};

/// Integrates masses and Gramians by tensor Gauss-Legendre quadrature over the
/// bounding box of `domain` (exact for polynomial integrands on boxes).
DensityFamily make_density_family(std::shared_ptr<const Space> domain, const Basis& basis,
                                  std::vector<std::pair<std::string, DensityFunction>> functions,
                                  int quadrature_nodes = 16);

/// Monomials x^a of total degree <= max_degree and their reflections (1 - x)^a.
DensityFamily polynomial_corner_family(std::shared_ptr<const Space> domain, const Basis& basis,
                                       int max_degree);

/// Minimizes h(sum_i w_i G_i + Lambda) over w >= 0, sum_i w_i mass_i = k.
WeightSolution solve_density_weights(const DensityFamily& family, const PriorMatrix& prior, double k,
                                     Criterion which, const FrankWolfeOptions& options = {});

/// Reference measure with density f = sum_i w_i g_i on the family's domain.
class MixtureDensity final : public ReferenceMeasure {
 public:
  MixtureDensity(DensityFamily family, Eigen::VectorXd weights, SamplerOptions options = {});

  int dimension() const override { return family_.domain->dimension(); }
  double mass() const override { return mass_; }
  /// Component by mass share, then rejection from uniform proposals within it.
  Point draw(Rng& rng) const override;
  /// Exact combination of the component Gramians (the basis must be the family's).
  Gramian gramian(const Basis& basis, const GramianOptions& options, Rng& rng) const override;

  double density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  const Eigen::VectorXd& weights() const { return weights_; }
  const DensityFamily& family() const { return family_; }

 private:
  DensityFamily family_;
  Eigen::VectorXd weights_;
  double mass_ = 0.0;
  std::vector<double> cumulative_;
  SamplerOptions options_;
};

std::shared_ptr<MixtureDensity> density_from_weights(const DensityFamily& family,
                                                     const Eigen::VectorXd& weights);

/// Gauss-Legendre nodes and weights on [-1, 1].
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre(int n);

}  // namespace optdesign
