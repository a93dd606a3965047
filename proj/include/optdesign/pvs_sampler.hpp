#pragma once

#include <memory>
#include <span>
#include <vector>

#include "optdesign/features.hpp"

namespace optdesign {

/// Precomputed spectral data of the PVS point process with reference measure nu.
///
/// With G the Gramian of the basis under nu, the matrix
/// G^{1/2} (G + Lambda)^{-1} G^{1/2} = V diag(lambda) V^T has eigenvalues in [0, 1],
/// and psi(x) = phi(x) G^{-1/2} V is orthonormal in L2(nu). PVS is the union of
/// the DPP with kernel sum_i lambda_i psi_i(x) psi_i(y) and a Poisson process of
/// intensity nu.
struct PvsModel {
  Basis basis;
  PriorMatrix prior;
  std::shared_ptr<const ReferenceMeasure> measure;
  Gramian gramian;
  Eigen::MatrixXd gramian_sqrt;
  Eigen::MatrixXd gramian_inv_sqrt;
  Eigen::VectorXd eigenvalues;
  /// psi(x) = coefficients^T phi(x).
  Eigen::MatrixXd coefficients;

  int p() const { return basis.size(); }
  double mass() const { return measure->mass(); }
  Eigen::VectorXd psi(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return coefficients.transpose() * basis.evaluate(x);
  }
};

PvsModel build_model(Basis basis, PriorMatrix prior, std::shared_ptr<const ReferenceMeasure> measure,
                     const GramianOptions& options, Rng& rng);
/// Same, from an already computed Gramian.
PvsModel build_model(Basis basis, PriorMatrix prior, std::shared_ptr<const ReferenceMeasure> measure,
                     Gramian gramian);

/// nu(Omega) + Tr((G + Lambda)^{-1} G).
double expected_cardinality(const PvsModel& model);

enum class Provenance { dpp, poisson };

struct PointSample {
  PointSet points;
  std::vector<Provenance> provenance;
  /// Atom index per point when nu is atomic, otherwise empty.
  std::vector<int> atom_indices;

  int size() const { return static_cast<int>(points.rows()); }
};

struct SamplerOptions {
  double envelope_safety = 1.2;
  int envelope_probes = 1000;
  long max_rejections = 10000000;
};

struct SamplerStats {
  long proposals = 0;
  long rejections = 0;
  int envelope_raises = 0;
};

/// Projection DPP on the eigenfunctions listed in `active`, sampled by the chain rule.
/// Atomic measures use the exact categorical chain rule; other measures use rejection
/// from nu / nu(Omega) under an adaptive envelope.
PointSample sample_projection_dpp(const PvsModel& model, std::span<const int> active, Rng& rng,
                                  const SamplerOptions& options = {}, SamplerStats* stats = nullptr);

/// Unconditional PVS: Bernoulli thinning of the eigenvalues, projection DPP, plus Poisson points.
PointSample sample_pvs(const PvsModel& model, Rng& rng, const SamplerOptions& options = {},
                       SamplerStats* stats = nullptr);

/// Law of the number of DPP points j given that DPP and Poisson counts sum to k:
/// P(j) proportional to PoissonBinomial(lambda)(j) * Poisson(mass)(k - j), j = 0..min(p, k).
/// Throws SamplingError when the conditioning event has probability zero.
Eigen::VectorXd conditional_split_law(const Eigen::VectorXd& eigenvalues, double mass, int k);

/// PVS conditioned on having exactly k points.
PointSample sample_pvs_conditional(const PvsModel& model, int k, Rng& rng,
                                   const SamplerOptions& options = {}, SamplerStats* stats = nullptr);

/// Conditional-on-k PVS with atomic reference measure sum_i w_i delta_{x_i}.
PointSample sample_pvs_discrete(const PointSet& atoms, const Eigen::VectorXd& weights,
                                const Basis& basis, const PriorMatrix& prior, int k, Rng& rng);

/// Conditional sampling given a prebuilt atomic model (avoids rebuilding per draw).
class DiscretePvsSampler {
 public:
  DiscretePvsSampler(const PointSet& atoms, const Eigen::VectorXd& weights, const Basis& basis,
                     const PriorMatrix& prior);
  PointSample sample_conditional(int k, Rng& rng) const;
  PointSample sample(Rng& rng) const;
  const PvsModel& model() const { return model_; }

 private:
  PvsModel model_;
};

}  // namespace optdesign
