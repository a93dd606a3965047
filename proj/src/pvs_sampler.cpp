#include "optdesign/pvs_sampler.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace optdesign {

namespace {

constexpr double kClipBand = 1e-10;

}  // namespace

PvsModel build_model(Basis basis, PriorMatrix prior, std::shared_ptr<const ReferenceMeasure> measure,
                     Gramian gramian) {
  const int p = basis.size();
  if (prior.size() != p) throw DimensionMismatch("prior size does not match basis size");
  if (measure->dimension() != basis.dimension()) throw DimensionMismatch("measure and basis dimensions differ");
  if (gramian.matrix.rows() != p) throw DimensionMismatch("Gramian size does not match basis size");

  const auto roots = symmetric_roots(gramian.matrix);
  Eigen::MatrixXd kernel_matrix;
  if (prior.is_zero()) {
    kernel_matrix = Eigen::MatrixXd::Identity(p, p);
  } else {
    const SpdFactor regularized(gramian.matrix + prior.matrix());
    kernel_matrix = symmetrize(roots.sqrt * regularized.solve(roots.sqrt));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel_matrix);
  Eigen::VectorXd lambda = es.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < -kClipBand || lambda[i] > 1.0 + kClipBand) {
      std::ostringstream msg;
      msg << "spectral inconsistency: kernel eigenvalue " << lambda[i] << " outside [0, 1]";
      throw Error(msg.str());
    }
    lambda[i] = std::clamp(lambda[i], 0.0, 1.0);
  }

  PvsModel model{std::move(basis), std::move(prior), std::move(measure), std::move(gramian),
                 roots.sqrt, roots.inv_sqrt, lambda, roots.inv_sqrt * es.eigenvectors()};
  return model;
}

PvsModel build_model(Basis basis, PriorMatrix prior, std::shared_ptr<const ReferenceMeasure> measure,
                     const GramianOptions& options, Rng& rng) {
  Gramian g = measure->gramian(basis, options, rng);
  return build_model(std::move(basis), std::move(prior), std::move(measure), std::move(g));
}

double expected_cardinality(const PvsModel& model) { return model.mass() + model.eigenvalues.sum(); }

namespace {

/// Gram-Schmidt state of the chain rule: orthonormal directions spanned by the
/// psi vectors of the points drawn so far.
class ChainRuleState {
 public:
  explicit ChainRuleState(int r) : basis_(r, 0) {}

  double residual_sq(const Eigen::VectorXd& v) const {
    if (basis_.cols() == 0) return v.squaredNorm();
    return (v - basis_ * (basis_.transpose() * v)).squaredNorm();
  }

  void push(const Eigen::VectorXd& v) {
    Eigen::VectorXd r = v;
    // Two passes of classical Gram-Schmidt keep the directions orthonormal.
    for (int pass = 0; pass < 2 && basis_.cols() > 0; ++pass) r -= basis_ * (basis_.transpose() * r);
    const double n = r.norm();
    ensure(n > 0.0, "chain rule selected a point with zero residual");
    basis_.conservativeResize(Eigen::NoChange, basis_.cols() + 1);
    basis_.col(basis_.cols() - 1) = r / n;
  }

 private:
  Eigen::MatrixXd basis_;
};

Eigen::VectorXd restrict(const Eigen::VectorXd& psi, std::span<const int> active) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i) out[static_cast<Eigen::Index>(i)] = psi[active[i]];
  return out;
}

PointSample atomic_projection_dpp(const PvsModel& model, const AtomicMeasure& nu,
                                  std::span<const int> active, Rng& rng) {
  const int r = static_cast<int>(active.size());
  const auto& atoms = nu.atoms();
  const auto n = atoms.rows();
  Eigen::MatrixXd psi_all = model.basis.design_matrix(atoms) * model.coefficients;
  Eigen::MatrixXd psi(n, r);
  for (int c = 0; c < r; ++c) psi.col(c) = psi_all.col(active[c]);

  Eigen::VectorXd resid = psi.rowwise().squaredNorm();
  PointSample out;
  out.points.resize(r, atoms.cols());
  Eigen::MatrixXd directions(r, 0);
  for (int step = 0; step < r; ++step) {
    Eigen::VectorXd w = nu.weights().cwiseProduct(resid.cwiseMax(0.0));
    // Zero-weight atoms and those already spanned carry no mass.
    const int a = draw_categorical(cumulative_weights(w), rng);
    Eigen::VectorXd v = psi.row(a).transpose();
    for (int pass = 0; pass < 2 && directions.cols() > 0; ++pass) v -= directions * (directions.transpose() * v);
    const double norm = v.norm();
    ensure(norm > 0.0, "atomic chain rule picked a spanned atom");
    v /= norm;
    directions.conservativeResize(Eigen::NoChange, directions.cols() + 1);
    directions.col(directions.cols() - 1) = v;
    resid -= (psi * v).cwiseAbs2();
    resid[a] = 0.0;
    out.points.row(step) = atoms.row(a);
    out.atom_indices.push_back(a);
    out.provenance.push_back(Provenance::dpp);
  }
  return out;
}

PointSample continuous_projection_dpp(const PvsModel& model, std::span<const int> active, Rng& rng,
                                      const SamplerOptions& options, SamplerStats* stats) {
  const int r = static_cast<int>(active.size());
  PointSample out;
  out.points.resize(r, model.basis.dimension());
  if (r == 0) return out;

  // Envelope for the residual norm: empirical sup of K_S(x, x) with a safety factor.
  double envelope = 0.0;
  for (int i = 0; i < options.envelope_probes; ++i)
    envelope = std::max(envelope, restrict(model.psi(model.measure->draw(rng)), active).squaredNorm());
  envelope *= options.envelope_safety;
  if (!(envelope > 0.0)) envelope = 1.0;

  std::uniform_real_distribution<double> u(0.0, 1.0);
  ChainRuleState state(r);
  long rejections = 0;
  for (int step = 0; step < r; ++step) {
    while (true) {
      Point x = model.measure->draw(rng);
      const Eigen::VectorXd v = restrict(model.psi(x), active);
      const double q = state.residual_sq(v);
      if (stats) ++stats->proposals;
      if (q > envelope) {
        envelope = q * options.envelope_safety;
        if (stats) ++stats->envelope_raises;
        continue;
      }
      if (u(rng) * envelope < q) {
        state.push(v);
        out.points.row(step) = x.transpose();
        out.provenance.push_back(Provenance::dpp);
        break;
      }
      ++rejections;
      if (stats) ++stats->rejections;
      if (rejections > options.max_rejections) {
        std::ostringstream msg;
        msg << "projection DPP exceeded " << options.max_rejections << " rejections at point "
            << step + 1 << " of " << r << " (envelope " << envelope << ")";
        throw SamplingError(msg.str());
      }
    }
  }
  return out;
}

void append(PointSample& into, const PointSample& more) {
  const auto old = into.points.rows();
  PointSet merged(old + more.points.rows(), more.points.cols());
  if (old > 0) merged.topRows(old) = into.points;
  if (more.points.rows() > 0) merged.bottomRows(more.points.rows()) = more.points;
  into.points = std::move(merged);
  into.provenance.insert(into.provenance.end(), more.provenance.begin(), more.provenance.end());
  into.atom_indices.insert(into.atom_indices.end(), more.atom_indices.begin(), more.atom_indices.end());
}

PointSample iid_points(const PvsModel& model, int count, Rng& rng) {
  PointSample out;
  out.points.resize(count, model.basis.dimension());
  const auto* atomic = dynamic_cast<const AtomicMeasure*>(model.measure.get());
  for (int i = 0; i < count; ++i) {
    if (atomic) {
      const int a = atomic->draw_index(rng);
      out.points.row(i) = atomic->atoms().row(a);
      out.atom_indices.push_back(a);
    } else {
      out.points.row(i) = model.measure->draw(rng).transpose();
    }
    out.provenance.push_back(Provenance::poisson);
  }
  return out;
}

}  // namespace

PointSample sample_projection_dpp(const PvsModel& model, std::span<const int> active, Rng& rng,
                                  const SamplerOptions& options, SamplerStats* stats) {
  for (int i : active)
    if (i < 0 || i >= model.p()) throw Error("active eigenfunction index out of range");
  if (const auto* atomic = dynamic_cast<const AtomicMeasure*>(model.measure.get()))
    return atomic_projection_dpp(model, *atomic, active, rng);
  return continuous_projection_dpp(model, active, rng, options, stats);
}

PointSample sample_pvs(const PvsModel& model, Rng& rng, const SamplerOptions& options, SamplerStats* stats) {
  std::vector<int> active;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < model.p(); ++i)
    if (u(rng) < model.eigenvalues[i]) active.push_back(i);
  PointSample out = sample_projection_dpp(model, active, rng, options, stats);
  std::poisson_distribution<int> poisson(model.mass());
  append(out, iid_points(model, poisson(rng), rng));
  return out;
}

Eigen::VectorXd conditional_split_law(const Eigen::VectorXd& eigenvalues, double mass, int k) {
  if (k < 0) throw Error("cardinality must be nonnegative");
  const int p = static_cast<int>(eigenvalues.size());
  // Poisson-binomial pmf of the number of selected eigenfunctions.
  std::vector<double> pb(p + 1, 0.0);
  pb[0] = 1.0;
  for (int i = 0; i < p; ++i) {
    const double l = eigenvalues[i];
    for (int j = i + 1; j >= 1; --j) pb[j] = pb[j] * (1.0 - l) + pb[j - 1] * l;
    pb[0] *= 1.0 - l;
  }
  const int jmax = std::min(p, k);
  Eigen::VectorXd logw = Eigen::VectorXd::Constant(jmax + 1, -std::numeric_limits<double>::infinity());
  for (int j = 0; j <= jmax; ++j) {
    if (!(pb[j] > 0.0)) continue;
    const int n = k - j;
    double log_pois;
    if (mass > 0.0)
      log_pois = n * std::log(mass) - mass - std::lgamma(n + 1.0);
    else
      log_pois = n == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    logw[j] = std::log(pb[j]) + log_pois;
  }
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) {
    std::ostringstream msg;
    msg << "cardinality " << k << " has zero probability under this PVS model";
    throw SamplingError(msg.str());
  }
  Eigen::VectorXd w = (logw.array() - top).exp();
  return w / w.sum();
}

namespace {

/// Bernoulli(lambda_i) indicators conditioned on their sum being `total`.
std::vector<int> conditioned_bernoullis(const Eigen::VectorXd& lambda, int total, Rng& rng) {
  const int p = static_cast<int>(lambda.size());
  // suffix[i][r] = P(sum_{l >= i} I_l = r)
  std::vector<std::vector<double>> suffix(p + 1, std::vector<double>(p + 2, 0.0));
  suffix[p][0] = 1.0;
  for (int i = p - 1; i >= 0; --i)
    for (int r = 0; r <= p - i; ++r)
      suffix[i][r] = suffix[i + 1][r] * (1.0 - lambda[i]) + (r > 0 ? suffix[i + 1][r - 1] * lambda[i] : 0.0);

  std::vector<int> active;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int remaining = total;
  for (int i = 0; i < p && remaining > 0; ++i) {
    const double denom = suffix[i][remaining];
    const double take = denom > 0.0 ? lambda[i] * suffix[i + 1][remaining - 1] / denom : 0.0;
    if (remaining == p - i || u(rng) < take) {
      active.push_back(i);
      --remaining;
    }
  }
  ensure(remaining == 0, "conditioned Bernoulli draw missed its total");
  return active;
}

}  // namespace

PointSample sample_pvs_conditional(const PvsModel& model, int k, Rng& rng, const SamplerOptions& options,
                                   SamplerStats* stats) {
  const Eigen::VectorXd law = conditional_split_law(model.eigenvalues, model.mass(), k);
  std::vector<double> cum = cumulative_weights(law);
  const int j = draw_categorical(cum, rng);
  const auto active = conditioned_bernoullis(model.eigenvalues, j, rng);
  PointSample out = sample_projection_dpp(model, active, rng, options, stats);
  append(out, iid_points(model, k - j, rng));
  ensure(out.size() == k, "conditional PVS returned the wrong number of points");
  return out;
}

DiscretePvsSampler::DiscretePvsSampler(const PointSet& atoms, const Eigen::VectorXd& weights,
                                       const Basis& basis, const PriorMatrix& prior)
    : model_([&] {
        auto nu = std::make_shared<AtomicMeasure>(atoms, weights);
        Rng unused(0);
        return build_model(basis, prior, nu, GramianOptions{}, unused);
      }()) {}

PointSample DiscretePvsSampler::sample_conditional(int k, Rng& rng) const {
  return sample_pvs_conditional(model_, k, rng);
}

PointSample DiscretePvsSampler::sample(Rng& rng) const { return sample_pvs(model_, rng); }

PointSample sample_pvs_discrete(const PointSet& atoms, const Eigen::VectorXd& weights, const Basis& basis,
                                const PriorMatrix& prior, int k, Rng& rng) {
  return DiscretePvsSampler(atoms, weights, basis, prior).sample_conditional(k, rng);
}

}  // namespace optdesign
