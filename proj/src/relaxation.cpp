#include "optdesign/relaxation.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace optdesign {

nlohmann::json to_json(const WeightSolution& s) {
  return {{"weights", std::vector<double>(s.weights.data(), s.weights.data() + s.weights.size())},
          {"total", s.total},
          {"criterion", s.criterion},
          {"gap", s.gap},
          {"iterations", s.iterations},
          {"converged", s.converged}};
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Items of the simplex problem: M(q) = sum_i q_i F_i F_i^T + Lambda.
class ComponentSet {
 public:
  /// Rank-one items, one row of `rows` each.
  explicit ComponentSet(Eigen::MatrixXd rows) : rows_(std::move(rows)), rank_one_(true) {}
  explicit ComponentSet(std::vector<Eigen::MatrixXd> factors)
      : factors_(std::move(factors)), rank_one_(false) {}

  int size() const { return rank_one_ ? static_cast<int>(rows_.rows()) : static_cast<int>(factors_.size()); }

  Eigen::MatrixXd combine(const Eigen::VectorXd& q, const Eigen::MatrixXd& base) const {
    Eigen::MatrixXd m = base;
    if (rank_one_) {
      m.noalias() += rows_.transpose() * q.asDiagonal() * rows_;
    } else {
      for (int i = 0; i < size(); ++i)
        if (q[i] != 0.0) m.noalias() += q[i] * factors_[i] * factors_[i].transpose();
    }
    return symmetrize(m);
  }

  /// Partial derivatives of h at M, given W = M^{-1}.
  Eigen::VectorXd gradient(const Eigen::MatrixXd& w, Criterion which) const {
    Eigen::VectorXd g(size());
    if (rank_one_) {
      const Eigen::MatrixXd rw = rows_ * w;
      if (which == Criterion::A)
        g = -rw.rowwise().squaredNorm();
      else
        g = -(rw.cwiseProduct(rows_)).rowwise().sum();
    } else {
      for (int i = 0; i < size(); ++i) {
        const Eigen::MatrixXd wf = w * factors_[i];
        g[i] = which == Criterion::A ? -wf.squaredNorm() : -(factors_[i].cwiseProduct(wf)).sum();
      }
    }
    return g;
  }

 private:
  Eigen::MatrixXd rows_;
  std::vector<Eigen::MatrixXd> factors_;
  bool rank_one_;
};

double objective(const Eigen::MatrixXd& m, Criterion which) {
  try {
    SpdFactor f(m);
    return which == Criterion::A ? f.inverse().trace() : -f.log_det();
  } catch (const SingularMatrixError&) {
    return kInf;
  }
}

/// d/dgamma h(M + gamma * delta); +inf where the matrix is singular.
double directional_derivative(const Eigen::MatrixXd& m, const Eigen::MatrixXd& delta, Criterion which) {
  try {
    SpdFactor f(m);
    const Eigen::MatrixXd wd = f.solve(delta);
    if (which == Criterion::A) return -(f.solve(wd.transpose())).trace();
    return -wd.trace();
  } catch (const SingularMatrixError&) {
    return kInf;
  }
}

double line_search(const Eigen::MatrixXd& m, const Eigen::MatrixXd& delta, double gamma_max,
                   Criterion which, int iters) {
  if (directional_derivative(m + gamma_max * delta, delta, which) <= 0.0) return gamma_max;
  double lo = 0.0, hi = gamma_max;
  for (int it = 0; it < iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (directional_derivative(m + mid * delta, delta, which) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

/// Away-step Frank-Wolfe on {q >= 0, sum q = k}.
WeightSolution frank_wolfe(const ComponentSet& items, const Eigen::MatrixXd& prior, double k,
                           Criterion which, const FrankWolfeOptions& options) {
  if (which == Criterion::LogD) which = Criterion::D;
  const int n = items.size();
  if (n < 1) throw Error("relaxation needs at least one item");
  if (!(k > 0.0)) throw Error("relaxation total mass must be positive");

  Eigen::VectorXd q = Eigen::VectorXd::Constant(n, k / n);
  double h = objective(items.combine(q, prior), which);
  if (!std::isfinite(h))
    throw SingularMatrixError("singular information matrix at uniform weights", 0.0);

  WeightSolution sol;
  bool restarted = false;
  int it = 0;
  double gap = kInf;
  for (; it < options.max_iter; ++it) {
    const Eigen::MatrixXd m = items.combine(q, prior);
    Eigen::MatrixXd w;
    try {
      w = SpdFactor(m).inverse();
    } catch (const SingularMatrixError& e) {
      if (restarted) throw;
      // Restart from jittered uniform weights.
      restarted = true;
      Rng rng(12345);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int i = 0; i < n; ++i) q[i] = k / n + 1e-6 * k / n * u(rng);
      q *= k / q.sum();
      h = objective(items.combine(q, prior), which);
      continue;
    }
    const Eigen::VectorXd g = items.gradient(w, which);
    Eigen::Index s;
    g.minCoeff(&s);
    const double gq = g.dot(q);
    gap = gq - k * g[s];
    if (options.record_objective) sol.objective_trace.push_back(h);
    if (gap <= options.tol * std::max(std::abs(h), 1.0)) {
      sol.converged = true;
      break;
    }

    Eigen::VectorXd d = -q;
    d[s] += k;
    double gamma_max = 1.0;
    if (options.away_steps) {
      int v = -1;
      for (int i = 0; i < n; ++i)
        if (q[i] > 0.0 && (v < 0 || g[i] > g[v])) v = i;
      const double away_gap = k * g[v] - gq;
      if (away_gap > gap && q[v] < k) {
        d = q;
        d[v] -= k;
        gamma_max = q[v] / (k - q[v]);
      }
    }
    const Eigen::MatrixXd delta = items.combine(d, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    const double gamma = line_search(m, delta, gamma_max, which, options.line_search_iters);
    Eigen::VectorXd next = q + gamma * d;
    next = next.cwiseMax(0.0);
    if (gamma == gamma_max && d[s] != k - q[s]) {
      // Drop step: the away vertex leaves the active set exactly.
      for (int i = 0; i < n; ++i)
        if (d[i] < 0.0 && next[i] < 1e-15 * k) next[i] = 0.0;
    }
    next *= k / next.sum();
    if (!(gamma > 0.0)) break;
    const double h_next = objective(items.combine(next, prior), which);
    // Near the optimum the true decrease is below the round-off of h.
    if (!(h_next <= h + 1e-12 * std::max(std::abs(h), 1.0))) break;
    q = std::move(next);
    h = h_next;
  }
  if (options.record_objective && (sol.objective_trace.empty() || sol.objective_trace.back() != h))
    sol.objective_trace.push_back(h);

  sol.weights = q;
  sol.total = q.sum();
  sol.criterion = h;
  sol.gap = std::max(gap, 0.0);
  sol.iterations = it;
  return sol;
}

}  // namespace

WeightSolution solve_discrete_weights(const PointSet& points, const Basis& basis, const PriorMatrix& prior,
                                      double k, Criterion which, const FrankWolfeOptions& options) {
  if (points.rows() < 1) throw Error("solve_discrete_weights needs at least one point");
  if (prior.size() != basis.size()) throw DimensionMismatch("prior size does not match basis size");
  ComponentSet items(basis.design_matrix(points));
  return frank_wolfe(items, prior.matrix(), k, which, options);
}

WeightSolution solve_density_weights(const DensityFamily& family, const PriorMatrix& prior, double k,
                                     Criterion which, const FrankWolfeOptions& options) {
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& c : family.components) {
    if (!(c.mass > 0.0)) throw Error("density component '" + c.name + "' has zero mass");
    if (c.gramian.rows() != prior.size()) throw DimensionMismatch("component Gramian has wrong size");
    // Factor of G_i / m_i through its eigendecomposition, dropping null directions.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(c.gramian) / c.mass);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
      if (ev[i] > 1e-14 * ev.maxCoeff()) keep.push_back(static_cast<int>(i));
    Eigen::MatrixXd f(ev.size(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
      f.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]) * std::sqrt(ev[keep[j]]);
    factors.push_back(std::move(f));
  }
  // Optimize over mass shares q_i = w_i m_i, then map back.
  WeightSolution sol = frank_wolfe(ComponentSet(std::move(factors)), prior.matrix(), k, which, options);
  for (std::size_t i = 0; i < family.components.size(); ++i)
    sol.weights[static_cast<Eigen::Index>(i)] /= family.components[i].mass;
  return sol;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre(int n) {
  Eigen::VectorXd x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0, p1 = z;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

DensityFamily make_density_family(std::shared_ptr<const Space> domain, const Basis& basis,
                                  std::vector<std::pair<std::string, DensityFunction>> functions,
                                  int quadrature_nodes) {
  const int d = domain->dimension();
  if (basis.dimension() != d) throw DimensionMismatch("basis and domain dimensions differ");
  const Box& box = domain->bounding_box();
  const auto [gx, gw] = gauss_legendre(quadrature_nodes);

  // Tensor quadrature nodes inside the domain, with their weights and features.
  std::vector<Point> nodes;
  std::vector<double> weights;
  std::vector<int> idx(d, 0);
  const long total = static_cast<long>(std::pow(quadrature_nodes, d));
  for (long code = 0; code < total; ++code) {
    long rest = code;
    Point x(d);
    double w = 1.0;
    for (int c = 0; c < d; ++c) {
      const int i = static_cast<int>(rest % quadrature_nodes);
      rest /= quadrature_nodes;
      const double half = 0.5 * (box.hi[c] - box.lo[c]);
      x[c] = box.lo[c] + half * (gx[i] + 1.0);
      w *= half * gw[i];
    }
    if (!domain->contains(x)) continue;
    nodes.push_back(std::move(x));
    weights.push_back(w);
  }
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(nodes.size()), basis.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) phi.row(static_cast<Eigen::Index>(i)) = basis.evaluate(nodes[i]).transpose();

  // Envelope probes on a regular grid of the bounding box.
  const int per_axis = d <= 3 ? 51 : 6;
  const long grid_total = static_cast<long>(std::pow(per_axis, d));

  DensityFamily family{domain, {}};
  for (auto& [name, g] : functions) {
    DensityComponent comp{name, g, 0.0, Eigen::MatrixXd::Zero(basis.size(), basis.size()), 0.0};
    Eigen::VectorXd gv(static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double v = g(nodes[i]);
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error("density component '" + name + "' is negative or non-finite");
      gv[static_cast<Eigen::Index>(i)] = v * weights[i];
    }
    comp.mass = gv.sum();
    comp.gramian = symmetrize(phi.transpose() * gv.asDiagonal() * phi);
    for (long code = 0; code < grid_total; ++code) {
      long rest = code;
      Point x(d);
      for (int c = 0; c < d; ++c) {
        x[c] = box.lo[c] + (box.hi[c] - box.lo[c]) * static_cast<double>(rest % per_axis) / (per_axis - 1);
        rest /= per_axis;
      }
      if (domain->contains(x)) comp.sup = std::max(comp.sup, g(x));
    }
    family.components.push_back(std::move(comp));
  }
  return family;
}

DensityFamily polynomial_corner_family(std::shared_ptr<const Space> domain, const Basis& basis,
                                       int max_degree) {
  const int d = domain->dimension();
  const Basis exponents = Basis::monomials(d, max_degree);
  std::vector<std::pair<std::string, DensityFunction>> fns;
  for (int reflected = 0; reflected < 2; ++reflected) {
    for (const auto& term : exponents.terms()) {
      std::ostringstream name;
      bool any = false;
      for (int c = 0; c < d; ++c) {
        if (term.powers[c] == 0) continue;
        if (any) name << "*";
        name << (reflected ? "(1-x" : "x") << c + 1 << (reflected ? ")" : "");
        if (term.powers[c] > 1) name << "^" << term.powers[c];
        any = true;
      }
      if (!any) name << "1";
      const auto powers = term.powers;
      fns.emplace_back(name.str(), [powers, reflected](const Eigen::Ref<const Eigen::VectorXd>& x) {
        double v = 1.0;
        for (Eigen::Index c = 0; c < x.size(); ++c)
          v *= std::pow(reflected ? 1.0 - x[c] : x[c], powers[static_cast<std::size_t>(c)]);
        return v;
      });
    }
  }
  // Per-axis polynomial degree of g * phi_i * phi_j stays below 2n - 1.
  int basis_degree = 0;
  for (const auto& t : basis.terms())
    for (int a : t.powers) basis_degree = std::max(basis_degree, a);
  const int nodes = std::max(16, (max_degree + 2 * basis_degree + 2) / 2 + 1);
  return make_density_family(std::move(domain), basis, std::move(fns), nodes);
}

MixtureDensity::MixtureDensity(DensityFamily family, Eigen::VectorXd weights, SamplerOptions options)
    : family_(std::move(family)), weights_(std::move(weights)), options_(options) {
  if (weights_.size() != static_cast<Eigen::Index>(family_.components.size()))
    throw DimensionMismatch("one weight per density component required");
  Eigen::VectorXd shares(weights_.size());
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (weights_[i] < 0.0) throw Error("mixture weights must be nonnegative");
    shares[i] = weights_[i] * family_.components[static_cast<std::size_t>(i)].mass;
  }
  mass_ = shares.sum();
  cumulative_ = cumulative_weights(shares);
}

double MixtureDensity::density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (!family_.domain->contains(x)) return 0.0;
  double f = 0.0;
  for (std::size_t i = 0; i < family_.components.size(); ++i)
    if (weights_[static_cast<Eigen::Index>(i)] > 0.0) f += weights_[static_cast<Eigen::Index>(i)] * family_.components[i].g(x);
  return f;
}

Point MixtureDensity::draw(Rng& rng) const {
  const auto& comp = family_.components[static_cast<std::size_t>(draw_categorical(cumulative_, rng))];
  double envelope = comp.sup * options_.envelope_safety;
  if (!(envelope > 0.0)) envelope = 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (long tries = 0; tries < options_.max_rejections; ++tries) {
    Point x = family_.domain->sample_uniform(1, rng).row(0).transpose();
    const double v = comp.g(x);
    if (v > envelope) {
      envelope = v * options_.envelope_safety;
      continue;
    }
    if (u(rng) * envelope < v) return x;
  }
  throw SamplingError("mixture density draw exceeded the rejection budget in component '" + comp.name + "'");
}

Gramian MixtureDensity::gramian(const Basis& basis, const GramianOptions& options, Rng&) const {
  Gramian out;
  out.matrix = Eigen::MatrixXd::Zero(basis.size(), basis.size());
  for (std::size_t i = 0; i < family_.components.size(); ++i) {
    if (family_.components[i].gramian.rows() != basis.size())
      throw DimensionMismatch("mixture components were integrated against another basis");
    out.matrix += weights_[static_cast<Eigen::Index>(i)] * family_.components[i].gramian;
  }
  out.matrix = symmetrize(out.matrix);
  out.mass = mass_;
  out.method = GramianMethod::quadrature;
  out.standard_error = Eigen::MatrixXd::Zero(basis.size(), basis.size());
  if (options.check_singular) check_gramian_nonsingular(out.matrix);
  return out;
}

std::shared_ptr<MixtureDensity> density_from_weights(const DensityFamily& family, const Eigen::VectorXd& weights) {
  return std::make_shared<MixtureDensity>(family, weights);
}

}  // namespace optdesign
