#include "optdesign/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace optdesign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd tuple_matrix(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& prior, const std::vector<int>& sorted) {
  Eigen::MatrixXd m = prior;
  for (int i : sorted) m.noalias() += phi.row(i).transpose() * phi.row(i);
  return symmetrize(m);
}

/// det(M), with values below 1e-10 times the Hadamard bound taken as exactly zero.
double clipped_det(const Eigen::MatrixXd& m) {
  const double det = m.determinant();
  const double hadamard = m.diagonal().cwiseAbs().prod();
  return det <= 1e-10 * hadamard ? 0.0 : det;
}

/// Calls visit(indices) for every nondecreasing sequence of `length` values in [0, n).
template <class Visit>
void for_each_multiset(int n, int length, Visit&& visit) {
  std::vector<int> idx(static_cast<std::size_t>(length), 0);
  while (true) {
    visit(idx);
    int pos = length - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - 1) --pos;
    if (pos < 0) return;
    const int next = idx[static_cast<std::size_t>(pos)] + 1;
    for (int j = pos; j < length; ++j) idx[static_cast<std::size_t>(j)] = next;
  }
}

double multiset_count(int n, int k) {
  // C(n + k - 1, k)
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - 1 + i) / i;
  return c;
}

/// Sum of the terms in ascending order of magnitude.
double ordered_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

enum class Law { pvs, iid };

ExactDistribution enumerate(const PointSet& atoms, const Eigen::VectorXd& weights, const Basis& basis,
                            const PriorMatrix& prior, int k, Law law) {
  const int n = static_cast<int>(atoms.rows());
  if (n < 1) throw Error("oracle needs at least one atom");
  if (k < 1) throw Error("oracle needs k >= 1");
  if (weights.size() != n) throw DimensionMismatch("one weight per atom required");
  if ((weights.array() < 0.0).any()) throw Error("atom weights must be nonnegative");
  if (std::pow(static_cast<double>(n), k) > 1e7) throw InstanceTooLarge("n^k exceeds 1e7 ordered tuples");

  ExactDistribution dist;
  dist.k = k;
  dist.atom_count = n;
  dist.phi = basis.design_matrix(atoms);
  dist.prior = prior.matrix();
  const double mass = weights.sum();

  std::map<std::vector<int>, double> unnormalized;
  const long total = static_cast<long>(std::llround(std::pow(static_cast<double>(n), k)));
  dist.indices.resize(static_cast<std::size_t>(total * k));
  std::vector<double> values(static_cast<std::size_t>(total));
  std::vector<int> tuple(static_cast<std::size_t>(k));
  for (long code = 0; code < total; ++code) {
    long rest = code;
    for (int j = k - 1; j >= 0; --j) {
      tuple[static_cast<std::size_t>(j)] = static_cast<int>(rest % n);
      rest /= n;
    }
    std::copy(tuple.begin(), tuple.end(), dist.indices.begin() + code * k);
    std::vector<int> key = tuple;
    std::sort(key.begin(), key.end());
    auto it = unnormalized.find(key);
    if (it == unnormalized.end()) {
      double w = 1.0;
      for (int i : key) w *= law == Law::pvs ? weights[i] : weights[i] / mass;
      if (law == Law::pvs && w > 0.0) w *= clipped_det(tuple_matrix(dist.phi, dist.prior, key));
      it = unnormalized.emplace(std::move(key), w).first;
    }
    values[static_cast<std::size_t>(code)] = it->second;
  }
  const double z = ordered_sum(values);
  if (!(z > 0.0)) throw SamplingError("every k-tuple has zero probability");
  dist.probabilities.resize(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) dist.probabilities[t] = values[t] / z;
  return dist;
}

}  // namespace

std::vector<int> ExactDistribution::tuple(std::size_t t) const {
  const auto first = indices.begin() + static_cast<std::ptrdiff_t>(t) * k;
  return {first, first + k};
}

std::vector<ExactDistribution::Multiset> ExactDistribution::multisets() const {
  std::map<std::vector<int>, Multiset> grouped;
  for (std::size_t t = 0; t < size(); ++t) {
    std::vector<int> key = tuple(t);
    std::sort(key.begin(), key.end());
    auto& entry = grouped[key];
    entry.atoms = key;
    ++entry.multiplicity;
    entry.probability += probabilities[t];
  }
  std::vector<Multiset> out;
  out.reserve(grouped.size());
  for (auto& [key, entry] : grouped) out.push_back(std::move(entry));
  return out;
}

nlohmann::json ExactDistribution::to_json() const {
  nlohmann::json tuples = nlohmann::json::array();
  for (std::size_t t = 0; t < size(); ++t) tuples.push_back({{"atoms", tuple(t)}, {"probability", probabilities[t]}});
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& m : multisets())
    sets.push_back({{"atoms", m.atoms}, {"multiplicity", m.multiplicity}, {"probability", m.probability}});
  return {{"k", k}, {"atoms", atom_count}, {"tuples", tuples}, {"multisets", sets}};
}

ExactDistribution enumerate_conditional_pvs(const PointSet& atoms, const Eigen::VectorXd& weights,
                                            const Basis& basis, const PriorMatrix& prior, int k) {
  return enumerate(atoms, weights, basis, prior, k, Law::pvs);
}

ExactDistribution enumerate_iid(const PointSet& atoms, const Eigen::VectorXd& weights, const Basis& basis,
                                const PriorMatrix& prior, int k) {
  return enumerate(atoms, weights, basis, prior, k, Law::iid);
}

double exact_conditional_expectation(const ExactDistribution& dist, Statistic statistic, Criterion which,
                                     bool allow_infinite) {
  std::map<std::vector<int>, double> cache;
  std::vector<std::pair<double, double>> terms;
  for (std::size_t t = 0; t < dist.size(); ++t) {
    const double p = dist.probabilities[t];
    if (p == 0.0) continue;
    std::vector<int> key = dist.tuple(t);
    std::sort(key.begin(), key.end());
    auto it = cache.find(key);
    if (it == cache.end()) {
      const Eigen::MatrixXd m = tuple_matrix(dist.phi, dist.prior, key);
      double value = kInf;
      if (statistic == Statistic::nonsingular) {
        it = cache.emplace(std::move(key), clipped_det(m) == 0.0 ? 0.0 : 1.0).first;
        terms.emplace_back(p, it->second);
        continue;
      }
      try {
        if (clipped_det(m) == 0.0) throw SingularMatrixError("singular information matrix", 0.0);
        SpdFactor f(m);
        switch (statistic) {
          case Statistic::inv_det: value = std::exp(-f.log_det()); break;
          case Statistic::trace_inv: value = f.inverse().trace(); break;
          case Statistic::criterion: value = criterion(m, which); break;
          case Statistic::nonsingular: break;
        }
      } catch (const SingularMatrixError&) {
        if (!allow_infinite) throw SingularMatrixError("singular information matrix on a positive-probability tuple", 0.0);
      }
      it = cache.emplace(std::move(key), value).first;
    }
    if (std::isinf(it->second)) return kInf;
    terms.emplace_back(p, it->second);
  }
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double s = 0.0;
  for (const auto& [p, v] : terms) s += p * v;
  return s;
}

bool TruncationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const IdentityCheck& c) { return c.passed; });
}

nlohmann::json TruncationReport::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& c : checks)
    items.push_back({{"name", c.name}, {"truncated", c.truncated}, {"exact", c.exact}, {"error", c.error},
                     {"tolerance", c.tolerance}, {"passed", c.passed}});
  return {{"n_max", n_max}, {"tail_bound", tail_bound}, {"probability_mass", probability_mass}, {"checks", items}};
}

TruncationReport truncated_unconditional_check(const PointSet& atoms, const Eigen::VectorXd& weights,
                                               const Basis& basis, const PriorMatrix& prior, int n_max,
                                               double tolerance) {
  const int n = static_cast<int>(atoms.rows());
  const int p = basis.size();
  if (weights.size() != n) throw DimensionMismatch("one weight per atom required");
  if ((weights.array() < 0.0).any()) throw Error("atom weights must be nonnegative");
  const double mass = weights.sum();

  TruncationReport report;
  report.n_max = n_max;
  report.tail_bound = poisson_upper_tail(mass, n_max - p + 1);
  if (report.tail_bound >= 1e-8)
    throw Error("Poisson tail beyond n_max is " + std::to_string(report.tail_bound) + "; increase n_max");
  double sets = 0.0;
  for (int size = 0; size <= n_max; ++size) sets += multiset_count(n, size);
  if (sets > 1e7) throw InstanceTooLarge("truncated check needs more than 1e7 multisets");

  const Eigen::MatrixXd phi = basis.design_matrix(atoms);
  const Eigen::MatrixXd lambda = prior.matrix();
  const Eigen::MatrixXd g = symmetrize(phi.transpose() * weights.asDiagonal() * phi);
  const SpdFactor gl(symmetrize(g + lambda));
  const double log_det_gl = gl.log_det();

  struct Term {
    double probability;
    Eigen::MatrixXd inverse;
    double inv_det;
    int size;
  };
  std::vector<Term> terms;
  double largest_inverse = 0.0, largest_inv_det = 0.0;
  for (int size = 0; size <= n_max; ++size) {
    std::vector<int> counts(static_cast<std::size_t>(n));
    auto visit = [&](const std::vector<int>& idx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int i : idx) ++counts[static_cast<std::size_t>(i)];
      double log_w = -mass;
      for (int i = 0; i < n; ++i) {
        const int c = counts[static_cast<std::size_t>(i)];
        if (c == 0) continue;
        if (weights[i] == 0.0) return;
        log_w += c * std::log(weights[i]) - std::lgamma(c + 1.0);
      }
      const Eigen::MatrixXd m = tuple_matrix(phi, lambda, idx);
      if (clipped_det(m) == 0.0) return;
      const SpdFactor f(m);
      Term t{std::exp(log_w + f.log_det() - log_det_gl), f.inverse(), std::exp(-f.log_det()), size};
      largest_inverse = std::max(largest_inverse, t.inverse.cwiseAbs().maxCoeff());
      largest_inv_det = std::max(largest_inv_det, t.inv_det);
      terms.push_back(std::move(t));
    };
    if (size == 0)
      visit({});
    else
      for_each_multiset(n, size, visit);
  }
  std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.probability < b.probability; });

  Eigen::MatrixXd e_inv = Eigen::MatrixXd::Zero(p, p);
  double e_inv_det = 0.0, e_size = 0.0, total = 0.0;
  for (const auto& t : terms) {
    e_inv += t.probability * t.inverse;
    e_inv_det += t.probability * t.inv_det;
    e_size += t.probability * t.size;
    total += t.probability;
  }
  report.probability_mass = total;
  report.expected_inverse = e_inv;
  report.exact_inverse = gl.inverse();

  // The omitted tail adds at most tail * (largest statistic). With Lambda invertible the
  // largest values are bounded by Lambda^-1; otherwise the largest enumerated value is used.
  double inverse_scale = largest_inverse, inv_det_scale = largest_inv_det;
  if (prior.kernel_dimension() == 0) {
    const SpdFactor lf(lambda);
    inverse_scale = std::max(inverse_scale, lf.inverse().cwiseAbs().maxCoeff());
    inv_det_scale = std::max(inv_det_scale, std::exp(-lf.log_det()));
  }
  const double tail = report.tail_bound;
  auto add = [&](std::string name, double truncated, double exact, double extra) {
    const double err = std::abs(truncated - exact);
    const double tol = tolerance + extra;
    report.checks.push_back({std::move(name), truncated, exact, err, tol, err <= tol});
  };
  add("total probability", total, 1.0, tail);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j)
      add("E[inverse](" + std::to_string(i) + "," + std::to_string(j) + ")", e_inv(i, j), report.exact_inverse(i, j),
          tail * inverse_scale);
  add("E[inverse determinant]", e_inv_det, std::exp(-log_det_gl), tail * inv_det_scale);
  const double expected_size = mass + gl.solve(g).trace();
  add("E[cardinality]", e_size, expected_size, p * tail + mass * poisson_upper_tail(mass, n_max - p));
  return report;
}

ExhaustiveResult exhaustive_best_design(const PointSet& atoms, const Basis& basis, const PriorMatrix& prior,
                                        int k, Criterion which) {
  const int n = static_cast<int>(atoms.rows());
  if (n < 1 || k < 1) throw Error("exhaustive search needs atoms and k >= 1");
  if (multiset_count(n, k) > 1e6) throw InstanceTooLarge("more than 1e6 multisets");
  const Eigen::MatrixXd phi = basis.design_matrix(atoms);
  std::vector<std::vector<int>> sets;
  std::vector<double> values;
  for_each_multiset(n, k, [&](const std::vector<int>& idx) {
    double v = kInf;
    try {
      v = log_criterion(tuple_matrix(phi, prior.matrix(), idx), which);
    } catch (const SingularMatrixError&) {
    }
    sets.push_back(idx);
    values.push_back(v);
  });
  ExhaustiveResult out;
  out.evaluated = static_cast<long>(values.size());
  const auto best = std::min_element(values.begin(), values.end());
  out.objective = *best;
  if (!std::isfinite(out.objective)) throw SingularMatrixError("every size-k multiset has a singular information matrix", 0.0);
  out.atoms = sets[static_cast<std::size_t>(best - values.begin())];
  for (std::size_t i = 0; i < values.size(); ++i)
    if (std::abs(values[i] - out.objective) <= 1e-12 * std::max(std::abs(out.objective), 1.0)) out.ties.push_back(sets[i]);
  out.design.resize(k, atoms.cols());
  for (int i = 0; i < k; ++i) out.design.row(i) = atoms.row(out.atoms[static_cast<std::size_t>(i)]);
  return out;
}

double pvs_d_bound(const Eigen::MatrixXd& gramian, const PriorMatrix& prior, int k) {
  const int p = static_cast<int>(gramian.rows());
  if (k < p) throw Error("bound requires k >= p");
  double factor = 1.0;
  for (int i = 0; i < p; ++i) factor *= static_cast<double>(k) / (k - i);
  const SpdFactor gl(symmetrize(gramian + prior.matrix()));
  const SpdFactor g(gramian);
  const double ratio = std::exp(g.log_det() - gl.log_det());
  const double correction = 1.0 + (p - 1.0) / (k - p + 1.0) * (1.0 - ratio);
  return factor * std::exp(-gl.log_det()) / correction;
}

double pvs_a_bound(const Eigen::MatrixXd& gramian, const PriorMatrix& prior, int k) {
  const int p = static_cast<int>(gramian.rows());
  if (k < p) throw Error("bound requires k >= p");
  const int m0 = std::max(prior.kernel_dimension(), 1);
  double factor = 1.0;
  for (int j = k - p + 1; j <= k + 1 - m0; ++j) factor *= static_cast<double>(k) / j;
  return factor * SpdFactor(symmetrize(gramian + prior.matrix())).inverse().trace();
}

double d_efficiency_floor(int k, int p) {
  double log_ratio = 0.0;
  for (int i = 0; i < p; ++i) log_ratio += std::log(static_cast<double>(k - i) / k);
  return std::exp(log_ratio / p);
}

double a_efficiency_floor(int k, int p) { return static_cast<double>(k - p + 1) / k; }

double poisson_upper_tail(double mean, int m) {
  if (m <= 0) return 1.0;
  if (mean <= 0.0) return 0.0;
  double sum = 0.0;
  for (int j = m;; ++j) {
    const double term = std::exp(-mean + j * std::log(mean) - std::lgamma(j + 1.0));
    sum += term;
    if (j > mean && term <= 1e-18 * sum) break;
    if (j > m + 100000) break;
  }
  return sum;
}

Fixture fixture_f1(const PriorMatrix& prior) {
  PointSet atoms(3, 1);
  atoms << 0.0, 0.5, 1.0;
  return {"F1", atoms, Eigen::VectorXd::Constant(3, 2.0 / 3.0), Basis::monomials(1, 1), prior, 2};
}

Fixture fixture_f1() { return fixture_f1(PriorMatrix::zero(2)); }

Fixture random_fixture(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_p(1, 3);
  const int p = pick_p(rng);
  const bool planar = p == 3 && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  const int n = std::uniform_int_distribution<int>(std::max(p, 2), 5)(rng);
  const int k = std::uniform_int_distribution<int>(std::max(p, 1), 4)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int d = planar ? 2 : 1;
  PointSet atoms(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) atoms(i, c) = u(rng);
  Eigen::VectorXd weights(n);
  for (int i = 0; i < n; ++i) weights[i] = 0.2 + u(rng);
  weights *= k / weights.sum();
  Basis basis = Basis::monomials(d, planar ? 1 : p - 1);
  return {"random-" + std::to_string(seed), atoms, weights, basis, PriorMatrix::zero(p), k};
}

}  // namespace optdesign
