#include "optdesign/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace optdesign {

std::vector<double> cumulative_weights(const Eigen::Ref<const Eigen::VectorXd>& weights) {
  std::vector<double> out(static_cast<std::size_t>(weights.size()));
  double run = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw Error("categorical weights must be nonnegative");
    run += weights[i];
    out[static_cast<std::size_t>(i)] = run;
  }
  if (!(run > 0.0)) throw Error("categorical weights sum to zero");
  return out;
}

int draw_categorical(const std::vector<double>& cumulative, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, cumulative.back());
  const double t = u(rng);
  // The first running sum strictly above t belongs to an entry of positive weight.
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), t);
  if (it == cumulative.end()) it = std::lower_bound(cumulative.begin(), cumulative.end(), cumulative.back());
  return static_cast<int>(it - cumulative.begin());
}

// ---------------------------------------------------------------------------
// B-splines

BSpline::BSpline(int degree, std::vector<double> knots) : degree_(degree), knots_(std::move(knots)) {
  if (degree_ < 0) throw Error("spline degree must be nonnegative");
  if (static_cast<int>(knots_.size()) < 2 * degree_ + 2) throw Error("too few knots for spline degree");
  if (!std::is_sorted(knots_.begin(), knots_.end())) throw Error("spline knots must be nondecreasing");
}

BSpline BSpline::clamped(int degree, const std::vector<double>& interior, double lo, double hi) {
  std::vector<double> knots(static_cast<std::size_t>(degree + 1), lo);
  knots.insert(knots.end(), interior.begin(), interior.end());
  knots.insert(knots.end(), static_cast<std::size_t>(degree + 1), hi);
  return BSpline(degree, std::move(knots));
}

Eigen::VectorXd BSpline::evaluate(double t) const {
  const int n = size();
  const int p = degree_;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const double a = knots_[p];
  const double b = knots_[n];
  if (t < a || t > b) return out;

  // Knot span index s with knots[s] <= t < knots[s+1]; the right end uses the last span.
  int s = n - 1;
  if (t < b) {
    s = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin()) - 1;
    s = std::clamp(s, p, n - 1);
  }

  // Triangular Cox-de Boor scheme on the p+1 nonzero functions.
  std::vector<double> left(p + 1), right(p + 1), vals(p + 1);
  vals[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[s + 1 - j];
    right[j] = knots_[s + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? vals[r] / denom : 0.0;
      vals[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    vals[j] = saved;
  }
  for (int r = 0; r <= p; ++r) out[s - p + r] = vals[r];
  return out;
}

std::vector<double> BSpline::argmax_points(int grid) const {
  const double a = knots_[degree_];
  const double b = knots_[size()];
  std::vector<double> best_t(size(), a), best_v(size(), -1.0);
  for (int g = 0; g <= grid; ++g) {
    const double t = a + (b - a) * g / grid;
    const auto v = evaluate(t);
    for (int i = 0; i < size(); ++i)
      if (v[i] > best_v[i]) {
        best_v[i] = v[i];
        best_t[i] = t;
      }
  }
  return best_t;
}

// ---------------------------------------------------------------------------
// Bases

Basis::Basis(BasisKind kind, int dimension, std::vector<BasisTerm> terms,
             std::optional<BSpline> spline, int spline_coordinate)
    : kind_(kind),
      dimension_(dimension),
      terms_(std::move(terms)),
      scales_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(terms_.size()))),
      spline_(std::move(spline)),
      spline_coordinate_(spline_coordinate) {
  if (dimension_ <= 0) throw Error("basis dimension must be positive");
  if (terms_.empty()) throw Error("basis needs at least one function");
  for (const auto& t : terms_) {
    if (static_cast<int>(t.powers.size()) != dimension_)
      throw DimensionMismatch("basis term exponent list has wrong length");
    if (std::any_of(t.powers.begin(), t.powers.end(), [](int a) { return a < 0; }))
      throw Error("basis exponents must be nonnegative");
    if (t.spline_index >= 0 && (!spline_ || t.spline_index >= spline_->size()))
      throw Error("basis term refers to a missing spline function");
  }
  if (spline_ && (spline_coordinate_ < 0 || spline_coordinate_ >= dimension_))
    throw Error("spline coordinate out of range");
}

Basis Basis::monomials(int dimension, int max_degree) {
  if (max_degree < 0) throw Error("max degree must be nonnegative");
  std::vector<BasisTerm> terms;
  std::vector<int> powers(dimension, 0);
  // Within a total degree, exponent tuples in decreasing lexicographic order.
  for (int deg = 0; deg <= max_degree; ++deg) {
    std::vector<int> e(dimension, 0);
    auto rec = [&](auto&& self, int coord, int remaining) -> void {
      if (coord == dimension - 1) {
        e[coord] = remaining;
        terms.push_back({e, -1});
        return;
      }
      for (int a = remaining; a >= 0; --a) {
        e[coord] = a;
        self(self, coord + 1, remaining - a);
      }
    };
    rec(rec, 0, deg);
  }
  return Basis(BasisKind::monomials, dimension, std::move(terms));
}

Basis Basis::normalized_monomials(const Space& space, int max_degree, long mc_samples,
                                  std::uint64_t seed) {
  Basis raw = monomials(space.dimension(), max_degree);
  Rng rng(seed);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(raw.size());
  const long chunk = 10000;
  for (long done = 0; done < mc_samples; done += chunk) {
    const int n = static_cast<int>(std::min(chunk, mc_samples - done));
    const auto phi = raw.design_matrix(space.sample_uniform(n, rng));
    sumsq += phi.cwiseAbs2().colwise().sum().transpose();
  }
  Eigen::VectorXd scales = (sumsq / static_cast<double>(mc_samples)).cwiseSqrt().cwiseInverse();
  Basis out = raw.with_scales(std::move(scales));
  out.kind_ = BasisKind::normalized_monomials;
  return out;
}

Basis Basis::bspline_products(const BSpline& spline, int dimension, int spline_coordinate,
                              int max_power) {
  std::vector<BasisTerm> terms;
  std::vector<int> others;
  for (int c = 0; c < dimension; ++c)
    if (c != spline_coordinate) others.push_back(c);
  const int combos = static_cast<int>(std::pow(max_power + 1, static_cast<double>(others.size())));
  for (int i = 0; i < spline.size(); ++i) {
    for (int code = 0; code < combos; ++code) {
      BasisTerm t{std::vector<int>(dimension, 0), i};
      int rest = code;
      for (auto it = others.rbegin(); it != others.rend(); ++it) {
        t.powers[*it] = rest % (max_power + 1);
        rest /= max_power + 1;
      }
      terms.push_back(std::move(t));
    }
  }
  return Basis(BasisKind::bspline_polynomial, dimension, std::move(terms), spline, spline_coordinate);
}

Basis Basis::with_scales(Eigen::VectorXd scales) const {
  if (scales.size() != size()) throw DimensionMismatch("one scale per basis function required");
  Basis out = *this;
  out.scales_ = std::move(scales);
  return out;
}

Basis Basis::select(const std::vector<int>& indices) const {
  std::vector<BasisTerm> terms;
  Eigen::VectorXd scales(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= size()) throw Error("basis selection index out of range");
    terms.push_back(terms_[indices[i]]);
    scales[static_cast<Eigen::Index>(i)] = scales_[indices[i]];
  }
  Basis out(BasisKind::custom_table, dimension_, std::move(terms), spline_, spline_coordinate_);
  out.scales_ = std::move(scales);
  return out;
}

Eigen::VectorXd Basis::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dimension_) throw DimensionMismatch("point dimension does not match basis");
  Eigen::VectorXd spline_vals;
  if (spline_) spline_vals = spline_->evaluate(x[spline_coordinate_]);
  Eigen::VectorXd out(size());
  for (int j = 0; j < size(); ++j) {
    const auto& t = terms_[j];
    double v = scales_[j];
    for (int c = 0; c < dimension_; ++c)
      for (int a = 0; a < t.powers[c]; ++a) v *= x[c];
    if (t.spline_index >= 0) v *= spline_vals[t.spline_index];
    if (!std::isfinite(v)) throw Error("non-finite value of basis function " + term_name(j));
    out[j] = v;
  }
  return out;
}

Eigen::MatrixXd Basis::design_matrix(const PointSet& points) const {
  Eigen::MatrixXd phi(points.rows(), size());
  for (Eigen::Index i = 0; i < points.rows(); ++i) phi.row(i) = evaluate(points.row(i).transpose()).transpose();
  return phi;
}

std::string Basis::term_name(int j) const {
  std::ostringstream s;
  const auto& t = terms_.at(static_cast<std::size_t>(j));
  bool any = false;
  if (t.spline_index >= 0) {
    s << "B" << t.spline_index + 1 << "(x" << spline_coordinate_ + 1 << ")";
    any = true;
  }
  for (int c = 0; c < dimension_; ++c) {
    if (t.powers[c] == 0) continue;
    if (any) s << "*";
    s << "x" << c + 1;
    if (t.powers[c] > 1) s << "^" << t.powers[c];
    any = true;
  }
  if (!any) s << "1";
  return s.str();
}

Basis basis_from_json(const nlohmann::json& j, const Space& space) {
  const auto kind = j.at("kind").get<std::string>();
  const int d = space.dimension();
  if (kind == "monomials") return Basis::monomials(d, j.at("degree").get<int>());
  if (kind == "normalized_monomials")
    return Basis::normalized_monomials(space, j.at("degree").get<int>(),
                                       j.value("mc_samples", 1000000L),
                                       j.value("seed", std::uint64_t{20220101}));
  if (kind == "bspline_polynomial" || kind == "custom_table") {
    std::optional<BSpline> spline;
    int coord = j.value("spline_coordinate", 0);
    if (j.contains("knots"))
      spline = BSpline::clamped(j.value("spline_degree", 3), j.at("knots").get<std::vector<double>>(),
                                j.value("lo", 0.0), j.value("hi", 1.0));
    if (kind == "bspline_polynomial" && !j.contains("terms")) {
      if (!spline) throw Error("bspline_polynomial basis needs knots");
      Basis full = Basis::bspline_products(*spline, d, coord, j.value("max_power", 3));
      if (j.contains("select")) return full.select(j.at("select").get<std::vector<int>>());
      return full;
    }
    std::vector<BasisTerm> terms;
    for (const auto& t : j.at("terms")) {
      BasisTerm term{t.at("powers").get<std::vector<int>>(), t.value("spline", -1)};
      terms.push_back(std::move(term));
    }
    Basis b(kind == "custom_table" ? BasisKind::custom_table : BasisKind::bspline_polynomial, d,
            std::move(terms), spline, coord);
    if (j.contains("scales")) {
      const auto s = j.at("scales").get<std::vector<double>>();
      b = b.with_scales(Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())));
    }
    return b;
  }
  throw Error("unknown basis kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Prior, information matrices, efficiencies

PriorMatrix::PriorMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) throw DimensionMismatch("prior matrix must be square");
  if (!m_.allFinite()) throw Error("prior matrix must be finite");
  const double norm = m_.cwiseAbs().maxCoeff();
  if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(norm, 1.0))
    throw Error("prior matrix must be symmetric");
  m_ = symmetrize(m_);
  if (m_.rows() == 0) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  if (ev.minCoeff() < -tol) throw Error("prior matrix must be positive semi-definite");
  bool clipped = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] <= tol) {
      ++kernel_dim_;
      if (ev[i] != 0.0) clipped = true;
      ev[i] = 0.0;
    }
  }
  if (clipped) m_ = symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Eigen::MatrixXd information_matrix(const Eigen::MatrixXd& phi, const PriorMatrix& prior) {
  if (phi.cols() != prior.size()) throw DimensionMismatch("prior size does not match basis size");
  // Accumulate rows in lexicographic order so the result does not depend on point order.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(phi.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < phi.cols(); ++c)
      if (phi(a, c) != phi(b, c)) return phi(a, c) < phi(b, c);
    return false;
  });
  Eigen::MatrixXd sorted(phi.rows(), phi.cols());
  for (std::size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = phi.row(order[i]);
  Eigen::MatrixXd m = prior.matrix();
  m.selfadjointView<Eigen::Lower>().rankUpdate(sorted.transpose());
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
  return m;
}

Eigen::MatrixXd information_matrix(const Basis& basis, const PointSet& design, const PriorMatrix& prior) {
  if (design.rows() == 0) return prior.matrix();
  return information_matrix(basis.design_matrix(design), prior);
}

double d_efficiency(const PointSet& design, const PointSet& reference, const Basis& basis,
                    const PriorMatrix& prior) {
  const double ld = SpdFactor(information_matrix(basis, design, prior)).log_det();
  const double lr = SpdFactor(information_matrix(basis, reference, prior)).log_det();
  return std::exp((ld - lr) / basis.size());
}

double a_efficiency(const PointSet& design, const PointSet& reference, const Basis& basis,
                    const PriorMatrix& prior) {
  return criterion(information_matrix(basis, reference, prior), Criterion::A) /
         criterion(information_matrix(basis, design, prior), Criterion::A);
}

// ---------------------------------------------------------------------------
// Gramians and reference measures

void check_gramian_nonsingular(const Eigen::MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(g), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-10 * ev.cwiseAbs().maxCoeff())) {
    std::ostringstream msg;
    msg << "singular Gramian: smallest eigenvalue " << ev.minCoeff() << ", largest " << ev.maxCoeff();
    throw SingularGramianError(msg.str());
  }
}

Eigen::MatrixXd closed_form_box_gramian(const Basis& basis, const Box& box, double mass) {
  if (!basis.is_polynomial()) throw Error("closed-form Gramian needs a polynomial basis");
  const int p = basis.size();
  const int d = basis.dimension();
  // Mean of x^n under the uniform law on [lo, hi].
  auto moment = [&](int axis, int n) {
    const double lo = box.lo[axis], hi = box.hi[axis];
    return (std::pow(hi, n + 1) - std::pow(lo, n + 1)) / ((n + 1) * (hi - lo));
  };
  Eigen::MatrixXd g(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b <= a; ++b) {
      double v = mass * basis.scales()[a] * basis.scales()[b];
      for (int c = 0; c < d; ++c) v *= moment(c, basis.terms()[a].powers[c] + basis.terms()[b].powers[c]);
      g(a, b) = g(b, a) = v;
    }
  return g;
}

UniformMeasure::UniformMeasure(std::shared_ptr<const Space> space, double mass)
    : space_(std::move(space)), mass_(mass) {
  if (!(mass_ > 0.0)) throw Error("reference measure mass must be positive");
}

Point UniformMeasure::draw(Rng& rng) const { return space_->sample_uniform(1, rng).row(0).transpose(); }

Gramian UniformMeasure::gramian(const Basis& basis, const GramianOptions& options, Rng& rng) const {
  Gramian out;
  out.mass = mass_;
  const auto* ds = dynamic_cast<const DesignSpace*>(space_.get());
  if (options.allow_closed_form && basis.is_polynomial() && ds && ds->is_box()) {
    out.matrix = closed_form_box_gramian(basis, ds->bounding_box(), mass_);
    out.method = GramianMethod::closed_form;
    out.standard_error = Eigen::MatrixXd::Zero(basis.size(), basis.size());
  } else {
    const int p = basis.size();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(p, p);
    const long n = options.mc_samples;
    if (n < 2) throw Error("Monte Carlo Gramian needs at least two samples");
    const long chunk = 10000;
    for (long done = 0; done < n; done += chunk) {
      const int m = static_cast<int>(std::min(chunk, n - done));
      const auto phi = basis.design_matrix(space_->sample_uniform(m, rng));
      for (int i = 0; i < m; ++i) {
        const Eigen::MatrixXd outer = phi.row(i).transpose() * phi.row(i);
        sum += outer;
        sumsq += outer.cwiseAbs2();
      }
    }
    const double dn = static_cast<double>(n);
    const Eigen::MatrixXd mean = sum / dn;
    const Eigen::MatrixXd var = ((sumsq / dn - mean.cwiseAbs2()) * dn / (dn - 1.0)).cwiseMax(0.0);
    out.matrix = symmetrize(mass_ * mean);
    out.standard_error = mass_ * (var / dn).cwiseSqrt();
    out.method = GramianMethod::monte_carlo;
    out.samples = n;
  }
  if (options.check_singular) check_gramian_nonsingular(out.matrix);
  return out;
}

AtomicMeasure::AtomicMeasure(PointSet atoms, Eigen::VectorXd weights)
    : atoms_(std::move(atoms)), weights_(std::move(weights)) {
  if (atoms_.rows() != weights_.size()) throw DimensionMismatch("one weight per atom required");
  if ((weights_.array() < 0.0).any()) throw Error("atom weights must be nonnegative");
  mass_ = weights_.sum();
  if (!(mass_ > 0.0)) throw Error("atomic measure has no positive weight");
  cumulative_ = cumulative_weights(weights_);
}

int AtomicMeasure::draw_index(Rng& rng) const { return draw_categorical(cumulative_, rng); }

Gramian AtomicMeasure::gramian(const Basis& basis, const GramianOptions& options, Rng&) const {
  const auto phi = basis.design_matrix(atoms_);
  Gramian out;
  out.matrix = symmetrize(phi.transpose() * weights_.asDiagonal() * phi);
  out.mass = mass_;
  out.method = GramianMethod::atom_sum;
  out.standard_error = Eigen::MatrixXd::Zero(basis.size(), basis.size());
  if (options.check_singular) check_gramian_nonsingular(out.matrix);
  return out;
}

}  // namespace optdesign
