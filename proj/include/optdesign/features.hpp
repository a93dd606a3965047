#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optdesign/common.hpp"
#include "optdesign/design_space.hpp"
#include "optdesign/linalg.hpp"

namespace optdesign {

/// Clamped B-spline basis on [knots.front(), knots.back()].
class BSpline {
 public:
  BSpline(int degree, std::vector<double> knots);
  /// Clamped spline on [lo, hi] with the given interior knots.
  static BSpline clamped(int degree, const std::vector<double>& interior, double lo = 0.0,
                         double hi = 1.0);

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const std::vector<double>& knots() const { return knots_; }

  /// All basis values at t (zero outside the support interval).
  Eigen::VectorXd evaluate(double t) const;
  /// Abscissa of the maximum of each basis function, located on a fine grid.
  std::vector<double> argmax_points(int grid = 100000) const;

 private:
  int degree_;
  std::vector<double> knots_;
};

enum class BasisKind { monomials, normalized_monomials, bspline_polynomial, custom_table };

/// One regression function: scale * B_spline(x[spline_coordinate]) * prod_c x_c^powers[c].
struct BasisTerm {
  std::vector<int> powers;
  int spline_index = -1;
};

class Basis {
 public:
  Basis(BasisKind kind, int dimension, std::vector<BasisTerm> terms,
        std::optional<BSpline> spline = std::nullopt, int spline_coordinate = 0);

  /// Graded monomials: degree 0, then degree 1 (x1..xd), then degree 2, ...
  static Basis monomials(int dimension, int max_degree);
  /// Monomials rescaled to unit mean square under the uniform law on `space`,
  /// with the mean squares estimated from `mc_samples` seeded draws.
  static Basis normalized_monomials(const Space& space, int max_degree, long mc_samples = 1000000,
                                    std::uint64_t seed = 20220101);
  /// Products B_i(x_c) * prod_{j != c} x_j^a_j with every exponent <= max_power.
  static Basis bspline_products(const BSpline& spline, int dimension, int spline_coordinate,
                                int max_power);

  BasisKind kind() const { return kind_; }
  int size() const { return static_cast<int>(terms_.size()); }
  int dimension() const { return dimension_; }
  const std::vector<BasisTerm>& terms() const { return terms_; }
  const Eigen::VectorXd& scales() const { return scales_; }
  const std::optional<BSpline>& spline() const { return spline_; }
  int spline_coordinate() const { return spline_coordinate_; }
  bool is_polynomial() const { return !spline_.has_value(); }

  Basis with_scales(Eigen::VectorXd scales) const;
  /// Keeps the listed terms in the given order (e.g. a reduced basis).
  Basis select(const std::vector<int>& indices) const;

  /// Row phi(x); throws naming the offending function on non-finite output.
  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Design matrix, one row per point.
  Eigen::MatrixXd design_matrix(const PointSet& points) const;
  std::string term_name(int j) const;

 private:
  BasisKind kind_;
  int dimension_;
  std::vector<BasisTerm> terms_;
  Eigen::VectorXd scales_;
  std::optional<BSpline> spline_;
  int spline_coordinate_;
};

Basis basis_from_json(const nlohmann::json& descriptor, const Space& space);

/// Symmetric PSD prior precision matrix Lambda.
class PriorMatrix {
 public:
  explicit PriorMatrix(Eigen::MatrixXd m);
  static PriorMatrix zero(int p) { return PriorMatrix(Eigen::MatrixXd::Zero(p, p)); }
  static PriorMatrix scaled_identity(int p, double c) {
    return PriorMatrix(c * Eigen::MatrixXd::Identity(p, p));
  }

  const Eigen::MatrixXd& matrix() const { return m_; }
  int size() const { return static_cast<int>(m_.rows()); }
  /// dim Ker(Lambda), counting eigenvalues at round-off level as zero.
  int kernel_dimension() const { return kernel_dim_; }
  bool is_zero() const { return kernel_dim_ == size(); }

 private:
  Eigen::MatrixXd m_;
  int kernel_dim_ = 0;
};

/// phi(X)^T phi(X) + Lambda, symmetrized.
Eigen::MatrixXd information_matrix(const Basis& basis, const PointSet& design,
                                   const PriorMatrix& prior);
Eigen::MatrixXd information_matrix(const Eigen::MatrixXd& design_matrix, const PriorMatrix& prior);

double d_efficiency(const PointSet& design, const PointSet& reference, const Basis& basis,
                    const PriorMatrix& prior);
double a_efficiency(const PointSet& design, const PointSet& reference, const Basis& basis,
                    const PriorMatrix& prior);

enum class GramianMethod { closed_form, monte_carlo, atom_sum, quadrature };

struct Gramian {
  Eigen::MatrixXd matrix;
  double mass = 0.0;
  GramianMethod method = GramianMethod::closed_form;
  long samples = 0;
  /// Entrywise standard errors; zero for exact methods.
  Eigen::MatrixXd standard_error;
};

struct GramianOptions {
  long mc_samples = 100000;
  bool allow_closed_form = true;
  bool check_singular = true;
};

/// Reference measure nu of a PVS model, with draws from nu / nu(Omega).
class ReferenceMeasure {
 public:
  virtual ~ReferenceMeasure() = default;
  virtual int dimension() const = 0;
  virtual double mass() const = 0;
  virtual Point draw(Rng& rng) const = 0;
  virtual Gramian gramian(const Basis& basis, const GramianOptions& options, Rng& rng) const = 0;
};

class UniformMeasure final : public ReferenceMeasure {
 public:
  UniformMeasure(std::shared_ptr<const Space> space, double mass);
  int dimension() const override { return space_->dimension(); }
  double mass() const override { return mass_; }
  Point draw(Rng& rng) const override;
  Gramian gramian(const Basis& basis, const GramianOptions& options, Rng& rng) const override;
  const Space& space() const { return *space_; }

 private:
  std::shared_ptr<const Space> space_;
  double mass_;
};

/// nu = sum_i w_i delta_{x_i}.
class AtomicMeasure final : public ReferenceMeasure {
 public:
  AtomicMeasure(PointSet atoms, Eigen::VectorXd weights);
  int dimension() const override { return static_cast<int>(atoms_.cols()); }
  double mass() const override { return mass_; }
  Point draw(Rng& rng) const override { return atoms_.row(draw_index(rng)).transpose(); }
  int draw_index(Rng& rng) const;
  Gramian gramian(const Basis& basis, const GramianOptions& options, Rng& rng) const override;

  const PointSet& atoms() const { return atoms_; }
  const Eigen::VectorXd& weights() const { return weights_; }

 private:
  PointSet atoms_;
  Eigen::VectorXd weights_;
  double mass_;
  std::vector<double> cumulative_;
};

/// Exact Gramian of a polynomial basis under the uniform law on a box, times mass.
Eigen::MatrixXd closed_form_box_gramian(const Basis& basis, const Box& box, double mass);

/// Throws SingularGramianError if smallest eigenvalue <= 1e-10 * largest.
void check_gramian_nonsingular(const Eigen::MatrixXd& g);

}  // namespace optdesign
