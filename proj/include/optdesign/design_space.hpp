#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optdesign/common.hpp"

namespace optdesign {

enum class Sense { le, ge };

enum class ConstraintKind {
  linear,     // a.x
  quadratic,  // a.x + sum_i q_i x_i^2, coeffs = [a, q]
  ball,       // |x - c|^2 against bound^2, coeffs = c
  simplex_sum // sum of the masked coordinates, coeffs = mask or empty
};

struct Constraint {
  ConstraintKind kind = ConstraintKind::linear;
  Eigen::VectorXd coeffs;
  Sense sense = Sense::le;
  double bound = 0.0;

  static Constraint linear(Eigen::VectorXd a, Sense sense, double bound);
  static Constraint quadratic(Eigen::VectorXd a, Eigen::VectorXd q, Sense sense,
                              double bound);
  static Constraint ball(Eigen::VectorXd center, double radius, bool inside = true);
  static Constraint simplex_sum(int dimension, Sense sense, double bound);

  /// Left-hand side value. For balls this is the squared distance to the center.
  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  bool satisfied(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Throws unless the coefficient layout fits a space of the given dimension.
  void validate(int dimension) const;
};

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  double volume() const { return (hi - lo).prod(); }
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  static Box unit(int dimension);
};

/// Conjunction of constraints; a DesignSpace is the union of its regions.
struct Region {
  std::string name;
  std::vector<Constraint> constraints;
  /// Optional extra membership test for shapes outside the built-in kinds.
  std::function<bool(const Eigen::Ref<const Eigen::VectorXd>&)> predicate;
  std::optional<Point> witness;

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct RejectionOptions {
  long min_proposals = 10000;
  double acceptance_floor = 1e-4;
};

struct VolumeEstimate {
  double fraction = 0.0;
  double standard_error = 0.0;
};

/// Interface shared by constraint-defined and finite design spaces.
class Space {
 public:
  virtual ~Space() = default;

  virtual int dimension() const = 0;
  virtual const Box& bounding_box() const = 0;
  virtual bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  /// i.i.d. uniform points on the space, one per row.
  virtual PointSet sample_uniform(int count, Rng& rng) const = 0;
  virtual const std::string& name() const = 0;

  void check_dimension(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

class DesignSpace final : public Space {
 public:
  /// Regions without a witness get one by a seeded search of the bounding box.
  DesignSpace(std::string name, Box box, std::vector<Region> regions,
              PointSet candidates = {}, RejectionOptions options = {});

  int dimension() const override { return box_.dimension(); }
  const Box& bounding_box() const override { return box_; }
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  PointSet sample_uniform(int count, Rng& rng) const override;
  const std::string& name() const override { return name_; }

  VolumeEstimate volume_fraction(long mc_samples, Rng& rng) const;

  const std::vector<Region>& regions() const { return regions_; }
  const PointSet& candidates() const { return candidates_; }
  const RejectionOptions& rejection_options() const { return options_; }
  /// True when the space is its bounding box (single unconstrained region).
  bool is_box() const;

 private:
  std::string name_;
  Box box_;
  std::vector<Region> regions_;
  PointSet candidates_;
  RejectionOptions options_;
};

class FiniteSpace final : public Space {
 public:
  explicit FiniteSpace(PointSet atoms, std::string name = "finite");

  int dimension() const override { return static_cast<int>(atoms_.cols()); }
  const Box& bounding_box() const override { return box_; }
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  PointSet sample_uniform(int count, Rng& rng) const override;
  const std::string& name() const override { return name_; }

  /// Categorical draws of atoms with the given nonnegative weights.
  PointSet sample_weighted(int count, const Eigen::VectorXd& weights, Rng& rng) const;
  std::optional<int> index_of(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  int size() const { return static_cast<int>(atoms_.rows()); }
  const PointSet& atoms() const { return atoms_; }

 private:
  PointSet atoms_;
  Box box_;
  std::string name_;
};

namespace builtin {

std::shared_ptr<DesignSpace> unit_cube(int dimension);
/// Three-component mixture region with two quadratic constraints.
std::shared_ptr<DesignSpace> atkinson_mixture();
/// Two tangent balls of radius (3 - sqrt 3)/4 inside the unit cube.
std::shared_ptr<DesignSpace> two_balls();
double two_balls_radius();

}  // namespace builtin

/// Accepts a built-in name or a descriptor object
/// `{dimension, bounding_box, regions, candidates, witnesses}`.
std::shared_ptr<const Space> space_from_json(const nlohmann::json& descriptor);

}  // namespace optdesign
