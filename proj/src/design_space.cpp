#include "optdesign/design_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace optdesign {

Constraint Constraint::linear(Eigen::VectorXd a, Sense sense, double bound) {
  return {ConstraintKind::linear, std::move(a), sense, bound};
}

Constraint Constraint::quadratic(Eigen::VectorXd a, Eigen::VectorXd q, Sense sense,
                                 double bound) {
  if (a.size() != q.size()) throw DimensionMismatch("quadratic constraint: |a| != |q|");
  Eigen::VectorXd coeffs(a.size() + q.size());
  coeffs << a, q;
  return {ConstraintKind::quadratic, std::move(coeffs), sense, bound};
}

Constraint Constraint::ball(Eigen::VectorXd center, double radius, bool inside) {
  return {ConstraintKind::ball, std::move(center), inside ? Sense::le : Sense::ge, radius};
}

Constraint Constraint::simplex_sum(int dimension, Sense sense, double bound) {
  return {ConstraintKind::simplex_sum, Eigen::VectorXd::Ones(dimension), sense, bound};
}

double Constraint::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const auto d = x.size();
  switch (kind) {
    case ConstraintKind::linear:
      return coeffs.dot(x);
    case ConstraintKind::quadratic:
      return coeffs.head(d).dot(x) + coeffs.tail(d).dot(x.cwiseAbs2());
    case ConstraintKind::ball:
      return (x - coeffs).squaredNorm();
    case ConstraintKind::simplex_sum:
      return coeffs.size() == 0 ? x.sum() : coeffs.dot(x);
  }
  return 0.0;
}

bool Constraint::satisfied(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double lhs = evaluate(x);
  const double rhs = kind == ConstraintKind::ball ? bound * bound : bound;
  return sense == Sense::le ? lhs <= rhs : lhs >= rhs;
}

void Constraint::validate(int dimension) const {
  Eigen::Index expected = dimension;
  if (kind == ConstraintKind::quadratic) expected = 2 * dimension;
  if (kind == ConstraintKind::simplex_sum && coeffs.size() == 0) return;
  if (coeffs.size() != expected) {
    std::ostringstream msg;
    msg << "constraint has " << coeffs.size() << " coefficients, expected " << expected;
    throw DimensionMismatch(msg.str());
  }
  if (!coeffs.allFinite() || !std::isfinite(bound))
    throw Error("constraint coefficients must be finite");
  if (kind == ConstraintKind::ball && bound < 0) throw Error("ball radius must be >= 0");
}

bool Box::contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

Box Box::unit(int dimension) {
  return {Eigen::VectorXd::Zero(dimension), Eigen::VectorXd::Ones(dimension)};
}

bool Region::contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  for (const auto& c : constraints)
    if (!c.satisfied(x)) return false;
  return !predicate || predicate(x);
}

void Space::check_dimension(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dimension()) {
    std::ostringstream msg;
    msg << "point of dimension " << x.size() << " given to space '" << name()
        << "' of dimension " << dimension();
    throw DimensionMismatch(msg.str());
  }
}

namespace {

Point uniform_in_box(const Box& box, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point x(box.dimension());
  for (int i = 0; i < box.dimension(); ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * u(rng);
  return x;
}

}  // namespace

DesignSpace::DesignSpace(std::string name, Box box, std::vector<Region> regions,
                         PointSet candidates, RejectionOptions options)
    : name_(std::move(name)),
      box_(std::move(box)),
      regions_(std::move(regions)),
      candidates_(std::move(candidates)),
      options_(options) {
  const int d = box_.dimension();
  if (d <= 0) throw Error("design space dimension must be positive");
  if (box_.hi.size() != d) throw DimensionMismatch("bounding box bounds differ in length");
  if (!(box_.hi.array() > box_.lo.array()).all())
    throw Error("bounding box of '" + name_ + "' must have lo < hi on every axis");
  if (regions_.empty()) regions_.push_back(Region{"box", {}, {}, std::nullopt});

  for (std::size_t r = 0; r < regions_.size(); ++r) {
    auto& region = regions_[r];
    if (region.name.empty()) region.name = name_ + "#" + std::to_string(r);
    for (const auto& c : region.constraints) c.validate(d);
    if (!region.witness) {
      Rng rng(0x5eedu + r);
      for (long t = 0; t < 1000000 && !region.witness; ++t) {
        Point x = uniform_in_box(box_, rng);
        if (region.contains(x)) region.witness = x;
      }
      if (!region.witness) throw Error("region '" + region.name + "' appears to be empty");
    }
    if (region.witness->size() != d || !box_.contains(*region.witness) ||
        !region.contains(*region.witness))
      throw Error("witness of region '" + region.name + "' is not feasible");
  }
  if (candidates_.size() > 0) {
    if (candidates_.cols() != d) throw DimensionMismatch("candidate points have wrong dimension");
    for (Eigen::Index i = 0; i < candidates_.rows(); ++i)
      if (!contains(candidates_.row(i).transpose()))
        throw Error("candidate point " + std::to_string(i) + " lies outside '" + name_ + "'");
  }
}

bool DesignSpace::contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_dimension(x);
  if (!box_.contains(x)) return false;
  return std::any_of(regions_.begin(), regions_.end(),
                     [&](const Region& r) { return r.contains(x); });
}

bool DesignSpace::is_box() const {
  return regions_.size() == 1 && regions_.front().constraints.empty() &&
         !regions_.front().predicate;
}

PointSet DesignSpace::sample_uniform(int count, Rng& rng) const {
  if (count < 0) throw Error("sample count must be nonnegative");
  PointSet out(count, dimension());
  long proposals = 0;
  long accepted = 0;
  while (accepted < count) {
    Point x = uniform_in_box(box_, rng);
    ++proposals;
    if (contains(x)) out.row(accepted++) = x.transpose();
    if (proposals >= options_.min_proposals &&
        static_cast<double>(accepted) < options_.acceptance_floor * static_cast<double>(proposals)) {
      std::ostringstream msg;
      msg << "acceptance too low in '" << name_ << "' (regions:";
      for (const auto& r : regions_) msg << ' ' << r.name;
      msg << "): " << accepted << " of " << proposals << " proposals accepted";
      throw SamplingError(msg.str());
    }
  }
  return out;
}

VolumeEstimate DesignSpace::volume_fraction(long mc_samples, Rng& rng) const {
  if (mc_samples < 1) throw Error("volume_fraction needs at least one sample");
  long hits = 0;
  for (long i = 0; i < mc_samples; ++i)
    if (contains(uniform_in_box(box_, rng))) ++hits;
  const double f = static_cast<double>(hits) / static_cast<double>(mc_samples);
  return {f, std::sqrt(f * (1.0 - f) / static_cast<double>(mc_samples))};
}

FiniteSpace::FiniteSpace(PointSet atoms, std::string name)
    : atoms_(std::move(atoms)), name_(std::move(name)) {
  if (atoms_.rows() == 0 || atoms_.cols() == 0) throw Error("finite space needs at least one atom");
  for (Eigen::Index i = 0; i < atoms_.rows(); ++i)
    for (Eigen::Index j = i + 1; j < atoms_.rows(); ++j)
      if (atoms_.row(i) == atoms_.row(j))
        throw Error("atoms " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
  box_.lo = atoms_.colwise().minCoeff().transpose();
  box_.hi = atoms_.colwise().maxCoeff().transpose();
}

std::optional<int> FiniteSpace::index_of(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_dimension(x);
  for (Eigen::Index i = 0; i < atoms_.rows(); ++i)
    if (atoms_.row(i) == x.transpose()) return static_cast<int>(i);
  return std::nullopt;
}

bool FiniteSpace::contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return index_of(x).has_value();
}

PointSet FiniteSpace::sample_uniform(int count, Rng& rng) const {
  if (count < 0) throw Error("sample count must be nonnegative");
  std::uniform_int_distribution<int> pick(0, size() - 1);
  PointSet out(count, dimension());
  for (int i = 0; i < count; ++i) out.row(i) = atoms_.row(pick(rng));
  return out;
}

PointSet FiniteSpace::sample_weighted(int count, const Eigen::VectorXd& weights, Rng& rng) const {
  if (weights.size() != size()) throw DimensionMismatch("one weight per atom required");
  if ((weights.array() < 0).any() || !(weights.sum() > 0))
    throw Error("atom weights must be nonnegative with positive total");
  std::discrete_distribution<int> pick(weights.data(), weights.data() + weights.size());
  PointSet out(count, dimension());
  for (int i = 0; i < count; ++i) out.row(i) = atoms_.row(pick(rng));
  return out;
}

namespace builtin {

std::shared_ptr<DesignSpace> unit_cube(int dimension) {
  return std::make_shared<DesignSpace>("unit_cube", Box::unit(dimension), std::vector<Region>{});
}

std::shared_ptr<DesignSpace> atkinson_mixture() {
  Region r;
  r.name = "atkinson_mixture";
  r.constraints.push_back(Constraint::simplex_sum(2, Sense::ge, 0.0));
  r.constraints.push_back(Constraint::simplex_sum(2, Sense::le, 1.0));
  r.constraints.push_back(Constraint::quadratic(Eigen::Vector2d(2.962, 1.0),
                                                Eigen::Vector2d(-4.062, 0.0), Sense::ge, 0.6075));
  r.constraints.push_back(Constraint::quadratic(Eigen::Vector2d(1.057, 1.0),
                                                Eigen::Vector2d(-1.174, 0.0), Sense::le, 0.5019));
  r.witness = Eigen::Vector2d(0.3, 0.25);
  return std::make_shared<DesignSpace>("atkinson_mixture", Box::unit(2),
                                       std::vector<Region>{std::move(r)});
}

double two_balls_radius() { return (3.0 - std::sqrt(3.0)) / 4.0; }

std::shared_ptr<DesignSpace> two_balls() {
  const double xc = two_balls_radius();
  Region low{"ball_low", {Constraint::ball(Eigen::Vector3d::Constant(xc), xc)}, {},
             Point(Eigen::Vector3d::Constant(xc))};
  Region high{"ball_high", {Constraint::ball(Eigen::Vector3d::Constant(1.0 - xc), xc)}, {},
              Point(Eigen::Vector3d::Constant(1.0 - xc))};
  return std::make_shared<DesignSpace>("two_balls", Box::unit(3),
                                       std::vector<Region>{std::move(low), std::move(high)});
}

}  // namespace builtin

namespace {

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

PointSet points_from_json(const nlohmann::json& j, int dimension) {
  PointSet out(static_cast<Eigen::Index>(j.size()), dimension);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = vector_from_json(j[i]);
    if (row.size() != dimension) throw DimensionMismatch("point " + std::to_string(i) + " has wrong dimension");
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

ConstraintKind kind_from_string(const std::string& s) {
  if (s == "linear") return ConstraintKind::linear;
  if (s == "quadratic") return ConstraintKind::quadratic;
  if (s == "ball") return ConstraintKind::ball;
  if (s == "simplex_sum" || s == "simplex-sum") return ConstraintKind::simplex_sum;
  throw Error("unknown constraint kind '" + s + "'");
}

Sense sense_from_string(const std::string& s) {
  if (s == "<=" || s == "le") return Sense::le;
  if (s == ">=" || s == "ge") return Sense::ge;
  throw Error("unknown constraint sense '" + s + "'");
}

}  // namespace

std::shared_ptr<const Space> space_from_json(const nlohmann::json& descriptor) {
  if (descriptor.is_string()) {
    const auto name = descriptor.get<std::string>();
    if (name == "unit_cube") return builtin::unit_cube(2);
    if (name == "atkinson_mixture") return builtin::atkinson_mixture();
    if (name == "two_balls") return builtin::two_balls();
    throw Error("unknown built-in space '" + name + "'");
  }
  if (descriptor.contains("builtin")) {
    const auto name = descriptor.at("builtin").get<std::string>();
    if (name == "unit_cube") return builtin::unit_cube(descriptor.value("dimension", 2));
    return space_from_json(nlohmann::json(name));
  }
  if (descriptor.contains("atoms")) {
    const int d = descriptor.at("dimension").get<int>();
    return std::make_shared<FiniteSpace>(points_from_json(descriptor.at("atoms"), d),
                                         descriptor.value("name", std::string("finite")));
  }

  const int d = descriptor.at("dimension").get<int>();
  Box box{Eigen::VectorXd(d), Eigen::VectorXd(d)};
  const auto& bb = descriptor.at("bounding_box");
  if (static_cast<int>(bb.size()) != d) throw DimensionMismatch("bounding_box needs one [lo,hi] per axis");
  for (int i = 0; i < d; ++i) {
    box.lo[i] = bb[i].at(0).get<double>();
    box.hi[i] = bb[i].at(1).get<double>();
  }

  std::vector<Region> regions;
  if (descriptor.contains("regions")) {
    const auto& regs = descriptor.at("regions");
    for (std::size_t r = 0; r < regs.size(); ++r) {
      Region region;
      for (const auto& c : regs[r]) {
        Constraint con;
        con.kind = kind_from_string(c.at("kind").get<std::string>());
        con.coeffs = c.contains("coeffs") ? vector_from_json(c.at("coeffs")) : Eigen::VectorXd();
        con.sense = sense_from_string(c.value("sense", std::string("<=")));
        con.bound = c.at("bound").get<double>();
        region.constraints.push_back(std::move(con));
      }
      if (descriptor.contains("witnesses")) region.witness = vector_from_json(descriptor.at("witnesses").at(r));
      regions.push_back(std::move(region));
    }
  }
  PointSet candidates;
  if (descriptor.contains("candidates") && !descriptor.at("candidates").empty())
    candidates = points_from_json(descriptor.at("candidates"), d);

  RejectionOptions options;
  options.min_proposals = descriptor.value("min_proposals", options.min_proposals);
  options.acceptance_floor = descriptor.value("acceptance_floor", options.acceptance_floor);
  return std::make_shared<DesignSpace>(descriptor.value("name", std::string("custom")), std::move(box),
                                       std::move(regions), std::move(candidates), options);
}

}  // namespace optdesign
