#include <doctest.h>

#include <cmath>

#include "optdesign/relaxation.hpp"
#include "test_util.hpp"

using namespace optdesign;

namespace {

PointSet corners() {
  PointSet c(4, 2);
  c << 0, 0, 1, 0, 0, 1, 1, 1;
  return c;
}

double objective(const PointSet& pts, const Basis& b, const PriorMatrix& prior, const Eigen::VectorXd& w,
                 Criterion which) {
  Eigen::MatrixXd phi = b.design_matrix(pts);
  Eigen::MatrixXd m = phi.transpose() * w.asDiagonal() * phi + prior.matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if (llt.info() != Eigen::Success || diag.minCoeff() * diag.minCoeff() <= 1e-12 * m.diagonal().maxCoeff())
    return std::numeric_limits<double>::infinity();
  if (which == Criterion::A) return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols())).trace();
  return -2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Minimum of the objective over the scaled simplex on a lattice of the given step (fraction of k).
double simplex_grid_min(const PointSet& pts, const Basis& b, const PriorMatrix& prior, double k, Criterion which,
                        int steps) {
  const int l = static_cast<int>(pts.rows());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> c(l, 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == l - 1) {
      c[i] = left;
      Eigen::VectorXd w(l);
      for (int j = 0; j < l; ++j) w[j] = k * c[j] / steps;
      best = std::min(best, objective(pts, b, prior, w, which));
      return;
    }
    for (int v = 0; v <= left; ++v) {
      c[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, steps);
  return best;
}

}  // namespace

TEST_SUITE("relaxation") {

TEST_CASE("minimal support gets equal weights and equal gradients") {
  PointSet pts(3, 1);
  pts << 0.1, 0.4, 0.9;
  Basis b = Basis::monomials(1, 2);
  WeightSolution s = solve_discrete_weights(pts, b, PriorMatrix::zero(3), 6.0, Criterion::D);
  CHECK(s.converged);
  for (int i = 0; i < 3; ++i) CHECK(s.weights[i] == doctest::Approx(2.0).epsilon(1e-6));
  // stationarity: phi_i^T M^-1 phi_i identical on the support
  Eigen::MatrixXd phi = b.design_matrix(pts);
  Eigen::MatrixXd minv = (phi.transpose() * s.weights.asDiagonal() * phi).inverse();
  const double g0 = phi.row(0) * minv * phi.row(0).transpose();
  for (int i = 1; i < 3; ++i) CHECK(double(phi.row(i) * minv * phi.row(i).transpose()) == doctest::Approx(g0).epsilon(1e-6));
}

TEST_CASE("corners of the square") {
  Basis b = Basis::monomials(2, 1);
  for (Criterion which : {Criterion::D, Criterion::A}) {
    WeightSolution s = solve_discrete_weights(corners(), b, PriorMatrix::zero(3), 3.0, which);
    CHECK(s.converged);
    CHECK(s.gap <= 1e-7 * std::max(std::abs(s.criterion), 1.0));
    CHECK(s.total == doctest::Approx(3.0).epsilon(1e-9));
    if (which == Criterion::D) {
      for (int i = 0; i < 4; ++i) CHECK(std::abs(s.weights[i] - 0.75) <= 1e-4);
    } else {
      // A-optimal weights are not uniform; reference from an independent Nelder-Mead run at k = 4.
      CHECK(s.criterion == doctest::Approx(2.6509490250701577 * 4.0 / 3.0).epsilon(1e-7));
      CHECK(std::abs(s.weights[0] - 0.75 * 1.42396244) <= 1e-4);
      CHECK(std::abs(s.weights[1] - 0.75 * 0.90059290) <= 1e-4);
      CHECK(std::abs(s.weights[2] - 0.75 * 0.90059290) <= 1e-4);
      CHECK(std::abs(s.weights[3] - 0.75 * 0.77485176) <= 1e-4);
    }
  }
}

TEST_CASE("single point takes the whole budget") {
  PointSet one(1, 2);
  one << 0.3, 0.6;
  WeightSolution s =
      solve_discrete_weights(one, Basis::monomials(2, 1), PriorMatrix::scaled_identity(3, 1.0), 5.0, Criterion::D);
  CHECK(s.weights[0] == doctest::Approx(5.0));
}

TEST_CASE("Frank-Wolfe solution is within the gap of a dense simplex search") {
  Rng rng(41);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 6; ++t) {
    const int l = t < 3 ? 3 : 4;
    const int steps = l == 3 ? 1000 : 100;
    PointSet pts(l, 1);
    for (int i = 0; i < l; ++i) pts(i, 0) = u(rng);
    const Basis b = Basis::monomials(1, t % 2 == 0 ? 1 : 2);
    const PriorMatrix prior = PriorMatrix::scaled_identity(b.size(), t % 3 == 0 ? 0.0 : 0.05);
    const double k = 2.0 + t % 3;
    const Criterion which = t % 2 ? Criterion::A : Criterion::D;
    WeightSolution s = solve_discrete_weights(pts, b, prior, k, which);
    CHECK(s.converged);
    CHECK((s.weights.array() >= 0.0).all());
    CHECK(s.total == doctest::Approx(k).epsilon(1e-9));
    const double grid = simplex_grid_min(pts, b, prior, k, which, steps);
    CHECK(s.criterion <= grid + 1e-12);
    CHECK(s.criterion >= grid - s.gap - 1e-3 * std::abs(grid));
    CHECK(objective(pts, b, prior, s.weights, which) == doctest::Approx(s.criterion).epsilon(1e-10));
  }
}

TEST_CASE("objective trace is nonincreasing for both variants") {
  Rng rng(42);
  PointSet pts = builtin::unit_cube(2)->sample_uniform(30, rng);
  Basis b = Basis::monomials(2, 2);
  for (bool away : {true, false}) {
    FrankWolfeOptions opts;
    opts.away_steps = away;
    opts.record_objective = true;
    opts.max_iter = 2000;
    WeightSolution s = solve_discrete_weights(pts, b, PriorMatrix::zero(6), 8.0, Criterion::D, opts);
    REQUIRE(s.objective_trace.size() >= 2);
    for (std::size_t i = 1; i < s.objective_trace.size(); ++i) CHECK(s.objective_trace[i] <= s.objective_trace[i - 1] + 1e-12 * std::abs(s.objective_trace[i - 1]));
    CHECK(s.gap >= 0.0);
  }
}

TEST_CASE("objective is convex along segments") {
  Rng rng(43);
  std::uniform_real_distribution<double> u;
  PointSet pts = builtin::unit_cube(2)->sample_uniform(12, rng);
  Basis b = Basis::monomials(2, 2);
  PriorMatrix prior = PriorMatrix::scaled_identity(6, 1e-3);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd w1(12), w2(12);
    for (int i = 0; i < 12; ++i) w1[i] = u(rng), w2[i] = u(rng);
    w1 *= 5.0 / w1.sum();
    w2 *= 5.0 / w2.sum();
    for (Criterion which : {Criterion::A, Criterion::D}) {
      const double mid = objective(pts, b, prior, 0.5 * (w1 + w2), which);
      const double avg = 0.5 * (objective(pts, b, prior, w1, which) + objective(pts, b, prior, w2, which));
      CHECK(mid <= avg + 1e-10);
    }
  }
}

TEST_CASE("singular start with zero prior recovers") {
  // two coincident points and one distinct: uniform start is nonsingular, the optimum drops nothing
  PointSet pts(3, 1);
  pts << 0.0, 0.0, 1.0;
  WeightSolution s = solve_discrete_weights(pts, Basis::monomials(1, 1), PriorMatrix::zero(2), 2.0, Criterion::D);
  CHECK(s.converged);
  CHECK(s.weights[0] + s.weights[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.weights[2] == doctest::Approx(1.0).epsilon(1e-6));

  PointSet same(2, 1);
  same << 0.5, 0.5;
  CHECK_THROWS(solve_discrete_weights(same, Basis::monomials(1, 1), PriorMatrix::zero(2), 2.0, Criterion::D));
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
  auto [x, w] = gauss_legendre(8);
  CHECK(w.sum() == doctest::Approx(2.0).epsilon(1e-14));
  for (int deg = 0; deg <= 15; ++deg) {
    double q = 0.0;
    for (int i = 0; i < 8; ++i) q += w[i] * std::pow(x[i], deg);
    const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
    CHECK(q == doctest::Approx(exact).epsilon(1e-13));
  }
}

TEST_CASE("density family: single uniform component") {
  auto square = std::shared_ptr<const Space>(builtin::unit_cube(2));
  Basis b = Basis::monomials(2, 1);
  DensityFamily fam = make_density_family(square, b, {{"one", [](const auto&) { return 1.0; }}});
  REQUIRE(fam.components.size() == 1);
  CHECK(fam.components[0].mass == doctest::Approx(1.0).epsilon(1e-12));
  WeightSolution s = solve_density_weights(fam, PriorMatrix::zero(3), 7.0, Criterion::D);
  CHECK(s.weights[0] == doctest::Approx(7.0));
  auto mix = density_from_weights(fam, s.weights);
  CHECK(mix->mass() == doctest::Approx(7.0));
  Rng rng(44);
  Gramian g = mix->gramian(b, {}, rng);
  CHECK(g.matrix.isApprox(closed_form_box_gramian(b, square->bounding_box(), 7.0), 1e-12));
  std::vector<double> xs;
  for (int i = 0; i < 20000; ++i) xs.push_back(mix->draw(rng)[0]);
  CHECK(testutil::ks_statistic(xs, [](double x) { return std::clamp(x, 0.0, 1.0); }) < testutil::ks_critical(1e-3, 20000));
}

TEST_CASE("density family: identical components") {
  auto line = std::shared_ptr<const Space>(builtin::unit_cube(1));
  Basis b = Basis::monomials(1, 1);
  auto g = [](const Eigen::Ref<const Eigen::VectorXd>& x) { return 1.0 + x[0]; };
  DensityFamily fam = make_density_family(line, b, {{"a", g}, {"b", g}});
  WeightSolution s = solve_density_weights(fam, PriorMatrix::zero(2), 3.0, Criterion::D);
  CHECK(s.converged);
  CHECK((s.weights.array() >= 0.0).all());
  CHECK(s.weights.sum() * 1.5 == doctest::Approx(3.0));
  CHECK(s.gap <= 1e-7 * std::max(std::abs(s.criterion), 1.0));
}

TEST_CASE("x and 1-x mix to the uniform density") {
  auto line = std::shared_ptr<const Space>(builtin::unit_cube(1));
  Basis b = Basis::monomials(1, 1);
  DensityFamily fam = make_density_family(
      line, b, {{"x", [](const auto& x) { return x[0]; }}, {"1-x", [](const auto& x) { return 1.0 - x[0]; }}});
  auto mix = density_from_weights(fam, Eigen::Vector2d(2.0, 2.0));
  for (double x : {0.0, 0.2, 0.5, 0.9, 1.0}) CHECK(mix->density(Eigen::VectorXd::Constant(1, x)) == doctest::Approx(2.0));
  Rng rng(45);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(mix->draw(rng)[0]);
  CHECK(testutil::ks_statistic(xs, [](double x) { return std::clamp(x, 0.0, 1.0); }) < testutil::ks_critical(1e-3, 100000));
}

TEST_CASE("mixture samples follow the numerically integrated CDF") {
  auto line = std::shared_ptr<const Space>(builtin::unit_cube(1));
  Basis b = Basis::monomials(1, 1);
  DensityFamily fam = make_density_family(
      line, b,
      {{"x^4", [](const auto& x) { return std::pow(x[0], 4); }},
       {"bump", [](const auto& x) { return std::exp(-50.0 * (x[0] - 0.3) * (x[0] - 0.3)); }}});
  auto mix = density_from_weights(fam, Eigen::Vector2d(1.0, 2.0));
  // trapezoid CDF on a fine grid
  const int grid = 20000;
  std::vector<double> cdf(grid + 1, 0.0);
  double prev = mix->density(Eigen::VectorXd::Zero(1));
  for (int i = 1; i <= grid; ++i) {
    const double f = mix->density(Eigen::VectorXd::Constant(1, double(i) / grid));
    cdf[i] = cdf[i - 1] + 0.5 * (prev + f) / grid;
    prev = f;
  }
  for (double& c : cdf) c /= cdf.back();
  auto F = [&](double x) {
    const double pos = std::clamp(x, 0.0, 1.0) * grid;
    const int i = std::min(static_cast<int>(pos), grid - 1);
    return cdf[i] + (pos - i) * (cdf[i + 1] - cdf[i]);
  };
  Rng rng(46);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(mix->draw(rng)[0]);
  CHECK(testutil::ks_statistic(xs, F) < testutil::ks_critical(1e-3, 100000));
}

TEST_CASE("corner family: optimized density is largest at the vertices") {
  auto square = std::shared_ptr<const Space>(builtin::unit_cube(2));
  Basis b = Basis::normalized_monomials(*square, 3, 200000);
  DensityFamily fam = polynomial_corner_family(square, b, 4);
  CHECK(fam.components.size() == 30);
  for (const auto& c : fam.components) {
    CHECK(c.mass > 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.gramian);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10 * es.eigenvalues().maxCoeff());
  }
  WeightSolution s = solve_density_weights(fam, PriorMatrix::scaled_identity(10, 1e-4), 10.0, Criterion::D);
  CHECK(s.converged);
  auto mix = density_from_weights(fam, s.weights);
  const double center = mix->density(Eigen::Vector2d(0.5, 0.5));
  for (const auto& v : {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 1)})
    CHECK(mix->density(v) > 5.0 * center);
  // uniform density of the same mass is worse
  CHECK(s.criterion < -std::log((closed_form_box_gramian(b, square->bounding_box(), 10.0) +
                                 1e-4 * Eigen::MatrixXd::Identity(10, 10)).determinant()));
}

TEST_CASE("json serialization") {
  WeightSolution s = solve_discrete_weights(corners(), Basis::monomials(2, 1), PriorMatrix::zero(3), 3.0, Criterion::D);
  nlohmann::json j = to_json(s);
  for (const char* key : {"weights", "total", "criterion", "gap", "iterations"}) CHECK(j.contains(key));
  CHECK(j["weights"].size() == 4);
  CHECK(j["total"].get<double>() == doctest::Approx(3.0));
}

}
