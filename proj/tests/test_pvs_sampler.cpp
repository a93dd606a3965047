#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "optdesign/oracle.hpp"
#include "optdesign/pvs_sampler.hpp"
#include "test_util.hpp"

using namespace optdesign;

namespace {

PointSet column(std::initializer_list<double> xs) {
  PointSet p(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) p(i++, 0) = x;
  return p;
}

PvsModel uniform_line_model(int degree, const PriorMatrix& prior, double mass) {
  auto line = std::shared_ptr<const Space>(builtin::unit_cube(1));
  auto nu = std::make_shared<UniformMeasure>(line, mass);
  Rng rng(0);
  return build_model(Basis::monomials(1, degree), prior, nu, GramianOptions{}, rng);
}

PvsModel f1_model(const PriorMatrix& prior) {
  auto nu = std::make_shared<AtomicMeasure>(column({0.0, 0.5, 1.0}), Eigen::Vector3d::Constant(2.0 / 3.0));
  Rng rng(0);
  return build_model(Basis::monomials(1, 1), prior, nu, GramianOptions{}, rng);
}

// Eigenvalues of a 2x2 matrix with real spectrum, from trace and determinant.
std::pair<double, double> eig2(const Eigen::Matrix2d& a) {
  const double t = a.trace(), d = a.determinant();
  const double r = std::sqrt(std::max(0.0, t * t / 4.0 - d));
  return {t / 2.0 - r, t / 2.0 + r};
}

}  // namespace

TEST_SUITE("pvs_sampler") {

TEST_CASE("eigenvalues with identity Gramian and prior") {
  // G = I for an orthonormal basis; emulate with a one-function constant basis and mass 1
  PvsModel m = uniform_line_model(0, PriorMatrix::scaled_identity(1, 1.0), 1.0);
  CHECK(m.eigenvalues[0] == doctest::Approx(0.5));
  CHECK(expected_cardinality(m) == doctest::Approx(1.5));
}

TEST_CASE("zero prior gives unit eigenvalues") {
  for (int deg = 0; deg <= 4; ++deg) {
    PvsModel m = uniform_line_model(deg, PriorMatrix::zero(deg + 1), 3.0);
    for (Eigen::Index i = 0; i < m.eigenvalues.size(); ++i) CHECK(std::abs(m.eigenvalues[i] - 1.0) <= 1e-10);
    CHECK(expected_cardinality(m) == doctest::Approx(3.0 + deg + 1));
  }
}

TEST_CASE("F1 eigenvalues match an independent 2x2 computation") {
  PvsModel m = f1_model(PriorMatrix::scaled_identity(2, 1.0));
  Eigen::Matrix2d g;
  g << 2.0, 1.0, 1.0, 5.0 / 6.0;
  // G^{1/2}(G+I)^{-1}G^{1/2} is similar to (G+I)^{-1}G
  Eigen::Matrix2d a = (g + Eigen::Matrix2d::Identity()).inverse() * g;
  auto [lo, hi] = eig2(a);
  std::vector<double> lam(m.eigenvalues.data(), m.eigenvalues.data() + 2);
  std::sort(lam.begin(), lam.end());
  CHECK(lam[0] == doctest::Approx(lo).epsilon(1e-12));
  CHECK(lam[1] == doctest::Approx(hi).epsilon(1e-12));
  CHECK(expected_cardinality(m) == doctest::Approx(2.0 + lo + hi).epsilon(1e-12));
  CHECK(m.eigenvalues.sum() == doctest::Approx(a.trace()).epsilon(1e-8));
}

TEST_CASE("psi is orthonormal under nu") {
  for (double c : {0.0, 0.1, 1.0}) {
    PvsModel m = uniform_line_model(3, PriorMatrix::scaled_identity(4, c), 2.0);
    Eigen::MatrixXd gpsi = m.coefficients.transpose() * m.gramian.matrix * m.coefficients;
    CHECK((gpsi - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(m.eigenvalues.sum() ==
          doctest::Approx((m.gramian.matrix + m.prior.matrix()).inverse().cwiseProduct(m.gramian.matrix).sum())
              .epsilon(1e-8));
  }
}

TEST_CASE("split law examples") {
  Eigen::VectorXd law = conditional_split_law(Eigen::Vector2d(1.0, 1.0), 3.0, 2);
  CHECK(law.size() == 3);
  CHECK(law[2] == doctest::Approx(1.0));
  law = conditional_split_law(Eigen::VectorXd::Constant(1, 0.5), 1.0, 1);
  CHECK(law[0] == doctest::Approx(0.5));
  CHECK(law[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(conditional_split_law(Eigen::Vector2d(1.0, 1.0), 3.0, 1), SamplingError);
  CHECK_THROWS_AS(conditional_split_law(Eigen::Vector2d(0.5, 0.5), 0.0, 3), SamplingError);
}

TEST_CASE("split law agrees with brute-force enumeration") {
  Rng rng(21);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 50; ++t) {
    const int p = 1 + t % 4;
    Eigen::VectorXd lam(p);
    for (int i = 0; i < p; ++i) lam[i] = u(rng);
    const double mass = 0.5 + 4.0 * u(rng);
    const int k = t % 6;
    std::vector<double> w(std::min(p, k) + 1, 0.0);
    for (int mask = 0; mask < (1 << p); ++mask) {
      int j = 0;
      double pr = 1.0;
      for (int i = 0; i < p; ++i) {
        const bool on = (mask >> i) & 1;
        j += on;
        pr *= on ? lam[i] : 1.0 - lam[i];
      }
      if (j > k) continue;
      const int n = k - j;
      w[j] += pr * std::exp(-mass) * std::pow(mass, n) / std::tgamma(n + 1.0);
    }
    double total = 0.0;
    for (double x : w) total += x;
    Eigen::VectorXd law = conditional_split_law(lam, mass, k);
    for (std::size_t j = 0; j < w.size(); ++j) CHECK(law[j] == doctest::Approx(w[j] / total).epsilon(1e-12));
  }
}

TEST_CASE("conditional sampler returns exactly k points with the expected provenance") {
  PvsModel m = uniform_line_model(2, PriorMatrix::zero(3), 5.0);
  Rng rng(22);
  for (int t = 0; t < 500; ++t) {
    PointSample s = sample_pvs_conditional(m, 5, rng);
    REQUIRE(s.size() == 5);
    CHECK(std::count(s.provenance.begin(), s.provenance.end(), Provenance::dpp) == 3);
    for (int i = 0; i < 5; ++i) CHECK((s.points(i, 0) >= 0.0 && s.points(i, 0) <= 1.0));
  }
  CHECK_THROWS_AS(sample_pvs_conditional(m, 2, rng), SamplingError);

  PvsModel reg = uniform_line_model(2, PriorMatrix::scaled_identity(3, 0.5), 4.0);
  for (int k = 0; k <= 7; ++k) CHECK(sample_pvs_conditional(reg, k, rng).size() == k);
}

TEST_CASE("projection DPP with constant kernel is uniform") {
  PvsModel m = uniform_line_model(0, PriorMatrix::zero(1), 1.0);
  Rng rng(23);
  const int n = 100000;
  std::vector<double> xs;
  xs.reserve(n);
  const int active[] = {0};
  for (int i = 0; i < n; ++i) xs.push_back(sample_projection_dpp(m, active, rng).points(0, 0));
  const double d = testutil::ks_statistic(xs, [](double x) { return std::clamp(x, 0.0, 1.0); });
  CHECK(d < testutil::ks_critical(1e-3, n));
}

TEST_CASE("projection DPP with linear kernel") {
  // psi spans {1, x}; one point from the rank-2 projection has density K(x,x)/2 = 2 - 6x + 6x^2
  PvsModel m = uniform_line_model(1, PriorMatrix::zero(2), 1.0);
  Rng rng(24);
  const int n = 50000;
  std::vector<double> first;
  const int active[] = {0, 1};
  SamplerStats stats;
  for (int i = 0; i < n; ++i) {
    PointSample s = sample_projection_dpp(m, active, rng, {}, &stats);
    REQUIRE(s.size() == 2);
    first.push_back(s.points(0, 0));
  }
  const double d = testutil::ks_statistic(first, [](double x) { return 2.0 * x - 3.0 * x * x + 2.0 * x * x * x; });
  CHECK(d < testutil::ks_critical(1e-3, n));
  CHECK(stats.proposals >= 2 * n);
}

TEST_CASE("rejection budget is enforced") {
  PvsModel m = uniform_line_model(3, PriorMatrix::zero(4), 1.0);
  SamplerOptions opts;
  opts.max_rejections = 1;
  Rng rng(25);
  const int active[] = {0, 1, 2, 3};
  CHECK_THROWS_AS(
      [&] {
        for (int t = 0; t < 100; ++t) sample_projection_dpp(m, active, rng, opts);
      }(),
      SamplingError);
}

TEST_CASE("F1 discrete frequencies match the exact law") {
  Fixture f = fixture_f1();
  ExactDistribution exact = enumerate_conditional_pvs(f.atoms, f.weights, f.basis, f.prior, 2);
  std::map<std::vector<int>, double> expected;
  for (const auto& ms : exact.multisets()) expected[ms.atoms] = ms.probability;

  DiscretePvsSampler sampler(f.atoms, f.weights, f.basis, f.prior);
  Rng rng(26);
  const int n = 100000;
  std::map<std::vector<int>, double> counts;
  for (int i = 0; i < n; ++i) {
    PointSample s = sampler.sample_conditional(2, rng);
    REQUIRE(s.atom_indices.size() == 2);
    std::vector<int> key = s.atom_indices;
    std::sort(key.begin(), key.end());
    counts[key] += 1.0;
  }
  for (const auto& [key, c] : counts) CHECK(expected.count(key) == 1);
  for (const auto& [key, prob] : expected) {
    const double freq = counts[key] / n;
    const double se = std::sqrt(prob * (1.0 - prob) / n);
    CHECK(std::abs(freq - prob) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("discrete sampler edge cases") {
  Rng rng(27);
  PointSet one = column({0.3});
  PointSample s = sample_pvs_discrete(one, Eigen::VectorXd::Constant(1, 3.0), Basis::monomials(1, 0),
                                      PriorMatrix::scaled_identity(1, 1.0), 3, rng);
  REQUIRE(s.size() == 3);
  CHECK((s.points.array() == 0.3).all());

  // weight only on two atoms in general position, Lambda = 0, k = p
  PointSet atoms = column({0.0, 0.2, 0.7, 1.0});
  Eigen::Vector4d w(0.0, 1.0, 0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    PointSample d = sample_pvs_discrete(atoms, w, Basis::monomials(1, 1), PriorMatrix::zero(2), 2, rng);
    std::vector<int> idx = d.atom_indices;
    std::sort(idx.begin(), idx.end());
    CHECK(idx == std::vector<int>{1, 3});
  }
  CHECK_THROWS(sample_pvs_discrete(atoms, Eigen::Vector4d::Zero(), Basis::monomials(1, 1), PriorMatrix::zero(2), 2, rng));
}

TEST_CASE("mean cardinality of the unconditional sampler") {
  PvsModel m = uniform_line_model(2, PriorMatrix::scaled_identity(3, 1.0), 4.0);
  Rng rng(28);
  std::vector<double> sizes;
  for (int i = 0; i < 20000; ++i) sizes.push_back(sample_pvs(m, rng).size());
  auto mom = testutil::moments(sizes);
  CHECK(std::abs(mom.mean - expected_cardinality(m)) <= 3.0 * mom.se);
  CHECK(expected_cardinality(m) >= 4.0);
  CHECK(expected_cardinality(m) <= 4.0 + 3.0);
}

TEST_CASE("unbiased inverse information under the unconditional law") {
  PvsModel m = f1_model(PriorMatrix::scaled_identity(2, 1.0));
  Rng rng(29);
  const int n = 20000;
  std::vector<std::vector<double>> entries(4);
  std::vector<double> invdet;
  for (int i = 0; i < n; ++i) {
    PointSample s = sample_pvs(m, rng);
    Eigen::MatrixXd inv = information_matrix(m.basis, s.points, m.prior).inverse();
    for (int e = 0; e < 4; ++e) entries[e].push_back(inv(e / 2, e % 2));
    invdet.push_back(inv.determinant());
  }
  Eigen::MatrixXd target = (m.gramian.matrix + m.prior.matrix()).inverse();
  for (int e = 0; e < 4; ++e) {
    auto mom = testutil::moments(entries[e]);
    CHECK(std::abs(mom.mean - target(e / 2, e % 2)) <= 3.0 * mom.se);
  }
  auto mom = testutil::moments(invdet);
  CHECK(std::abs(mom.mean - target.determinant()) <= 3.0 * mom.se);
}

TEST_CASE("conditional D equality on a continuous measure") {
  // (1, x) on [0,1], nu = 4 * uniform, Lambda = 0, k = 4: the bound equals 1
  PvsModel m = uniform_line_model(1, PriorMatrix::zero(2), 4.0);
  const double rhs = pvs_d_bound(m.gramian.matrix, m.prior, 4);
  CHECK(rhs == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(30);
  std::vector<double> vals;
  for (int i = 0; i < 100000; ++i) {
    PointSample s = sample_pvs_conditional(m, 4, rng);
    vals.push_back(criterion(information_matrix(m.basis, s.points, m.prior), Criterion::D));
  }
  auto mom = testutil::moments(vals);
  CHECK(std::abs(mom.mean - rhs) <= 3.0 * mom.se);
}

TEST_CASE("sampling is deterministic given the seed") {
  PvsModel m = uniform_line_model(2, PriorMatrix::scaled_identity(3, 0.1), 3.0);
  Rng a(31), b(31);
  for (int i = 0; i < 50; ++i) CHECK(sample_pvs(m, a).points == sample_pvs(m, b).points);
}

}
