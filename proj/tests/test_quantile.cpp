#include "dart/quantile.hpp"
#include "oracles.hpp"

#include <doctest.h>

using dart::PiecewiseDistribution;
using Dist = PiecewiseDistribution<double>;

namespace {

Dist make(std::initializer_list<double> m) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(m.size()));
  Eigen::Index i = 0;
  for (double x : m) v[i++] = x;
  return Dist(v);
}

}  // namespace

TEST_CASE("cdf of a uniform histogram is the identity") {
  CHECK(dart::cdf_eval(make({1, 1, 1, 1}), 2.5) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("cdf inside a dense first bin") {
  CHECK(dart::cdf_eval(make({3, 1}), 0.5) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("cdf at the right end is the total mass") {
  const Dist d = make({0.2, 4.0, 1.3});
  CHECK(dart::cdf_eval(d, 3.0) == doctest::Approx(5.5).epsilon(1e-15));
  CHECK(dart::cdf_eval(d, 0.0) == 0.0);
  CHECK_THROWS_AS(dart::cdf_eval(d, 3.5), std::invalid_argument);
  CHECK_THROWS_AS(dart::cdf_eval(d, -0.1), std::invalid_argument);
}

TEST_CASE("distribution rejects bad masses") {
  CHECK_THROWS_AS(make({1, -1}), std::invalid_argument);
  CHECK_THROWS_AS(make({0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(make({1, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(Dist(Eigen::VectorXd()), std::invalid_argument);
}

TEST_CASE("uniform histogram quantiles sit on integers") {
  const auto q = dart::uniform_quantiles(make({1, 1, 1, 1}), 4);
  REQUIRE(q.points.size() == 3);
  CHECK(q.points[0] == 1.0);
  CHECK(q.points[1] == 2.0);
  CHECK(q.points[2] == 3.0);
}

TEST_CASE("hand-inverted quantiles") {
  CHECK(dart::uniform_quantiles(make({3, 1}), 2).points[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(dart::uniform_quantiles(make({1, 3}), 2).points[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("quantile argument checks") {
  CHECK_THROWS_AS(dart::uniform_quantiles(make({1, 1}), 0), std::invalid_argument);
  CHECK(dart::uniform_quantiles(make({1, 1}), 1).points.size() == 0);
}

TEST_CASE("quantiles agree with a bisection oracle, are increasing and hit k M / K") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(2, 40);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const int segments = std::uniform_int_distribution<int>(2, n)(rng);
    const Eigen::VectorXd m = oracle::random_matrix(n, 1, rng, 0.1, 10.0);
    const Dist d(m);
    const auto q = dart::uniform_quantiles(d, segments);
    const std::vector<double> mv(m.data(), m.data() + n);
    for (int k = 1; k < segments; ++k) {
      const double t = k * d.total() / segments;
      CHECK(dart::cdf_eval(d, q.points[k - 1]) == doctest::Approx(t).epsilon(1e-12));
      CHECK(std::abs(q.points[k - 1] - oracle::quantile_bisect(mv, t)) < 1e-10);
      if (k > 1) CHECK(q.points[k - 1] > q.points[k - 2]);
    }
  }
}

TEST_CASE("scaling all masses leaves quantiles unchanged") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd m = oracle::random_matrix(17, 1, rng, 0.1, 10.0);
  const auto a = dart::uniform_quantiles(Dist(m), 6);
  const auto b = dart::uniform_quantiles(Dist(m * 37.5), 6);
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a tie on a cumulative edge lands at the start of the next bin") {
  const auto q = dart::uniform_quantiles(make({1, 1, 2}), 2);
  CHECK(q.points[0] == 2.0);
  CHECK(q.bins[0] == 2);
  CHECK(q.boundary_points.size() == 1);
}

TEST_CASE("jacobian of [3, 1] with K = 2") {
  const auto jac = dart::quantile_jacobian(make({3, 1}), 2);
  CHECK(jac.dense(0, 0) == doctest::Approx(-1.0 / 18.0).epsilon(1e-12));
  CHECK(jac.dense(0, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK_FALSE(jac.boundary_subgradient());
}

TEST_CASE("jacobian entries right of the containing bin act through the total only") {
  // q_2 = 2 for four unit masses sits on an edge; the right-hand segment is bin 2.
  const auto jac = dart::quantile_jacobian(make({1, 1, 1, 1}), 4);
  CHECK(jac.dense(1, 3) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(jac.boundary_subgradient());
  // Right-hand derivative by a one-sided difference.
  Eigen::VectorXd m = Eigen::VectorXd::Ones(4);
  const double h = 1e-7;
  m[3] += h;
  const double up = dart::uniform_quantiles(Dist(m), 4).points[1];
  CHECK((up - 2.0) / h == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("jacobian matches central differences on random distributions") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 20)(rng);
    const int segments = std::uniform_int_distribution<int>(2, n)(rng);
    Eigen::VectorXd m = oracle::random_matrix(n, 1, rng, 0.1, 10.0);
    const auto q = dart::uniform_quantiles(Dist(m), segments);
    if ((q.points.array() - q.points.array().round()).abs().minCoeff() < 1e-4) continue;
    const auto jac = dart::quantile_jacobian(Dist(m), segments);
    for (int k = 0; k < segments - 1; ++k)
      for (int i = 0; i < n; ++i) {
        const double fd = oracle::central_diff([&] { return dart::uniform_quantiles(Dist(m), segments).points[k]; }, m[i]);
        CHECK(oracle::rel_error(jac.dense(k, i), fd) < 1e-5);
        ++checked;
      }
  }
  CHECK(checked > 100);
}

TEST_CASE("with the total held fixed, bins right of the containing bin have no effect") {
  std::mt19937_64 rng(8);
  Eigen::VectorXd m = oracle::random_matrix(10, 1, rng, 0.1, 10.0);
  m /= m.sum();
  const int segments = 4;
  const auto q = dart::uniform_quantiles(Dist(m), segments);
  const auto jac = dart::quantile_jacobian(Dist(m), segments);
  for (int k = 0; k < segments - 1; ++k) {
    const auto j = q.bins[static_cast<std::size_t>(k)];
    const double target = static_cast<double>(k + 1) / segments;
    for (Eigen::Index i = j + 1; i < m.size(); ++i) {
      // Fixed-target oracle: the bisection quantile at t = (k+1)/K ignores bin i entirely.
      std::vector<double> mv(m.data(), m.data() + m.size());
      const double fd = oracle::central_diff([&] { return oracle::quantile_bisect(mv, target); }, mv[static_cast<std::size_t>(i)]);
      CHECK(std::abs(fd) < 1e-6);
      // The library entry is then exactly the d t_k / d m_i channel.
      CHECK(jac.dense(k, i) == doctest::Approx(target / m[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("vector-jacobian product") {
  std::mt19937_64 rng(21);
  const Eigen::VectorXd m = oracle::random_matrix(8, 1, rng, 0.1, 10.0);
  const Dist d(m);
  const auto jac = dart::quantile_jacobian(d, 4);

  SUBCASE("unit upstream selects a row") {
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
      e[k] = 1;
      CHECK((dart::quantile_vjp<double>(d, 4, e) - jac.dense.row(k).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("zero upstream") { CHECK(dart::quantile_vjp<double>(d, 4, Eigen::VectorXd::Zero(3)).isZero(0.0)); }
  SUBCASE("random upstream matches the dense product") {
    const Eigen::VectorXd u = oracle::random_matrix(3, 1, rng, -1, 1);
    CHECK((dart::quantile_vjp<double>(d, 4, u) - jac.dense.transpose() * u).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("wrong upstream length") { CHECK_THROWS_AS(dart::quantile_vjp<double>(d, 4, Eigen::VectorXd::Zero(2)), std::invalid_argument); }
}

TEST_CASE("templated scalar: float distributions work") {
  Eigen::VectorXf m(3);
  m << 1.f, 2.f, 1.f;
  const auto q = dart::uniform_quantiles(PiecewiseDistribution<float>(m), 2);
  CHECK(q.points[0] == doctest::Approx(1.5f));
}
