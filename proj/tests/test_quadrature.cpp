#include <catch2/catch_amalgamated.hpp>

#include "dsaforge/quadrature.hpp"

using namespace dsaforge;
using Catch::Matchers::WithinAbs;

TEST_CASE("gauss_legendre: structural invariants") {
  for (int n : {1, 2, 8, 16, 32}) {
    const auto q = Quadrature::gauss_legendre(n);
    REQUIRE_NOTHROW(q.check());
    double ws = 0.0;
    for (double w : q.weights) ws += w;
    REQUIRE_THAT(ws, WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("gauss_legendre: integrates polynomials up to degree 2n-1 exactly") {
  const auto q = Quadrature::gauss_legendre(16);
  for (int k = 0; k <= 31; ++k) {
    const double got = q.integrate([&](double x) { return std::pow(x, k); });
    REQUIRE_THAT(got, WithinAbs(1.0 / (k + 1), 1e-12));
  }
}

TEST_CASE("gauss_legendre: degree beyond exactness is merely approximate") {
  const auto q = Quadrature::gauss_legendre(2);
  const double got = q.integrate([](double x) { return std::pow(x, 4); });
  REQUIRE(std::abs(got - 0.2) > 1e-6);  // not exact, as expected for 2 nodes
}

TEST_CASE("gauss_legendre: invalid node count rejected") {
  REQUIRE_THROWS_AS(Quadrature::gauss_legendre(0), ConfigError);
}

TEST_CASE("quadrature: 16-node rule avoids the schedule floor region") {
  const auto q = Quadrature::gauss_legendre(16);
  // Floor binds only for tau(1-tau) < 1e-4, i.e. tau < 1.0002e-4 roughly.
  REQUIRE(q.nodes.front() > 1e-3);
  REQUIRE(q.nodes.back() < 1.0 - 1e-3);
}
