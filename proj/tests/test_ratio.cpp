#include <catch2/catch_amalgamated.hpp>

#include "dsaforge/oracles.hpp"
#include "dsaforge/ratio.hpp"

using namespace dsaforge;
using Catch::Matchers::WithinAbs;

TEST_CASE("c_rho: formula values") {
  REQUIRE(c_rho(0.5).c_rho == 0.0);
  REQUIRE_THAT(c_rho(0.05).c_rho, WithinAbs(std::log(19.0), 1e-12));
  REQUIRE_THAT(c_rho(0.05).c_rho, WithinAbs(2.944438979166440, 1e-9));
  REQUIRE_THAT(c_rho(0.01).c_rho, WithinAbs(std::log(99.0), 1e-12));
  REQUIRE_THAT(c_rho(0.01).c_rho, WithinAbs(4.595119850134589, 1e-9));
}

TEST_CASE("c_rho: domain errors") {
  REQUIRE_THROWS_AS(c_rho(0.0), ConfigError);
  REQUIRE_THROWS_AS(c_rho(1.0), ConfigError);
  REQUIRE_THROWS_AS(c_rho(-0.1), ConfigError);
}

TEST_CASE("log_ratio: constant and linear test doubles") {
  const auto q = Quadrature::gauss_legendre(16);
  const std::vector<double> x{0.3};
  const double c = 1.7;
  REQUIRE_THAT(log_ratio_fn([&](std::span<const double>, double) { return c; }, x, q),
               WithinAbs(-c, 1e-14));
  REQUIRE_THAT(log_ratio_fn([](std::span<const double>, double tau) { return tau; }, x, q),
               WithinAbs(-0.5, 1e-13));
}

TEST_CASE("log_ratio: dimension check against the network input") {
  Rng rng(5);
  auto net = TimeScoreNet::init(2, {4}, Activation::Tanh, rng);
  const auto q = Quadrature::gauss_legendre(8);
  const std::vector<double> bad{1.0, 2.0, 3.0};
  REQUIRE_THROWS_AS(log_ratio(net, bad, q), ConfigError);
}

TEST_CASE("poisoned_posterior: spec examples") {
  REQUIRE_THAT(poisoned_posterior(0.2, 0.0, c_rho(0.5)), WithinAbs(0.6, 1e-15));
  REQUIRE(poisoned_posterior(1.0, -5.0, c_rho(0.3)) == 1.0);
  REQUIRE(poisoned_posterior(1.0, 5.0, c_rho(0.3)) == 1.0);
  // mu = 0.2, r = 19, rho = 0.05: 0.2 + 0.8 sigma(-2 log 19) = 0.2 + 0.8/362
  const double want = 0.2 + 0.8 / 362.0;
  REQUIRE_THAT(poisoned_posterior(0.2, std::log(19.0), c_rho(0.05)), WithinAbs(want, 1e-12));
}

TEST_CASE("poisoned_posterior: bounded between mu_clean and 1") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform();
    const double lr = rng.uniform(-10.0, 10.0);
    const double rho = rng.uniform(0.01, 0.99);
    const double p = poisoned_posterior(mu, lr, c_rho(rho));
    REQUIRE(p >= mu);
    REQUIRE(p <= 1.0);
  }
}

TEST_CASE("poisoned_posterior: strictly monotone in log_r and mu_clean") {
  const auto mc = c_rho(0.1);
  double prev = poisoned_posterior(0.3, -8.0, mc);
  for (double lr = -7.0; lr <= 8.0; lr += 0.5) {
    const double cur = poisoned_posterior(0.3, lr, mc);
    REQUIRE(cur < prev);  // decreasing in log_r
    prev = cur;
  }
  prev = poisoned_posterior(0.0, 1.0, mc);
  for (double mu = 0.05; mu < 1.0; mu += 0.05) {
    const double cur = poisoned_posterior(mu, 1.0, mc);
    REQUIRE(cur > prev);  // increasing in mu_clean below 1
    prev = cur;
  }
}

TEST_CASE("sigmoid identity: Bayes quotient equals the sigmoid form") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + trial % 3;
    GaussianMixtureSpec spec;
    const int ncomp = 1 + trial % 3;
    std::vector<double> w(ncomp);
    double ws = 0.0;
    for (auto& v : w) ws += (v = rng.uniform(0.2, 1.0));
    for (int j = 0; j < ncomp; ++j) {
      GmComponent c;
      c.weight = w[j] / ws;
      c.label = j % 2;
      for (int k = 0; k < d; ++k) {
        c.mean.push_back(rng.uniform(-2.0, 2.0));
        c.cov.push_back(rng.uniform(0.2, 2.0));
      }
      spec.components.push_back(c);
    }
    ShiftTrigger trig;
    for (int k = 0; k < d; ++k) trig.c.push_back(rng.uniform(-1.5, 1.5));
    const double rho = rng.uniform(0.01, 0.5);
    const int t = trial % 2;
    std::vector<double> x(d);
    for (auto& v : x) v = rng.uniform(-3.0, 3.0);

    const double direct = direct_poisoned_posterior(spec, trig, rho, t, x);
    const double mu_clean_t = gm_bayes_posterior(spec, x)[t];
    const double lr = shift_log_ratio(spec, trig, x);
    const double sig = poisoned_posterior(mu_clean_t, lr, c_rho(rho));
    REQUIRE_THAT(direct, WithinAbs(sig, 1e-12));

    // Dual identity: 1 - mu_poison = (1 - mu_clean) sigma(C_rho + log r).
    const double dual = (1.0 - mu_clean_t) * sigmoid(c_rho(rho).c_rho + lr);
    REQUIRE_THAT(1.0 - direct, WithinAbs(dual, 1e-12));
  }
}
