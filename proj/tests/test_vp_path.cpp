#include <catch2/catch_amalgamated.hpp>

#include "dsaforge/vp_path.hpp"

using namespace dsaforge;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double gaussian_log_density(double x, double mu, double var) {
  return -0.5 * std::log(2.0 * 3.14159265358979323846 * var) - 0.5 * (x - mu) * (x - mu) / var;
}

// log N(x | mu_tau, k(tau) I) as a function of tau, for the FD oracle.
double path_log_density(const VpSchedule& s, const PathPoint& p, double tau) {
  const auto se = schedule_eval(s, tau);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    const double mu = se.alpha * p.x0[i] + (1.0 - se.alpha) * p.x1[i];
    acc += gaussian_log_density(p.x[i], mu, se.k);
  }
  return acc;
}

}  // namespace

TEST_CASE("schedule_eval: boundary and interior values") {
  VpSchedule s;
  const auto e0 = schedule_eval(s, 0.0);
  REQUIRE(e0.alpha == 1.0);
  REQUIRE(e0.k == 1e-4);  // floor binds where tau(1-tau)=0
  REQUIRE(e0.alpha_prime == -1.0);
  REQUIRE(e0.k_prime == 1.0);

  const auto eh = schedule_eval(s, 0.5);
  REQUIRE(eh.alpha == 0.5);
  REQUIRE(eh.k == 0.25);
  REQUIRE(eh.k_prime == 0.0);

  const auto eq = schedule_eval(s, 0.25);
  REQUIRE(eq.alpha == 0.75);
  REQUIRE(eq.k == 0.1875);
  REQUIRE(eq.alpha_prime == -1.0);
  REQUIRE(eq.k_prime == 0.5);
}

TEST_CASE("schedule_eval: tau outside [0,1] is a domain error") {
  VpSchedule s;
  REQUIRE_THROWS_AS(schedule_eval(s, -0.01), ConfigError);
  REQUIRE_THROWS_AS(schedule_eval(s, 1.01), ConfigError);
}

TEST_CASE("schedule_eval: floored k stays positive everywhere") {
  VpSchedule s;
  for (int i = 0; i <= 1000; ++i) {
    const double tau = i / 1000.0;
    REQUIRE(schedule_eval(s, tau).k >= s.k_floor);
  }
}

TEST_CASE("sample_path_point: endpoints are exact when the floor is lifted") {
  VpSchedule s{0.0};
  Rng rng(3);
  std::vector<double> x0{1.0, -2.0}, x1{3.0, 4.0};
  const auto p0 = sample_path_point(s, x0, x1, 0.0, rng);
  REQUIRE(p0.x == x0);
  const auto p1 = sample_path_point(s, x0, x1, 1.0, rng);
  REQUIRE(p1.x == x1);
}

TEST_CASE("sample_path_point: dimension mismatch is a configuration error") {
  VpSchedule s;
  Rng rng(1);
  std::vector<double> x0{1.0};
  std::vector<double> x1{1.0, 2.0};
  REQUIRE_THROWS_AS(sample_path_point(s, x0, x1, 0.5, rng), ConfigError);
}

TEST_CASE("sample_path_point: Monte Carlo moments at tau = 0.5") {
  VpSchedule s;
  Rng rng(1234);
  std::vector<double> x0{0.0}, x1{2.0};
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_path_point(s, x0, x1, 0.5, rng).x[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE_THAT(mean, WithinAbs(1.0, 3.0 * std::sqrt(0.25 / n)));
  REQUIRE_THAT(var, WithinRel(0.25, 0.05));
}

TEST_CASE("sample_path_point: variance matches k(tau) with equal endpoints") {
  VpSchedule s{0.0};
  Rng rng(99);
  std::vector<double> x0{1.5}, x1{1.5};
  for (double tau : {0.2, 0.7}) {
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = sample_path_point(s, x0, x1, tau, rng).x[0];
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    REQUIRE_THAT(var, WithinRel(tau * (1.0 - tau), 0.05));
  }
}

TEST_CASE("conditional_time_score: vanishing cases") {
  VpSchedule s;
  PathPoint p;
  p.x = p.x0 = p.x1 = {0.7};
  p.tau = 0.5;  // k'(0.5) = 0 and x = mu
  REQUIRE(conditional_time_score(s, p) == 0.0);

  p.tau = 0.25;  // -(1/2)(k'/k) = -(1/2)(0.5/0.1875) = -4/3
  REQUIRE_THAT(conditional_time_score(s, p), WithinAbs(-4.0 / 3.0, 1e-12));
}

TEST_CASE("conditional_time_score: x at the path mean reduces to -(d/2) k'/k") {
  VpSchedule s;
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 3;
    PathPoint p;
    p.x0.resize(d);
    p.x1.resize(d);
    for (int i = 0; i < d; ++i) {
      p.x0[i] = rng.normal();
      p.x1[i] = rng.normal();
    }
    p.tau = rng.uniform();
    const auto se = schedule_eval(s, p.tau);
    p.x.resize(d);
    for (int i = 0; i < d; ++i) p.x[i] = se.alpha * p.x0[i] + (1.0 - se.alpha) * p.x1[i];
    const double want = -0.5 * d * se.k_prime / se.k;
    REQUIRE_THAT(conditional_time_score(s, p), WithinAbs(want, 1e-10 + 1e-10 * std::abs(want)));
  }
}

TEST_CASE("conditional_time_score: matches FD in tau of the Gaussian log density") {
  VpSchedule s;
  Rng rng(17);
  const double h = 1e-6;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2;
    PathPoint p;
    p.x0.resize(d);
    p.x1.resize(d);
    p.x.resize(d);
    for (int i = 0; i < d; ++i) {
      p.x0[i] = rng.normal();
      p.x1[i] = rng.normal() + 1.0;
      p.x[i] = rng.normal();
    }
    p.tau = rng.uniform(0.05, 0.95);
    const double fd =
        (path_log_density(s, p, p.tau + h) - path_log_density(s, p, p.tau - h)) / (2.0 * h);
    const double got = conditional_time_score(s, p);
    REQUIRE_THAT(got, WithinRel(fd, 1e-4));
  }
}

TEST_CASE("tsn_weight: direct evaluations") {
  VpSchedule s;
  REQUIRE_THAT(tsn_weight(s, 0.5, 2), WithinAbs(0.0625, 1e-15));
  // floor-bound value at tau = 0: k = 1e-4
  const double k = 1e-4;
  REQUIRE_THAT(tsn_weight(s, 0.0, 2), WithinAbs(k * k / (2.0 + k * 2.0), 1e-18));
  REQUIRE(tsn_weight(s, 0.0, 2) < 1e-8);
}

TEST_CASE("tsn_weight: strictly positive, asymmetric in tau") {
  VpSchedule s;
  for (int i = 0; i <= 100; ++i) REQUIRE(tsn_weight(s, i / 100.0, 3) > 0.0);
  // alpha is asymmetric, so lambda(tau) != lambda(1 - tau) in general.
  REQUIRE(std::abs(tsn_weight(s, 0.25, 1) - tsn_weight(s, 0.75, 1)) > 1e-6);
}
