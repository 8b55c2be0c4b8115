#pragma once

// Log density ratios from a trained time-score network,
//
//   log r(x) = -integral_0^1 s_theta(x, tau) dtau,
//
// approximated by Gauss-Legendre quadrature, and the conversion from clean
// posterior + log ratio to the poisoned-mixture posterior.

#include "dsaforge/ctsm.hpp"
#include "dsaforge/quadrature.hpp"

namespace dsaforge {

struct MixtureConstant {
  double rho = 0.0;
  double c_rho = 0.0;  // log((1 - rho) / rho)
};

inline MixtureConstant c_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0))
    throw ConfigError("c_rho: rho = " + std::to_string(rho) + " outside (0,1)");
  return MixtureConstant{rho, std::log((1.0 - rho) / rho)};
}

template <class ScoreFn>
double log_ratio_fn(ScoreFn&& score, std::span<const double> x, const Quadrature& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) s += q.weights[i] * score(x, q.nodes[i]);
  return -s;
}

inline double log_ratio(const TimeScoreNet& net, std::span<const double> x, const Quadrature& q) {
  if (static_cast<int>(x.size()) != net.data_dim())
    throw ConfigError("log_ratio: input dimension does not match network");
  return log_ratio_fn([&](std::span<const double> p, double tau) { return net.score(p, tau); }, x,
                      q);
}

// mu_poison = mu_clean + (1 - mu_clean) * sigmoid(-C_rho - log r). The log
// ratio is clamped to [-30, 30] before the sigmoid; the clamp is far outside
// the range reached in any benchmark run and only guards exp overflow.
inline double poisoned_posterior(double mu_clean_t, double log_r, const MixtureConstant& mc) {
  const double lr = std::clamp(log_r, -30.0, 30.0);
  return mu_clean_t + (1.0 - mu_clean_t) * sigmoid(-mc.c_rho - lr);
}

}  // namespace dsaforge
