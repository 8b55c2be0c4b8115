#pragma once

// Variance-preserving conditional probability path between a clean endpoint
// x0 and a triggered endpoint x1:
//
//   p_tau(x | x0, x1) = N(x | alpha(tau) x0 + (1 - alpha(tau)) x1, k(tau) I)
//
// with alpha(tau) = 1 - tau and k(tau) = max(tau (1 - tau), k_floor). The
// schedule derivative k' is reported from the unfloored schedule (1 - 2 tau)
// even where the floor binds; training draws tau uniformly, so floor-region
// contributions are rare and the TSN weight suppresses them.

#include "dsaforge/common.hpp"

namespace dsaforge {

struct VpSchedule {
  double k_floor = 1e-4;
};

struct ScheduleEval {
  double alpha;
  double k;
  double alpha_prime;
  double k_prime;
};

inline ScheduleEval schedule_eval(const VpSchedule& s, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw ConfigError("schedule_eval: tau = " + std::to_string(tau) + " outside [0,1]");
  return ScheduleEval{1.0 - tau, std::max(tau * (1.0 - tau), s.k_floor), -1.0, 1.0 - 2.0 * tau};
}

struct PathPoint {
  std::vector<double> x;
  double tau = 0.0;
  std::vector<double> x0;
  std::vector<double> x1;
};

inline PathPoint sample_path_point(const VpSchedule& s, std::span<const double> x0,
                                   std::span<const double> x1, double tau, Rng& rng) {
  if (x0.size() != x1.size())
    throw ConfigError("sample_path_point: endpoint dimension mismatch");
  const auto se = schedule_eval(s, tau);
  const double sd = std::sqrt(se.k);
  PathPoint p;
  p.tau = tau;
  p.x0.assign(x0.begin(), x0.end());
  p.x1.assign(x1.begin(), x1.end());
  p.x.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    p.x[i] = se.alpha * x0[i] + (1.0 - se.alpha) * x1[i] + sd * rng.normal();
  return p;
}

// d/dtau log p_tau(x | x0, x1) in closed form:
//   -(d/2) k'/k + <mu', x - mu> / k + k' ||x - mu||^2 / (2 k^2),  mu' = x1 - x0.
inline double conditional_time_score(const VpSchedule& s, const PathPoint& p) {
  const auto se = schedule_eval(s, p.tau);
  const std::size_t d = p.x.size();
  double dot_term = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = se.alpha * p.x0[i] + (1.0 - se.alpha) * p.x1[i];
    const double r = p.x[i] - mu;
    dot_term += (p.x1[i] - p.x0[i]) * r;
    sq += r * r;
  }
  return -0.5 * static_cast<double>(d) * se.k_prime / se.k + dot_term / se.k +
         0.5 * se.k_prime * sq / (se.k * se.k);
}

// Time Score Normalization weight lambda(tau) = k^2 / (2 alpha^2 + k d).
inline double tsn_weight(const VpSchedule& s, double tau, int d) {
  if (d < 1) throw ConfigError("tsn_weight: d must be >= 1");
  const auto se = schedule_eval(s, tau);
  return se.k * se.k / (2.0 * se.alpha * se.alpha + se.k * static_cast<double>(d));
}

}  // namespace dsaforge
