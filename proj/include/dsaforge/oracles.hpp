#pragma once

// Analytic and brute-force ground truth used across the test and acceptance
// suites: diagonal-covariance Gaussian mixtures, constant-shift triggers,
// their exact densities / posteriors / density ratios, the closed-form
// marginal time-score of the shifted single Gaussian, and the re-solve
// finite-difference oracle for bilevel hypergradients. Everything here is
// restricted to the one family where all of those quantities are closed form.

#include <json.hpp>

#include "dsaforge/param_vector.hpp"
#include "dsaforge/quadrature.hpp"
#include "dsaforge/tape.hpp"
#include "dsaforge/vp_path.hpp"

namespace dsaforge {

struct GmComponent {
  std::vector<double> mean;
  std::vector<double> cov;  // diagonal, strictly positive
  double weight = 0.0;
  int label = 0;
};

struct GaussianMixtureSpec {
  std::vector<GmComponent> components;

  int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].mean.size()); }

  int num_classes() const {
    int k = 0;
    for (const auto& c : components) k = std::max(k, c.label + 1);
    return k;
  }

  void validate() const {
    if (components.empty()) throw ConfigError("GaussianMixtureSpec: no components");
    double ws = 0.0;
    const std::size_t d = components[0].mean.size();
    for (const auto& c : components) {
      if (c.mean.size() != d || c.cov.size() != d)
        throw ConfigError("GaussianMixtureSpec: inconsistent component dimensions");
      if (c.weight <= 0.0) throw ConfigError("GaussianMixtureSpec: weights must be positive");
      if (c.label < 0) throw ConfigError("GaussianMixtureSpec: labels must be >= 0");
      for (double v : c.cov)
        if (v <= 0.0) throw ConfigError("GaussianMixtureSpec: covariances must be positive");
      ws += c.weight;
    }
    if (std::abs(ws - 1.0) > 1e-9)
      throw ConfigError("GaussianMixtureSpec: weights sum to " + std::to_string(ws));
  }
};

inline double gaussian_log_density_diag(std::span<const double> x, std::span<const double> mean,
                                        std::span<const double> cov) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - mean[i];
    s += -0.5 * std::log(2.0 * 3.14159265358979323846 * cov[i]) - 0.5 * r * r / cov[i];
  }
  return s;
}

inline std::vector<double> gm_component_log_terms(const GaussianMixtureSpec& spec,
                                                  std::span<const double> x) {
  std::vector<double> t;
  t.reserve(spec.components.size());
  for (const auto& c : spec.components)
    t.push_back(std::log(c.weight) + gaussian_log_density_diag(x, c.mean, c.cov));
  return t;
}

inline double log_sum_exp(std::span<const double> t) {
  double m = t[0];
  for (double v : t) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : t) s += std::exp(v - m);
  return m + std::log(s);
}

inline double gm_log_density(const GaussianMixtureSpec& spec, std::span<const double> x) {
  const auto t = gm_component_log_terms(spec, x);
  return log_sum_exp(t);
}

// Exact K-class Bayes posterior under the mixture, classes grouped by label.
inline std::vector<double> gm_bayes_posterior(const GaussianMixtureSpec& spec,
                                              std::span<const double> x) {
  const int k = spec.num_classes();
  const auto t = gm_component_log_terms(spec, x);
  const double lse = log_sum_exp(t);
  std::vector<double> post(k, 0.0);
  for (std::size_t j = 0; j < spec.components.size(); ++j)
    post[spec.components[j].label] += std::exp(t[j] - lse);
  double s = 0.0;
  for (double p : post) s += p;
  for (double& p : post) p /= s;
  return post;
}

// Same posterior as a tape expression of a variable input, for use inside the
// attack objective when an analytic clean posterior is configured.
template <class S>
TapeVars<S> tape_gm_bayes_posterior(Tape<S>& t, const GaussianMixtureSpec& spec,
                                    std::span<const typename Tape<S>::Var> x) {
  using Var = typename Tape<S>::Var;
  const int k = spec.num_classes();
  std::vector<Var> terms;
  std::vector<double> term_vals;
  terms.reserve(spec.components.size());
  for (const auto& c : spec.components) {
    double cst = std::log(c.weight);
    Var quad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      cst += -0.5 * std::log(2.0 * 3.14159265358979323846 * c.cov[i]);
      Var r = x[i] - c.mean[i];
      Var term = square(r) * (-0.5 / c.cov[i]);
      quad = quad.valid() ? quad + term : term;
    }
    terms.push_back(quad + cst);
    term_vals.push_back(value_of(t.value(terms.back())));
  }
  // Shift by the max as a recorded constant; the softmax value is invariant.
  double m = term_vals[0];
  for (double v : term_vals) m = std::max(m, v);
  Var denom;
  std::vector<Var> es;
  for (auto& term : terms) {
    Var e = exp(term - m);
    es.push_back(e);
    denom = denom.valid() ? denom + e : e;
  }
  TapeVars<S> post(k);
  std::vector<bool> seen(k, false);
  for (std::size_t j = 0; j < spec.components.size(); ++j) {
    const int lbl = spec.components[j].label;
    post[lbl] = seen[lbl] ? post[lbl] + es[j] : es[j];
    seen[lbl] = true;
  }
  for (int c = 0; c < k; ++c) {
    if (!seen[c]) throw ConfigError("tape_gm_bayes_posterior: class without components");
    post[c] = post[c] / denom;
  }
  return post;
}

struct ShiftTrigger {
  std::vector<double> c;

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
    return y;
  }
};

// log r(x) = log p_X(x) - log p_X(x - c); the shifted mixture has density
// p_Xtilde(x) = p_X(x - c).
inline double shift_log_ratio(const GaussianMixtureSpec& spec, const ShiftTrigger& trig,
                              std::span<const double> x) {
  std::vector<double> shifted(x.begin(), x.end());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] -= trig.c[i];
  return gm_log_density(spec, x) - gm_log_density(spec, shifted);
}

// Marginal time-score d/dtau log p_tau(x) for single-Gaussian clean data and
// a constant shift: p_tau = N(m + tau c, s^2 + k(tau)) per dimension.
inline double shift_marginal_time_score(const GaussianMixtureSpec& spec, const ShiftTrigger& trig,
                                        std::span<const double> x, double tau,
                                        const VpSchedule& schedule) {
  if (spec.components.size() != 1)
    throw ConfigError("shift_marginal_time_score: single-Gaussian specs only");
  const auto& g = spec.components[0];
  const auto se = schedule_eval(schedule, tau);
  double score = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = g.cov[i] + se.k;
    const double u = x[i] - g.mean[i] - tau * trig.c[i];
    score += -0.5 * se.k_prime / v + trig.c[i] * u / v + 0.5 * se.k_prime * u * u / (v * v);
  }
  return score;
}

// mu_poison from the raw Bayes quotient. Falls back to a log-space quotient
// only when the densities underflow.
inline double direct_poisoned_posterior(const GaussianMixtureSpec& spec, const ShiftTrigger& trig,
                                        double rho, int t, std::span<const double> x) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("direct_poisoned_posterior: rho outside (0,1)");
  const double mu_clean_t = gm_bayes_posterior(spec, x)[t];
  std::vector<double> shifted(x.begin(), x.end());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] -= trig.c[i];
  const double lp = gm_log_density(spec, x);
  const double lq = gm_log_density(spec, shifted);
  const double p = std::exp(lp);
  const double q = std::exp(lq);
  if (p > 1e-300 && q > 1e-300)
    return ((1.0 - rho) * p * mu_clean_t + rho * q) / ((1.0 - rho) * p + rho * q);
  // (mu + e^m) / (1 + e^m) with m = log(rho q) - log((1-rho) p)
  const double m = std::log(rho) + lq - std::log(1.0 - rho) - lp;
  if (m <= 0.0) {
    const double em = std::exp(m);
    return (mu_clean_t + em) / (1.0 + em);
  }
  const double em = std::exp(-m);
  return (mu_clean_t * em + 1.0) / (em + 1.0);
}

// Central finite differences of phi -> F(phi, theta*(phi)); F_at must re-solve
// the inner problem at each probe and throw OracleError when that solve does
// not converge.
template <class FAt>
ParamVector fd_total_derivative(FAt&& f_at, const ParamVector& phi, double h) {
  ParamVector g = ParamVector::zeros_like(phi);
  ParamVector probe = phi;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    probe.values[i] = phi.values[i] + h;
    const double fp = f_at(probe);
    probe.values[i] = phi.values[i] - h;
    const double fm = f_at(probe);
    probe.values[i] = phi.values[i];
    g.values[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline nlohmann::json to_json(const GaussianMixtureSpec& spec) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : spec.components)
    comps.push_back({{"mean", c.mean}, {"cov", c.cov}, {"weight", c.weight}, {"label", c.label}});
  return nlohmann::json{{"components", comps}};
}

inline GaussianMixtureSpec gm_spec_from_json(const nlohmann::json& j) {
  GaussianMixtureSpec spec;
  for (const auto& e : j.at("components")) {
    GmComponent c;
    c.mean = e.at("mean").get<std::vector<double>>();
    c.cov = e.at("cov").get<std::vector<double>>();
    c.weight = e.at("weight").get<double>();
    c.label = e.at("label").get<int>();
    spec.components.push_back(std::move(c));
  }
  spec.validate();
  return spec;
}

}  // namespace dsaforge
