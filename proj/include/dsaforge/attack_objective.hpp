#pragma once

// Empirical attack losses and their combination
//
//   L1 = mean (1 - mu^t(X))       sigmoid(-C_rho + int s_theta(X, tau) dtau)
//   L2 = mean (1 - mu^t(Xtilde))  sigmoid( C_rho - int s_theta(Xtilde, tau) dtau)
//   L3 = mean CE(Xtilde, t)       (probability floored at 1e-12)
//   F  = (1 - beta) L1 + beta L2 + gamma L3
//
// with Xtilde = X + eta_phi(X). Values are computed by plain evaluation;
// build_objective records the identical computation on a tape over both
// parameter sets for the bilevel hypergradient. The two routes are asserted
// equal in the test suite.

#include <memory>

#include "dsaforge/classifier.hpp"
#include "dsaforge/ratio.hpp"

namespace dsaforge {

inline constexpr double kCrossEntropyFloor = 1e-12;

struct ObjectiveWeights {
  double beta = 0.7;
  double gamma = 0.01;
  int target = 0;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0,1]");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (target < 0) throw ConfigError("target class must be >= 0");
  }
};

struct ObjectiveBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
};

// Clean posterior estimate: a trained classifier or the analytic Bayes oracle.
struct CleanPosterior {
  std::shared_ptr<const Classifier> clf;
  std::shared_ptr<const GaussianMixtureSpec> gm;

  static CleanPosterior from_classifier(Classifier c) {
    CleanPosterior p;
    p.clf = std::make_shared<Classifier>(std::move(c));
    return p;
  }

  static CleanPosterior from_mixture(GaussianMixtureSpec g) {
    CleanPosterior p;
    p.gm = std::make_shared<GaussianMixtureSpec>(std::move(g));
    return p;
  }

  int num_classes() const { return clf ? clf->spec.output_dim : gm->num_classes(); }

  std::vector<double> operator()(std::span<const double> x) const {
    return clf ? clf->posterior(x) : gm_bayes_posterior(*gm, x);
  }

  template <class S>
  typename Tape<S>::Var tape_prob(Tape<S>& t, std::span<const typename Tape<S>::Var> x,
                                  int cls) const {
    if (clf) {
      auto logits = tape_mlp_frozen(t, clf->spec, clf->params, x);
      return tape_softmax_prob(t, std::span<const typename Tape<S>::Var>(logits), cls);
    }
    auto post = tape_gm_bayes_posterior(t, *gm, x);
    return post[cls];
  }

  template <class S>
  typename Tape<S>::Var tape_cross_entropy_t(Tape<S>& t,
                                             std::span<const typename Tape<S>::Var> x, int cls,
                                             double cap) const {
    using Var = typename Tape<S>::Var;
    if (clf) {
      auto logits = tape_mlp_frozen(t, clf->spec, clf->params, x);
      return tape_cross_entropy(t, std::span<const Var>(logits), cls, cap);
    }
    // -log posterior via logsumexp differences, then cap.
    std::vector<Var> terms;
    std::vector<Var> cls_terms;
    for (const auto& c : gm->components) {
      double cst = std::log(c.weight);
      Var quad;
      for (std::size_t i = 0; i < x.size(); ++i) {
        cst += -0.5 * std::log(2.0 * 3.14159265358979323846 * c.cov[i]);
        Var term = square(x[i] - c.mean[i]) * (-0.5 / c.cov[i]);
        quad = quad.valid() ? quad + term : term;
      }
      Var e = quad + cst;
      terms.push_back(e);
      if (c.label == cls) cls_terms.push_back(e);
    }
    if (cls_terms.empty()) throw ConfigError("CleanPosterior: target class has no components");
    auto lse = [&](const std::vector<Var>& vs) {
      double m = value_of(t.value(vs[0]));
      for (const auto& v : vs) m = std::max(m, value_of(t.value(v)));
      Var s;
      for (const auto& v : vs) {
        Var e = exp(v - m);
        s = s.valid() ? s + e : e;
      }
      return log(s) + m;
    };
    Var ce = lse(terms) - lse(cls_terms);
    return min_c(ce, cap);
  }
};

inline double l1n(const std::vector<std::vector<double>>& batch, const CleanPosterior& mu_clean,
                  const TimeScoreNet& net, const Quadrature& q, const MixtureConstant& mc,
                  int target) {
  if (batch.empty()) throw ConfigError("l1n: empty batch");
  double acc = 0.0;
  for (const auto& x : batch) {
    const double coef = 1.0 - mu_clean(x)[target];
    double integral = 0.0;
    for (std::size_t k = 0; k < q.nodes.size(); ++k)
      integral += q.weights[k] * net.score(x, q.nodes[k]);
    acc += coef * sigmoid(-mc.c_rho + integral);
  }
  return acc / static_cast<double>(batch.size());
}

inline double l2n(const std::vector<std::vector<double>>& batch, const TriggerNet& trigger,
                  const CleanPosterior& mu_clean, const TimeScoreNet& net, const Quadrature& q,
                  const MixtureConstant& mc, int target) {
  if (batch.empty()) throw ConfigError("l2n: empty batch");
  double acc = 0.0;
  for (const auto& x : batch) {
    const auto xt = apply_trigger(trigger, x);
    const double coef = 1.0 - mu_clean(xt)[target];
    double integral = 0.0;
    for (std::size_t k = 0; k < q.nodes.size(); ++k)
      integral += q.weights[k] * net.score(xt, q.nodes[k]);
    acc += coef * sigmoid(mc.c_rho - integral);
  }
  return acc / static_cast<double>(batch.size());
}

inline double l3n(const std::vector<std::vector<double>>& batch, const TriggerNet& trigger,
                  const CleanPosterior& mu_clean, int target) {
  if (batch.empty()) throw ConfigError("l3n: empty batch");
  double acc = 0.0;
  for (const auto& x : batch) {
    const auto xt = apply_trigger(trigger, x);
    const double p = std::max(mu_clean(xt)[target], kCrossEntropyFloor);
    acc += -std::log(p);
  }
  return acc / static_cast<double>(batch.size());
}

inline ObjectiveBreakdown total_objective(double l1, double l2, double l3,
                                          const ObjectiveWeights& w) {
  ObjectiveBreakdown b;
  b.l1 = l1;
  b.l2 = l2;
  b.l3 = l3;
  b.total = (1.0 - w.beta) * l1 + w.beta * l2 + w.gamma * l3;
  return b;
}

template <class S>
struct ObjectiveNodes {
  typename Tape<S>::Var l1, l2, l3, total;
};

// Record F over trigger parameters (phi leaves) and time-score parameters
// (theta leaves). Batch points enter as constants.
template <class S>
ObjectiveNodes<S> build_objective(Tape<S>& t, const TriggerNet& trigger,
                                  std::span<const typename Tape<S>::Var> phi,
                                  const TimeScoreNet& snet,
                                  std::span<const typename Tape<S>::Var> theta,
                                  const CleanPosterior& mu_clean, const Quadrature& q,
                                  const MixtureConstant& mc, const ObjectiveWeights& w,
                                  const std::vector<std::vector<double>>& batch) {
  using Var = typename Tape<S>::Var;
  if (batch.empty()) throw ConfigError("build_objective: empty batch");
  const double ce_cap = -std::log(kCrossEntropyFloor);
  const int d = static_cast<int>(batch[0].size());
  Var l1_acc, l2_acc, l3_acc;
  std::vector<Var> svars(q.nodes.size());
  std::vector<Var> input(d + 1);
  for (const auto& x : batch) {
    // L1 term at the clean point; the posterior factor is a constant.
    const double coef = 1.0 - mu_clean(x)[w.target];
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      std::vector<double> in(x.begin(), x.end());
      in.push_back(q.nodes[k]);
      svars[k] = tape_mlp(t, snet.spec, theta, std::span<const double>(in))[0];
    }
    Var integral = t.dotc(std::span<const Var>(svars), std::span<const double>(q.weights));
    Var term1 = sigmoid(integral - mc.c_rho) * coef;
    l1_acc = l1_acc.valid() ? l1_acc + term1 : term1;

    // Triggered point as tape variables.
    auto xt = tape_apply_trigger(t, trigger, phi, std::span<const double>(x));
    for (int k = 0; k < d; ++k) input[k] = xt[k];
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      input[d] = t.leaf(S{q.nodes[k]});
      svars[k] = tape_mlp(t, snet.spec, theta, std::span<const Var>(input))[0];
    }
    Var integral2 = t.dotc(std::span<const Var>(svars), std::span<const double>(q.weights));
    Var p_t = mu_clean.tape_prob(t, std::span<const Var>(xt), w.target);
    Var term2 = (1.0 - p_t) * sigmoid(mc.c_rho - integral2);
    l2_acc = l2_acc.valid() ? l2_acc + term2 : term2;

    Var ce = mu_clean.tape_cross_entropy_t(t, std::span<const Var>(xt), w.target, ce_cap);
    l3_acc = l3_acc.valid() ? l3_acc + ce : ce;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  ObjectiveNodes<S> nodes;
  nodes.l1 = l1_acc * inv;
  nodes.l2 = l2_acc * inv;
  nodes.l3 = l3_acc * inv;
  nodes.total = nodes.l1 * (1.0 - w.beta) + nodes.l2 * w.beta + nodes.l3 * w.gamma;
  return nodes;
}

}  // namespace dsaforge
