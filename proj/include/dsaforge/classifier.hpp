#pragma once

// Softmax MLP classifier. Used both as the victim model and as the trained
// estimate of the clean Bayes posterior that guides the attack objective.

#include "dsaforge/mlp.hpp"
#include "dsaforge/oracles.hpp"

namespace dsaforge {

struct Classifier {
  MlpSpec spec;  // d -> K logits
  ParamVector params;

  static Classifier init(int dim, std::vector<int> hidden, int num_classes, Activation act,
                         Rng& rng) {
    Classifier c;
    c.spec = MlpSpec{dim, std::move(hidden), num_classes, act};
    c.spec.validate();
    c.params = glorot_init(c.spec, rng);
    return c;
  }

  std::vector<double> logits(std::span<const double> x) const {
    return mlp_forward(spec, params, x);
  }

  std::vector<double> posterior(std::span<const double> x) const {
    auto z = logits(x);
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double& v : z) s += (v = std::exp(v - m));
    for (double& v : z) v /= s;
    return z;
  }

  int predict(std::span<const double> x) const {
    const auto z = logits(x);
    int best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
      if (z[i] > z[best]) best = static_cast<int>(i);
    return best;
  }
};

inline nlohmann::json to_json(const Classifier& c) {
  return nlohmann::json{{"kind", "classifier"},
                        {"spec",
                         {{"input_dim", c.spec.input_dim},
                          {"hidden", c.spec.hidden},
                          {"output_dim", c.spec.output_dim},
                          {"activation", to_string(c.spec.activation)}}},
                        {"params", to_json(c.params)}};
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  Classifier c;
  const auto& s = j.at("spec");
  c.spec = MlpSpec{s.at("input_dim").get<int>(), s.at("hidden").get<std::vector<int>>(),
                   s.at("output_dim").get<int>(),
                   activation_from_string(s.at("activation").get<std::string>())};
  c.params = param_vector_from_json(j.at("params"));
  return c;
}

// Softmax probability of one class over tape logits, shifted by the recorded
// max logit (a constant; the softmax value and its derivatives are invariant
// to the shift).
template <class S>
typename Tape<S>::Var tape_softmax_prob(Tape<S>& t, std::span<const typename Tape<S>::Var> logits,
                                        int cls) {
  using Var = typename Tape<S>::Var;
  double m = value_of(t.value(logits[0]));
  for (const auto& z : logits) m = std::max(m, value_of(t.value(z)));
  Var denom;
  Var num;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Var e = exp(logits[i] - m);
    if (static_cast<int>(i) == cls) num = e;
    denom = denom.valid() ? denom + e : e;
  }
  return num / denom;
}

// Cross-entropy -log softmax(z)[cls] via logsumexp; optionally capped, which
// realizes the probability floor exp(-cap) on the plain-value side too.
template <class S>
typename Tape<S>::Var tape_cross_entropy(Tape<S>& t, std::span<const typename Tape<S>::Var> logits,
                                         int cls, double cap = -1.0) {
  using Var = typename Tape<S>::Var;
  double m = value_of(t.value(logits[0]));
  for (const auto& z : logits) m = std::max(m, value_of(t.value(z)));
  Var se;
  for (const auto& z : logits) {
    Var e = exp(z - m);
    se = se.valid() ? se + e : e;
  }
  Var ce = log(se) + m - logits[cls];
  return cap > 0.0 ? min_c(ce, cap) : ce;
}

}  // namespace dsaforge
