#pragma once

// Sample-specific trigger generator with a structural l-infinity bound
// (epsilon * tanh output head, so no projection step is ever needed), plus
// the denoising-score-matching warm start that seeds the generator toward
// the low-density periphery of the clean data.

#include "dsaforge/dataset.hpp"
#include "dsaforge/mlp.hpp"
#include "dsaforge/optim.hpp"

namespace dsaforge {

struct TriggerNet {
  MlpSpec spec;  // d -> d raw head
  ParamVector params;
  double epsilon = 0.0;

  static TriggerNet init(int dim, std::vector<int> hidden, Activation act, double epsilon,
                         Rng& rng) {
    TriggerNet t;
    t.spec = MlpSpec{dim, std::move(hidden), dim, act};
    t.spec.validate();
    t.params = glorot_init(t.spec, rng);
    t.epsilon = epsilon;
    return t;
  }

  // eta(x) = epsilon * tanh(head(x)), elementwise; |eta|_inf < epsilon always.
  std::vector<double> perturbation(std::span<const double> x) const {
    auto raw = mlp_forward(spec, params, x);
    for (double& v : raw) v = epsilon * std::tanh(v);
    return raw;
  }

  TriggerMap as_map() const {
    return [t = *this](std::span<const double> x) { return apply_trigger(t, x); };
  }

  friend std::vector<double> apply_trigger(const TriggerNet& t, std::span<const double> x) {
    auto p = t.perturbation(x);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += x[i];
    return p;
  }
};

// Tape version of x + epsilon * tanh(head(x)); pvars are trigger parameters,
// input is constant data.
template <class S>
TapeVars<S> tape_apply_trigger(Tape<S>& t, const TriggerNet& net,
                               std::span<const typename Tape<S>::Var> pvars,
                               std::span<const double> x) {
  auto raw = tape_mlp(t, net.spec, pvars, x);
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = tanh(raw[i]) * net.epsilon + x[i];
  return raw;
}

inline nlohmann::json to_json(const TriggerNet& t) {
  return nlohmann::json{{"kind", "trigger_net"},
                        {"spec",
                         {{"input_dim", t.spec.input_dim},
                          {"hidden", t.spec.hidden},
                          {"output_dim", t.spec.output_dim},
                          {"activation", to_string(t.spec.activation)}}},
                        {"params", to_json(t.params)},
                        {"epsilon", t.epsilon}};
}

inline TriggerNet trigger_net_from_json(const nlohmann::json& j) {
  TriggerNet t;
  const auto& s = j.at("spec");
  t.spec = MlpSpec{s.at("input_dim").get<int>(), s.at("hidden").get<std::vector<int>>(),
                   s.at("output_dim").get<int>(),
                   activation_from_string(s.at("activation").get<std::string>())};
  t.params = param_vector_from_json(j.at("params"));
  t.epsilon = j.at("epsilon").get<double>();
  return t;
}

struct ScoreNet {
  MlpSpec spec;  // d -> d
  ParamVector params;
  double noise_sigma = 0.1;

  std::vector<double> score(std::span<const double> x) const {
    return mlp_forward(spec, params, x);
  }
};

struct FitTrace {
  std::vector<std::array<double, 3>> rows;  // step, loss, lr
};

// Denoising score matching: minimize E || s(x + sigma xi) + xi / sigma ||^2
// over seeded minibatches of the clean training split.
inline ScoreNet dsm_fit_score(const Dataset& clean, double noise_sigma,
                              const InnerTrainConfig& cfg, std::vector<int> rows_in = {},
                              std::vector<int> hidden = {32, 32},
                              Activation act = Activation::Tanh, FitTrace* trace = nullptr) {
  if (clean.size() == 0) throw ConfigError("dsm_fit_score: empty dataset");
  if (!(noise_sigma > 0.0)) throw ConfigError("dsm_fit_score: noise_sigma must be > 0");
  Rng rng(cfg.seed);
  ScoreNet net;
  net.spec = MlpSpec{clean.dim, std::move(hidden), clean.dim, act};
  net.spec.validate();
  net.params = glorot_init(net.spec, rng);
  net.noise_sigma = noise_sigma;
  const std::vector<int> rows = rows_in.empty() ? clean.rows_in(Split::Train) : std::move(rows_in);
  if (rows.empty()) throw ConfigError("dsm_fit_score: no training rows");
  Optimizer opt(cfg.optimizer);
  const int d = clean.dim;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> xs(static_cast<std::size_t>(cfg.batch_size) * d);
    std::vector<double> targets(static_cast<std::size_t>(cfg.batch_size) * d);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto x = clean.row(rows[rng.uniform_int(static_cast<int>(rows.size()))]);
      for (int k = 0; k < d; ++k) {
        const double xi = rng.normal();
        xs[static_cast<std::size_t>(b) * d + k] = x[k] + noise_sigma * xi;
        targets[static_cast<std::size_t>(b) * d + k] = -xi / noise_sigma;
      }
    }
    auto builder = [&](auto& tape, std::span<const typename std::decay_t<decltype(tape)>::Var> p) {
      using Var = typename std::decay_t<decltype(tape)>::Var;
      Var acc;
      for (int b = 0; b < cfg.batch_size; ++b) {
        auto out = tape_mlp(tape, net.spec, p,
                            std::span<const double>(&xs[static_cast<std::size_t>(b) * d],
                                                    static_cast<std::size_t>(d)));
        for (int k = 0; k < d; ++k) {
          Var r = out[k] - targets[static_cast<std::size_t>(b) * d + k];
          Var sq = square(r);
          acc = acc.valid() ? acc + sq : sq;
        }
      }
      return acc * (1.0 / static_cast<double>(cfg.batch_size));
    };
    GradReport rep;
    try {
      rep = loss_grad(builder, net.params);
    } catch (const NumericError& e) {
      throw NumericError("dsm_fit_score: step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
    opt.step(net.params.values, rep.gradient.values, lr);
    if (trace) trace->rows.push_back({static_cast<double>(step), rep.value, lr});
  }
  return net;
}

// Regress the trigger head toward lambda * score(x). Targets beyond the
// epsilon budget saturate the tanh head toward epsilon * sign(target).
inline TriggerNet warm_start(TriggerNet trigger, const ScoreNet& score, double lambda,
                             const Dataset& clean, const InnerTrainConfig& cfg,
                             FitTrace* trace = nullptr) {
  const std::vector<int> rows = clean.rows_in(Split::Train);
  if (rows.empty()) throw ConfigError("warm_start: no training rows");
  if (clean.dim != trigger.spec.input_dim) throw ConfigError("warm_start: dimension mismatch");
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer);
  const int d = clean.dim;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> xs(static_cast<std::size_t>(cfg.batch_size) * d);
    std::vector<double> targets(static_cast<std::size_t>(cfg.batch_size) * d);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto x = clean.row(rows[rng.uniform_int(static_cast<int>(rows.size()))]);
      const auto s = score.score(x);
      for (int k = 0; k < d; ++k) {
        xs[static_cast<std::size_t>(b) * d + k] = x[k];
        targets[static_cast<std::size_t>(b) * d + k] = lambda * s[k];
      }
    }
    auto builder = [&](auto& tape, std::span<const typename std::decay_t<decltype(tape)>::Var> p) {
      using Var = typename std::decay_t<decltype(tape)>::Var;
      Var acc;
      for (int b = 0; b < cfg.batch_size; ++b) {
        std::span<const double> x(&xs[static_cast<std::size_t>(b) * d],
                                  static_cast<std::size_t>(d));
        auto raw = tape_mlp(tape, trigger.spec, p, x);
        for (int k = 0; k < d; ++k) {
          Var eta = tanh(raw[k]) * trigger.epsilon;
          Var r = eta - targets[static_cast<std::size_t>(b) * d + k];
          Var sq = square(r);
          acc = acc.valid() ? acc + sq : sq;
        }
      }
      return acc * (1.0 / static_cast<double>(cfg.batch_size));
    };
    const auto rep = loss_grad(builder, trigger.params);
    const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
    opt.step(trigger.params.values, rep.gradient.values, lr);
    if (trace) trace->rows.push_back({static_cast<double>(step), rep.value, lr});
  }
  return trigger;
}

}  // namespace dsaforge
