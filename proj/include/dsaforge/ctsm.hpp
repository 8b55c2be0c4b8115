#pragma once

// Conditional time-score matching: train a scalar network s_theta(x, tau) to
// match the closed-form conditional time-score of the VP path between clean
// points and their triggered counterparts. This is the inner problem of the
// bilevel attack; fit_time_score can therefore run either standalone (its own
// optimizer, cosine schedule over cfg.steps) or as one cycle of a longer run
// with persistent optimizer state and a global annealing horizon.

#include "dsaforge/dataset.hpp"
#include "dsaforge/mlp.hpp"
#include "dsaforge/optim.hpp"
#include "dsaforge/perturbation.hpp"
#include "dsaforge/vp_path.hpp"

namespace dsaforge {

struct TimeScoreNet {
  MlpSpec spec;  // input_dim = d + 1 (x ++ tau), output_dim = 1
  ParamVector params;

  static TimeScoreNet init(int data_dim, std::vector<int> hidden, Activation act, Rng& rng) {
    TimeScoreNet n;
    n.spec = MlpSpec{data_dim + 1, std::move(hidden), 1, act};
    n.spec.validate();
    n.params = glorot_init(n.spec, rng);
    return n;
  }

  int data_dim() const { return spec.input_dim - 1; }

  double score(std::span<const double> x, double tau) const {
    std::vector<double> in(x.begin(), x.end());
    in.push_back(tau);
    return mlp_forward(spec, params, in)[0];
  }
};

inline nlohmann::json to_json(const TimeScoreNet& n) {
  return nlohmann::json{{"kind", "time_score_net"},
                        {"spec",
                         {{"input_dim", n.spec.input_dim},
                          {"hidden", n.spec.hidden},
                          {"output_dim", n.spec.output_dim},
                          {"activation", to_string(n.spec.activation)}}},
                        {"params", to_json(n.params)}};
}

inline TimeScoreNet time_score_net_from_json(const nlohmann::json& j) {
  TimeScoreNet n;
  const auto& s = j.at("spec");
  n.spec = MlpSpec{s.at("input_dim").get<int>(), s.at("hidden").get<std::vector<int>>(),
                   s.at("output_dim").get<int>(),
                   activation_from_string(s.at("activation").get<std::string>())};
  n.params = param_vector_from_json(j.at("params"));
  return n;
}

struct EndpointPair {
  std::vector<double> x0;
  std::vector<double> x1;
};

struct PathDraw {
  double tau = 0.0;
  std::vector<double> noise;  // standard normal, one per dimension
};

// Weighted squared error against the closed-form conditional target for an
// explicit set of (tau, noise) draws, one per pair, reduced in pair order.
// Generic over the score function so tests can inject doubles.
template <class ScoreFn>
double ctsm_loss_with_draws(ScoreFn&& score, const VpSchedule& schedule,
                            std::span<const EndpointPair> pairs, std::span<const PathDraw> draws) {
  if (pairs.empty()) throw ConfigError("ctsm_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = pairs[i];
    const auto& dr = draws[i];
    const auto se = schedule_eval(schedule, dr.tau);
    PathPoint pp;
    pp.tau = dr.tau;
    pp.x0 = pr.x0;
    pp.x1 = pr.x1;
    pp.x.resize(pr.x0.size());
    const double sd = std::sqrt(se.k);
    for (std::size_t k = 0; k < pr.x0.size(); ++k)
      pp.x[k] = se.alpha * pr.x0[k] + (1.0 - se.alpha) * pr.x1[k] + sd * dr.noise[k];
    const double target = conditional_time_score(schedule, pp);
    const double pred = score(std::span<const double>(pp.x), dr.tau);
    const double w = tsn_weight(schedule, dr.tau, static_cast<int>(pr.x0.size()));
    const double r = target - pred;
    acc += w * r * r;
  }
  return acc / static_cast<double>(pairs.size());
}

inline std::vector<PathDraw> draw_path_batch(std::span<const EndpointPair> pairs, Rng& rng) {
  std::vector<PathDraw> draws(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    draws[i].tau = rng.uniform();
    draws[i].noise.resize(pairs[i].x0.size());
    for (auto& n : draws[i].noise) n = rng.normal();
  }
  return draws;
}

inline double ctsm_loss(const TimeScoreNet& net, const VpSchedule& schedule,
                        std::span<const EndpointPair> pairs, Rng& rng) {
  if (pairs.empty()) throw ConfigError("ctsm_loss: empty batch");
  const auto draws = draw_path_batch(pairs, rng);
  return ctsm_loss_with_draws(
      [&](std::span<const double> x, double tau) { return net.score(x, tau); }, schedule, pairs,
      draws);
}

// One optimizer pass over cfg.steps minibatches. The returned network shares
// the input spec; only parameters change. Loss is recorded per step.
inline TimeScoreNet fit_time_score(TimeScoreNet net, const VpSchedule& schedule,
                                   const Dataset& clean, const TriggerMap& trigger,
                                   const InnerTrainConfig& cfg, FitTrace* trace = nullptr,
                                   Optimizer* persistent_opt = nullptr, long step_offset = 0,
                                   long total_steps = -1) {
  const std::vector<int> rows = clean.rows_in(Split::Train);
  if (rows.empty()) throw ConfigError("fit_time_score: no training rows");
  if (clean.dim != net.data_dim())
    throw ConfigError("fit_time_score: dataset dimension does not match network");
  Rng rng(cfg.seed);
  Optimizer local_opt(cfg.optimizer);
  Optimizer& opt = persistent_opt ? *persistent_opt : local_opt;
  const long horizon = total_steps > 0 ? total_steps : cfg.steps;
  const int d = clean.dim;
  for (int step = 0; step < cfg.steps; ++step) {
    // Constants of this step's tape: path samples, targets, TSN weights.
    std::vector<double> xs(static_cast<std::size_t>(cfg.batch_size) * (d + 1));
    std::vector<double> targets(cfg.batch_size);
    std::vector<double> weights(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto x0 = clean.row(rows[rng.uniform_int(static_cast<int>(rows.size()))]);
      const auto x1 = trigger(x0);
      const double tau = rng.uniform();
      const auto se = schedule_eval(schedule, tau);
      const double sd = std::sqrt(se.k);
      PathPoint pp;
      pp.tau = tau;
      pp.x0.assign(x0.begin(), x0.end());
      pp.x1 = x1;
      pp.x.resize(d);
      for (int k = 0; k < d; ++k) {
        pp.x[k] = se.alpha * x0[k] + (1.0 - se.alpha) * x1[k] + sd * rng.normal();
        xs[static_cast<std::size_t>(b) * (d + 1) + k] = pp.x[k];
      }
      xs[static_cast<std::size_t>(b) * (d + 1) + d] = tau;
      targets[b] = conditional_time_score(schedule, pp);
      weights[b] = tsn_weight(schedule, tau, d);
    }
    auto builder = [&](auto& tape, std::span<const typename std::decay_t<decltype(tape)>::Var> p) {
      using Var = typename std::decay_t<decltype(tape)>::Var;
      Var acc;
      for (int b = 0; b < cfg.batch_size; ++b) {
        auto out = tape_mlp(tape, net.spec, p,
                            std::span<const double>(&xs[static_cast<std::size_t>(b) * (d + 1)],
                                                    static_cast<std::size_t>(d + 1)));
        Var r = out[0] - targets[b];
        Var term = square(r) * weights[b];
        acc = acc.valid() ? acc + term : term;
      }
      return acc * (1.0 / static_cast<double>(cfg.batch_size));
    };
    GradReport rep;
    try {
      rep = loss_grad(builder, net.params);
    } catch (const NumericError& e) {
      throw NumericError("fit_time_score: step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, step_offset + step, horizon);
    opt.step(net.params.values, rep.gradient.values, lr);
    if (trace) trace->rows.push_back({static_cast<double>(step_offset + step), rep.value, lr});
  }
  return net;
}

inline TimeScoreNet fit_time_score(TimeScoreNet net, const VpSchedule& schedule,
                                   const Dataset& clean, const TriggerNet& trigger,
                                   const InnerTrainConfig& cfg, FitTrace* trace = nullptr) {
  return fit_time_score(std::move(net), schedule, clean, trigger.as_map(), cfg, trace);
}

inline void write_fit_trace_csv(const FitTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_fit_trace_csv: cannot open " + path.string());
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& r : trace.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", static_cast<int>(r[0]), r[1], r[2]);
    out << buf;
  }
}

}  // namespace dsaforge
