#pragma once

// End-to-end desk experiment: generate data, train the clean posterior
// estimate, run the attack, poison, train victims (DSA trigger and the
// fixed-shift control), apply fine-tuning defenses, and report C-Acc / ASR /
// density placement per stage.

#include <chrono>

#include "dsaforge/bilevel.hpp"

namespace dsaforge {

struct Metrics {
  double c_acc = 0.0;
  double asr = 0.0;
};

// Cross-entropy training of a softmax classifier on the train split.
inline Classifier train_classifier(const Dataset& data, const MlpSpec& spec,
                                   const InnerTrainConfig& cfg, FitTrace* trace = nullptr) {
  spec.validate();
  const std::vector<int> rows = data.rows_in(Split::Train);
  if (rows.empty()) throw ConfigError("train_classifier: empty train split");
  if (spec.input_dim != data.dim || spec.output_dim != data.num_classes)
    throw ConfigError("train_classifier: spec does not match dataset dimensions");
  Rng rng(cfg.seed);
  Classifier clf;
  clf.spec = spec;
  clf.params = glorot_init(spec, rng);
  Optimizer opt(cfg.optimizer);
  const int d = data.dim;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> xs(static_cast<std::size_t>(cfg.batch_size) * d);
    std::vector<int> ys(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int i = rows[rng.uniform_int(static_cast<int>(rows.size()))];
      const auto r = data.row(i);
      std::copy(r.begin(), r.end(), xs.begin() + static_cast<std::size_t>(b) * d);
      ys[b] = data.labels[i];
    }
    auto builder = [&](auto& tape, std::span<const typename std::decay_t<decltype(tape)>::Var> p) {
      using Var = typename std::decay_t<decltype(tape)>::Var;
      Var acc;
      for (int b = 0; b < cfg.batch_size; ++b) {
        auto logits = tape_mlp(tape, spec, p,
                               std::span<const double>(&xs[static_cast<std::size_t>(b) * d],
                                                       static_cast<std::size_t>(d)));
        Var ce = tape_cross_entropy(tape, std::span<const Var>(logits), ys[b]);
        acc = acc.valid() ? acc + ce : ce;
      }
      return acc * (1.0 / static_cast<double>(cfg.batch_size));
    };
    GradReport rep;
    try {
      rep = loss_grad(builder, clf.params);
    } catch (const NumericError& e) {
      throw NumericError("train_classifier: step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
    opt.step(clf.params.values, rep.gradient.values, lr);
    if (trace) trace->rows.push_back({static_cast<double>(step), rep.value, lr});
  }
  return clf;
}

// C-Acc over clean test rows; ASR over triggered non-target test rows.
inline Metrics evaluate(const Classifier& model, const Dataset& data, const TriggerMap& trigger,
                        int target) {
  std::size_t n_clean = 0, correct = 0, n_asr = 0, hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.split[i] != Split::Test) continue;
    if (data.provenance[i] != Provenance::Clean) continue;
    ++n_clean;
    if (model.predict(data.row(i)) == data.labels[i]) ++correct;
    if (data.labels[i] == target) continue;
    ++n_asr;
    const auto xt = trigger(data.row(i));
    if (model.predict(xt) == target) ++hit;
  }
  if (n_clean == 0) throw ConfigError("evaluate: empty test split");
  if (n_asr == 0) throw ConfigError("evaluate: no non-target test rows");
  return Metrics{static_cast<double>(correct) / static_cast<double>(n_clean),
                 static_cast<double>(hit) / static_cast<double>(n_asr)};
}

enum class DefenseMode { FeTuning, FtInit, Full };

inline std::string to_string(DefenseMode m) {
  switch (m) {
    case DefenseMode::FeTuning: return "fe_tuning";
    case DefenseMode::FtInit: return "ft_init";
    default: return "full";
  }
}

// Fine-tune on the clean holdout rows. fe_tuning updates only the last layer;
// ft_init reinitializes the last layer and then updates everything; full
// updates everything without reinit. steps == 0 returns the model unchanged.
inline Classifier finetune_defense(const Classifier& model, const Dataset& data, DefenseMode mode,
                                   const InnerTrainConfig& cfg, FitTrace* trace = nullptr) {
  const std::vector<int> rows = data.rows_in(Split::Holdout);
  if (rows.empty()) throw ConfigError("finetune_defense: empty holdout");
  for (int i : rows)
    if (data.provenance[i] != Provenance::Clean)
      throw ConfigError("finetune_defense: poisoned row in holdout");
  if (cfg.steps == 0) return model;
  Rng rng(cfg.seed);
  Classifier clf = model;
  const auto layout = clf.spec.layout();
  const std::size_t last_size = param_count(layout.back());
  const std::size_t last_off = clf.params.size() - last_size;
  if (mode == DefenseMode::FtInit) {
    const auto& ld = layout.back();
    const double bound = std::sqrt(6.0 / (ld.in + ld.out));
    for (std::size_t i = 0; i < static_cast<std::size_t>(ld.out) * ld.in; ++i)
      clf.params.values[last_off + i] = rng.uniform(-bound, bound);
    for (int i = 0; i < ld.out; ++i)
      clf.params.values[last_off + static_cast<std::size_t>(ld.out) * ld.in + i] = 0.0;
  }
  Optimizer opt(cfg.optimizer);
  const int d = data.dim;
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(rows.size()));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> xs(static_cast<std::size_t>(batch) * d);
    std::vector<int> ys(batch);
    for (int b = 0; b < batch; ++b) {
      const int i = rows[rng.uniform_int(static_cast<int>(rows.size()))];
      const auto r = data.row(i);
      std::copy(r.begin(), r.end(), xs.begin() + static_cast<std::size_t>(b) * d);
      ys[b] = data.labels[i];
    }
    auto builder = [&](auto& tape, std::span<const typename std::decay_t<decltype(tape)>::Var> p) {
      using Var = typename std::decay_t<decltype(tape)>::Var;
      Var acc;
      for (int b = 0; b < batch; ++b) {
        auto logits = tape_mlp(tape, clf.spec, p,
                               std::span<const double>(&xs[static_cast<std::size_t>(b) * d],
                                                       static_cast<std::size_t>(d)));
        Var ce = tape_cross_entropy(tape, std::span<const Var>(logits), ys[b]);
        acc = acc.valid() ? acc + ce : ce;
      }
      return acc * (1.0 / static_cast<double>(batch));
    };
    auto rep = loss_grad(builder, clf.params);
    if (mode == DefenseMode::FeTuning)
      for (std::size_t i = 0; i < last_off; ++i) rep.gradient.values[i] = 0.0;
    const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
    opt.step(clf.params.values, rep.gradient.values, lr);
    if (trace) trace->rows.push_back({static_cast<double>(step), rep.value, lr});
  }
  return clf;
}

struct ModelSpecConfig {
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::Tanh;
  InnerTrainConfig train{4000, 128, 3e-3, 1e-4, OptKind::Adam, 0};
};

struct ExperimentConfig {
  GaussianMixtureSpec mixture;
  int n = 3000;
  std::array<double, 3> split = {0.70, 0.28, 0.02};
  double epsilon_abs = 0.0;     // > 0 overrides the scale below
  double epsilon_scale = 0.75;  // times the pooled per-dimension train std
  BilevelConfig attack;
  ModelSpecConfig clean_model;
  ModelSpecConfig victim;
  InnerTrainConfig defense{500, 32, 1e-2, 1e-3, OptKind::Adam, 0};
  std::vector<double> baseline_shift_scale = {1.0, 1.0};  // times epsilon, per dim
  bool warmstart_compare = false;
  bool mu_clean_oracle = false;  // analytic Bayes posterior instead of a trained one
  std::uint64_t seed = 0;

  void validate() const {
    mixture.validate();
    if (n < 1) throw ConfigError("data.n must be >= 1");
    if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9)
      throw ConfigError("data.split must sum to 1");
    if (epsilon_abs < 0.0) throw ConfigError("attack.epsilon must be >= 0");
    if (!(epsilon_scale > 0.0) && epsilon_abs == 0.0)
      throw ConfigError("attack.epsilon_scale must be > 0");
    defense.validate("defense");
    clean_model.train.validate("clean_model");
    victim.train.validate("victim");
  }
};

struct AttackEval {
  Metrics pre, fe_tuning, ft_init, full;
};

struct Report {
  int schema_version = 1;
  std::string config_hash;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  double bayes_accuracy = 0.0;
  Metrics clean_baseline;  // clean-trained victim; asr measured with the DSA trigger
  AttackEval dsa, shift;
  double density_clean = 0.0, density_dsa = 0.0, density_shift = 0.0;
  double objective_initial = 0.0, objective_final = 0.0;
  int cycles_to_half_warm = -1, cycles_to_half_cold = -1;
  double cold_initial = 0.0;
  int flagged_cycles = 0;
  double trigger_linf_max = 0.0;
  std::string protocol;
  double wall_clock_seconds = 0.0;
  std::vector<DsaTraceRow> trace;
  std::vector<DsaTraceRow> trace_cold;
  TriggerNet trigger;

  nlohmann::json to_json(bool include_wall_clock = true) const {
    auto metrics_json = [](const Metrics& m) {
      return nlohmann::json{{"c_acc", m.c_acc}, {"asr", m.asr}};
    };
    auto eval_json = [&](const AttackEval& e) {
      return nlohmann::json{{"pre", metrics_json(e.pre)},
                            {"fe_tuning", metrics_json(e.fe_tuning)},
                            {"ft_init", metrics_json(e.ft_init)},
                            {"full", metrics_json(e.full)}};
    };
    nlohmann::json j{
        {"schema_version", schema_version},
        {"config_hash", config_hash},
        {"seed", seed},
        {"epsilon", epsilon},
        {"bayes_accuracy", bayes_accuracy},
        {"clean_baseline", metrics_json(clean_baseline)},
        {"dsa", eval_json(dsa)},
        {"shift_baseline", eval_json(shift)},
        {"density",
         {{"clean", density_clean}, {"dsa_triggered", density_dsa}, {"shift_triggered", density_shift}}},
        {"objective",
         {{"initial", objective_initial},
          {"final", objective_final},
          {"cycles_to_half_warm", cycles_to_half_warm},
          {"cycles_to_half_cold", cycles_to_half_cold},
          {"cold_initial", cold_initial},
          {"flagged_cycles", flagged_cycles}}},
        {"trigger_linf_max", trigger_linf_max},
        {"protocol", protocol},
    };
    if (include_wall_clock) j["wall_clock_seconds"] = wall_clock_seconds;
    return j;
  }
};

// First cycle whose last outer-step objective is at or below the threshold;
// -1 when never reached.
inline int cycles_to_reach(const std::vector<DsaTraceRow>& trace, double threshold) {
  int last_cycle = -1;
  double last_total = 0.0;
  for (const auto& r : trace) {
    if (r.cycle != last_cycle && last_cycle != -1 && last_total <= threshold) return last_cycle;
    last_cycle = r.cycle;
    last_total = r.total;
  }
  if (last_cycle != -1 && last_total <= threshold) return last_cycle;
  return -1;
}

inline Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const Rng root(cfg.seed);
  Report rep;
  rep.seed = cfg.seed;

  Dataset data = gen_synthetic(cfg.mixture, cfg.n, root.sub(10).seed(), cfg.split);
  const int d = data.dim;

  double epsilon = cfg.epsilon_abs;
  if (epsilon <= 0.0) {
    const auto sd = data.per_dim_std(Split::Train);
    double var = 0.0;
    for (double v : sd) var += v * v;
    epsilon = cfg.epsilon_scale * std::sqrt(var / static_cast<double>(d));
  }
  rep.epsilon = epsilon;

  // Clean posterior estimate and the clean-trained victim baseline.
  const MlpSpec clean_spec{d, cfg.clean_model.hidden, data.num_classes,
                           cfg.clean_model.activation};
  InnerTrainConfig clean_train = cfg.clean_model.train;
  clean_train.seed = root.sub(11).seed();
  Classifier mu_model = train_classifier(data, clean_spec, clean_train);
  CleanPosterior mu = cfg.mu_clean_oracle ? CleanPosterior::from_mixture(cfg.mixture)
                                          : CleanPosterior::from_classifier(mu_model);

  const MlpSpec victim_spec{d, cfg.victim.hidden, data.num_classes, cfg.victim.activation};
  InnerTrainConfig victim_train = cfg.victim.train;
  victim_train.seed = root.sub(12).seed();
  Classifier clean_victim = train_classifier(data, victim_spec, victim_train);

  const std::uint64_t poison_seed = root.sub(13).seed();
  const std::vector<int> poison_rows = select_poison_rows(data, cfg.attack.rho, poison_seed);

  // Attack.
  BilevelConfig attack = cfg.attack;
  attack.epsilon = epsilon;
  attack.seed = root.sub(14).seed();
  const DsaResult dsa = run_dsa(attack, data, mu, poison_rows, nullptr);
  rep.trace = dsa.trace;
  rep.objective_initial = dsa.initial_total;
  rep.objective_final = dsa.final_total;
  rep.flagged_cycles = dsa.flagged_cycles;
  rep.trigger = dsa.trigger;

  if (cfg.warmstart_compare) {
    BilevelConfig cold = attack;
    cold.warm.enabled = false;
    const DsaResult cold_run = run_dsa(cold, data, mu, poison_rows, nullptr);
    rep.trace_cold = cold_run.trace;
    rep.cold_initial = cold_run.initial_total;
    const double threshold = 0.5 * cold_run.initial_total;
    rep.cycles_to_half_warm = cycles_to_reach(dsa.trace, threshold);
    rep.cycles_to_half_cold = cycles_to_reach(cold_run.trace, threshold);
  }

  const TriggerMap dsa_map = dsa.trigger.as_map();
  ShiftTrigger shift;
  shift.c.resize(d);
  for (int j = 0; j < d; ++j) {
    const double s =
        j < static_cast<int>(cfg.baseline_shift_scale.size()) ? cfg.baseline_shift_scale[j] : 1.0;
    shift.c[j] = s * epsilon;
  }
  const TriggerMap shift_map = [shift](std::span<const double> x) { return shift.apply(x); };

  double linf = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    linf = std::max(linf, norm_inf(dsa.trigger.perturbation(data.row(i))));
  rep.trigger_linf_max = linf;

  const int target = cfg.attack.weights.target;
  rep.clean_baseline = evaluate(clean_victim, data, dsa_map, target);

  InnerTrainConfig defense = cfg.defense;
  defense.seed = root.sub(15).seed();
  auto attack_eval = [&](const TriggerMap& trig) {
    Dataset poisoned = poison_dataset(data, trig, cfg.attack.rho, target, poison_seed);
    Classifier victim = train_classifier(poisoned, victim_spec, victim_train);
    AttackEval ev;
    ev.pre = evaluate(victim, poisoned, trig, target);
    ev.fe_tuning =
        evaluate(finetune_defense(victim, poisoned, DefenseMode::FeTuning, defense), poisoned,
                 trig, target);
    ev.ft_init = evaluate(finetune_defense(victim, poisoned, DefenseMode::FtInit, defense),
                          poisoned, trig, target);
    ev.full = evaluate(finetune_defense(victim, poisoned, DefenseMode::Full, defense), poisoned,
                       trig, target);
    return ev;
  };
  rep.dsa = attack_eval(dsa_map);
  rep.shift = attack_eval(shift_map);

  // Density placement and the empirical Bayes reference on the test split.
  std::size_t n_test = 0, bayes_correct = 0;
  double dens_clean = 0.0, dens_dsa = 0.0, dens_shift = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.split[i] != Split::Test) continue;
    ++n_test;
    const auto x = data.row(i);
    dens_clean += gm_log_density(cfg.mixture, x);
    dens_dsa += gm_log_density(cfg.mixture, dsa_map(x));
    dens_shift += gm_log_density(cfg.mixture, shift_map(x));
    const auto post = gm_bayes_posterior(cfg.mixture, x);
    int best = 0;
    for (std::size_t k = 1; k < post.size(); ++k)
      if (post[k] > post[best]) best = static_cast<int>(k);
    if (best == data.labels[i]) ++bayes_correct;
  }
  rep.density_clean = dens_clean / static_cast<double>(n_test);
  rep.density_dsa = dens_dsa / static_cast<double>(n_test);
  rep.density_shift = dens_shift / static_cast<double>(n_test);
  rep.bayes_accuracy = static_cast<double>(bayes_correct) / static_cast<double>(n_test);

  rep.protocol = "mu_clean=" + std::string(cfg.mu_clean_oracle ? "bayes_oracle" : "trained_mlp") +
                 " victim_hidden=" + std::to_string(cfg.victim.hidden.size()) + "x" +
                 (cfg.victim.hidden.empty() ? "0" : std::to_string(cfg.victim.hidden[0])) +
                 " victim_steps=" + std::to_string(cfg.victim.train.steps) +
                 " defense_steps=" + std::to_string(cfg.defense.steps);
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

}  // namespace dsaforge
