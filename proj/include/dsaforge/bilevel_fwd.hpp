#pragma once

// Configuration and result types of the bilevel solver, kept separate so the
// config layer can name them without pulling in the solver itself.

#include <functional>

#include "dsaforge/attack_objective.hpp"

namespace dsaforge {

struct CgConfig {
  int max_iters = 30;
  double damping = 1e-3;
  double tol = 1e-8;

  void validate() const {
    if (max_iters < 1 || max_iters > 1000) throw ConfigError("cg.max_iters must be in [1,1000]");
    if (!(damping > 0.0)) throw ConfigError("cg.damping must be > 0");
    if (!(tol > 0.0)) throw ConfigError("cg.tol must be > 0");
  }
};

struct CgResult {
  std::vector<double> x;
  double residual = 0.0;
  int iters = 0;
  bool converged = false;
};

struct CorrectionResult {
  std::vector<double> mixed_phi;  // grad_phi <grad_theta M, w>
  double cg_residual = 0.0;
  bool cg_converged = false;
  int cg_iters = 0;
  double inner_grad_norm = 0.0;  // ||grad_theta M|| at the current iterate
};

struct HypergradResult {
  ParamVector grad;
  double value = 0.0;
  double cg_residual = 0.0;
  bool cg_converged = false;
  double inner_grad_norm = 0.0;
};

struct WarmStartConfig {
  bool enabled = true;
  InnerTrainConfig dsm{1500, 128, 1e-2, 1e-4, OptKind::Adam, 0};
  InnerTrainConfig regress{800, 128, 1e-2, 1e-4, OptKind::Adam, 0};
  double lambda = -10.0;
  double noise_sigma_scale = 0.1;  // times the mean per-dimension train std
  std::vector<int> score_hidden = {32, 32};
};

struct BilevelConfig {
  int cycles = 150;
  InnerTrainConfig inner{400, 128, 1e-3, 1e-5, OptKind::Adam, 0};
  int outer_steps = 30;
  double outer_lr = 1e-2;
  double clip_norm = 10.0;
  ObjectiveWeights weights;
  CgConfig cg;
  double epsilon = 0.0;  // absolute l-infinity budget, resolved by the caller
  std::uint64_t seed = 0;
  double rho = 0.05;
  std::vector<int> trigger_hidden = {32, 32};
  std::vector<int> time_hidden = {48, 48};
  Activation activation = Activation::Tanh;
  WarmStartConfig warm;
  int quad_nodes = 16;
  int hyper_batch = 256;
  VpSchedule schedule;
  int checkpoint_every = 0;  // 0 disables checkpoints
  double inner_grad_flag = 1e-2;

  void validate() const;
};

struct DsaTraceRow {
  int cycle = 0;
  int step = 0;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, total = 0.0;
  double inner_grad_norm = 0.0;
  double cg_residual = 0.0;
};

struct DsaResult {
  TriggerNet trigger;
  TimeScoreNet timescore;
  ScoreNet score;  // warm-start score network (untrained if warm start is off)
  std::vector<DsaTraceRow> trace;
  FitTrace inner_trace;
  double initial_total = 0.0;
  double final_total = 0.0;
  int flagged_cycles = 0;  // cycles whose inner gradient norm exceeded the flag
};

using CheckpointSink = std::function<void(int, const TriggerNet&)>;

}  // namespace dsaforge
