#pragma once

// Bilevel solver: alternate CTSM fitting of the time-score network (inner)
// with implicit-gradient updates of the trigger generator (outer).
//
// The hypergradient is
//
//   dF/dphi = dF/dphi|_explicit - grad_phi < grad_theta M, w >,
//   (H_M + mu I) w = grad_theta F,
//
// solved with conjugate gradients. Hessian-vector products and the mixed
// second-order term both come from a single dual-number recording of the
// inner loss: reseeding the dual components of the theta leaves and replaying
// the tape yields H p (theta adjoints) or the mixed term (phi adjoints).

#include "dsaforge/attack_objective.hpp"
#include "dsaforge/bilevel_fwd.hpp"

namespace dsaforge {

template <class ApplyFn>
CgResult cg_solve(ApplyFn&& apply_A, const std::vector<double>& rhs, const CgConfig& cfg) {
  cfg.validate();
  const std::size_t n = rhs.size();
  CgResult res;
  res.x.assign(n, 0.0);
  const double bnorm = norm2(rhs);
  if (bnorm == 0.0) {
    res.residual = 0.0;
    res.converged = true;
    return res;
  }
  std::vector<double> r = rhs;
  std::vector<double> p = rhs;
  std::vector<double> ap(n);
  double rr = dot(r, r);
  for (int it = 0; it < cfg.max_iters; ++it) {
    ap = apply_A(p);
    if (!all_finite(ap)) throw NumericError("cg_solve: non-finite operator output");
    axpy(cfg.damping, p, ap);
    const double pap = dot(p, ap);
    if (pap <= 0.0) break;  // operator not positive along p; keep current iterate
    const double alpha = rr / pap;
    axpy(alpha, p, res.x);
    axpy(-alpha, ap, r);
    const double rr_new = dot(r, r);
    res.iters = it + 1;
    if (std::sqrt(rr_new) <= cfg.tol * bnorm) {
      res.converged = true;
      rr = rr_new;
      break;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  res.residual = std::sqrt(rr);
  return res;
}

// Everything downstream of grad_theta F: records the inner loss once with
// dual scalars, measures ||grad_theta M||, runs CG on (H + mu I) w = rhs via
// tape replay, and returns the mixed term grad_phi <grad_theta M, w>.
template <class MBuild>
CorrectionResult inner_correction(MBuild&& m_build, const ParamVector& phi,
                                  const ParamVector& theta, const std::vector<double>& rhs,
                                  const CgConfig& cfg) {
  using DTape = Tape<Dual>;
  DTape t;
  TapeVars<Dual> phi_vars, theta_vars;
  phi_vars.reserve(phi.size());
  theta_vars.reserve(theta.size());
  for (double v : phi.values) phi_vars.push_back(t.leaf(Dual{v, 0.0}));
  for (double v : theta.values) theta_vars.push_back(t.leaf(Dual{v, 0.0}));
  auto out = m_build(t, std::span<const typename DTape::Var>(phi_vars),
                     std::span<const typename DTape::Var>(theta_vars));
  if (!std::isfinite(t.value(out).v))
    throw NumericError("inner_correction: non-finite inner loss");

  CorrectionResult res;
  t.backward(out);
  {
    double s = 0.0;
    for (const auto& v : theta_vars) {
      const double g = t.adjoint(v).v;
      s += g * g;
    }
    res.inner_grad_norm = std::sqrt(s);
  }

  auto hvp_theta = [&](const std::vector<double>& p) {
    for (std::size_t i = 0; i < theta_vars.size(); ++i)
      t.set_leaf(theta_vars[i], Dual{theta.values[i], p[i]});
    t.replay();
    t.backward(out);
    std::vector<double> hp(theta_vars.size());
    for (std::size_t i = 0; i < theta_vars.size(); ++i) hp[i] = t.adjoint(theta_vars[i]).d;
    return hp;
  };
  const CgResult cg = cg_solve(hvp_theta, rhs, cfg);
  res.cg_residual = cg.residual;
  res.cg_converged = cg.converged;
  res.cg_iters = cg.iters;

  for (std::size_t i = 0; i < theta_vars.size(); ++i)
    t.set_leaf(theta_vars[i], Dual{theta.values[i], cg.x[i]});
  t.replay();
  t.backward(out);
  res.mixed_phi.resize(phi_vars.size());
  for (std::size_t i = 0; i < phi_vars.size(); ++i) res.mixed_phi[i] = t.adjoint(phi_vars[i]).d;
  return res;
}

// Generic implicit hypergradient. f_build / m_build record the outer and
// inner objectives over (phi, theta) leaves; both must be generic over the
// tape scalar type.
template <class FBuild, class MBuild>
HypergradResult implicit_gradient(const ParamVector& phi, const ParamVector& theta,
                                  FBuild&& f_build, MBuild&& m_build, const CgConfig& cfg) {
  Tape<double> ft;
  auto phi_vars = make_leaves(ft, phi.values);
  auto theta_vars = make_leaves(ft, theta.values);
  auto out = f_build(ft, std::span<const typename Tape<double>::Var>(phi_vars),
                     std::span<const typename Tape<double>::Var>(theta_vars));
  HypergradResult res;
  res.value = ft.value(out);
  if (!std::isfinite(res.value)) throw NumericError("implicit_gradient: non-finite outer value");
  ft.backward(out);
  res.grad.layout = phi.layout;
  res.grad.values.resize(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) res.grad.values[i] = ft.adjoint(phi_vars[i]);
  std::vector<double> gtheta(theta.size());
  double gnorm = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    gtheta[i] = ft.adjoint(theta_vars[i]);
    gnorm += gtheta[i] * gtheta[i];
  }
  if (gnorm == 0.0) {
    res.cg_converged = true;
    return res;  // outer objective independent of theta: correction vanishes
  }
  const auto corr = inner_correction(m_build, phi, theta, gtheta, cfg);
  res.cg_residual = corr.cg_residual;
  res.cg_converged = corr.cg_converged;
  res.inner_grad_norm = corr.inner_grad_norm;
  for (std::size_t i = 0; i < phi.size(); ++i) res.grad.values[i] -= corr.mixed_phi[i];
  return res;
}

// Clip to the norm ball, then take a plain descent step.
inline ParamVector outer_step(const ParamVector& phi, const ParamVector& g, double lr,
                              double clip_norm) {
  if (!phi.same_layout(g) || phi.size() != g.size())
    throw ConfigError("outer_step: gradient layout mismatch");
  ParamVector out = phi;
  const double n = norm2(g.values);
  const double s = (clip_norm > 0.0 && n > clip_norm) ? clip_norm / n : 1.0;
  for (std::size_t i = 0; i < phi.size(); ++i) out.values[i] -= lr * s * g.values[i];
  return out;
}

// Joint CTSM loss over trigger and time-score parameters for one fixed set of
// (x0, tau, noise) draws; phi flows through the triggered endpoint into both
// the conditional target and the path sample.
template <class S>
typename Tape<S>::Var build_ctsm_joint(Tape<S>& t, const TriggerNet& trigger,
                                       std::span<const typename Tape<S>::Var> phi,
                                       const TimeScoreNet& snet,
                                       std::span<const typename Tape<S>::Var> theta,
                                       const VpSchedule& schedule,
                                       const std::vector<std::vector<double>>& x0s,
                                       const std::vector<PathDraw>& draws) {
  using Var = typename Tape<S>::Var;
  if (x0s.empty()) throw ConfigError("build_ctsm_joint: empty batch");
  const int d = static_cast<int>(x0s[0].size());
  Var acc;
  std::vector<Var> diff(d);
  std::vector<double> coeff(d);
  std::vector<Var> input(d + 1);
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    const auto& x0 = x0s[i];
    const auto& dr = draws[i];
    const auto se = schedule_eval(schedule, dr.tau);
    const double sd = std::sqrt(se.k);
    auto x1 = tape_apply_trigger(t, trigger, phi, std::span<const double>(x0));
    // target = -(d/2) k'/k + <x1 - x0, sd xi>/k + k' ||xi||^2 / (2k)
    double xi_sq = 0.0;
    for (int k = 0; k < d; ++k) {
      diff[k] = x1[k] - x0[k];
      coeff[k] = sd * dr.noise[k] / se.k;
      xi_sq += dr.noise[k] * dr.noise[k];
    }
    const double const_part = -0.5 * d * se.k_prime / se.k + 0.5 * se.k_prime * xi_sq / se.k;
    Var target = t.dotc(std::span<const Var>(diff), std::span<const double>(coeff)) + const_part;
    // x_tau = alpha x0 + (1 - alpha) x1 + sd xi
    for (int k = 0; k < d; ++k)
      input[k] = x1[k] * (1.0 - se.alpha) + (se.alpha * x0[k] + sd * dr.noise[k]);
    input[d] = t.leaf(S{dr.tau});
    Var pred = tape_mlp(t, snet.spec, theta, std::span<const Var>(input))[0];
    Var term = square(target - pred) * tsn_weight(schedule, dr.tau, d);
    acc = acc.valid() ? acc + term : term;
  }
  return acc * (1.0 / static_cast<double>(x0s.size()));
}

inline void BilevelConfig::validate() const {
  if (cycles < 0) throw ConfigError("cycles must be >= 0");
  if (outer_steps < 1) throw ConfigError("outer_steps must be >= 1");
  if (!(outer_lr > 0.0)) throw ConfigError("outer_lr must be > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must be in (0,1)");
  if (quad_nodes < 2) throw ConfigError("quad_nodes must be >= 2");
  if (hyper_batch < 1) throw ConfigError("hyper_batch must be >= 1");
  inner.validate("inner");
  weights.validate();
  cg.validate();
}

inline DsaResult run_dsa(const BilevelConfig& cfg, const Dataset& clean,
                         const CleanPosterior& mu_clean, std::vector<int> outer_rows,
                         const CheckpointSink& sink) {
  cfg.validate();
  if (clean.size() == 0) throw ConfigError("run_dsa: empty dataset");
  if (cfg.weights.target >= mu_clean.num_classes())
    throw ConfigError("run_dsa: target class out of range");
  const Rng root(cfg.seed);
  const int d = clean.dim;

  DsaResult res;
  {
    Rng r = root.sub(1);
    res.trigger = TriggerNet::init(d, cfg.trigger_hidden, cfg.activation, cfg.epsilon, r);
  }
  if (cfg.warm.enabled) {
    const auto sd = clean.per_dim_std(Split::Train);
    double mean_sd = 0.0;
    for (double v : sd) mean_sd += v;
    mean_sd /= static_cast<double>(sd.size());
    InnerTrainConfig dsm_cfg = cfg.warm.dsm;
    dsm_cfg.seed = root.sub(3).seed();
    res.score = dsm_fit_score(clean, cfg.warm.noise_sigma_scale * mean_sd, dsm_cfg, {},
                              cfg.warm.score_hidden, cfg.activation);
    InnerTrainConfig reg_cfg = cfg.warm.regress;
    reg_cfg.seed = root.sub(4).seed();
    res.trigger = warm_start(std::move(res.trigger), res.score, cfg.warm.lambda, clean, reg_cfg);
  }
  {
    Rng r = root.sub(2);
    res.timescore = TimeScoreNet::init(d, cfg.time_hidden, cfg.activation, r);
  }

  if (outer_rows.empty())
    outer_rows = select_poison_rows(clean, cfg.rho, root.sub(7).seed());
  std::vector<std::vector<double>> outer_batch;
  outer_batch.reserve(outer_rows.size());
  for (int i : outer_rows) {
    const auto r = clean.row(i);
    outer_batch.emplace_back(r.begin(), r.end());
  }
  if (outer_batch.empty()) throw ConfigError("run_dsa: empty outer batch");

  const Quadrature quad = Quadrature::gauss_legendre(cfg.quad_nodes);
  const MixtureConstant mc = c_rho(cfg.rho);
  const std::vector<int> train_rows = clean.rows_in(Split::Train);
  Optimizer inner_opt(cfg.inner.optimizer);
  const long inner_horizon = static_cast<long>(cfg.cycles) * cfg.inner.steps;
  Rng hyper_rng = root.sub(6);

  for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
    InnerTrainConfig inner_cfg = cfg.inner;
    inner_cfg.seed = root.sub(0x1000 + static_cast<std::uint64_t>(cycle)).seed();
    try {
      res.timescore = fit_time_score(std::move(res.timescore), cfg.schedule, clean,
                                     res.trigger.as_map(), inner_cfg, &res.inner_trace, &inner_opt,
                                     static_cast<long>(cycle - 1) * cfg.inner.steps, inner_horizon);
    } catch (const NumericError& e) {
      throw NumericError("run_dsa: cycle " + std::to_string(cycle) + ": " + e.what());
    }

    bool cycle_flagged = false;
    for (int step = 0; step < cfg.outer_steps; ++step) {
      // Fixed draws for this step's inner-loss surrogate.
      std::vector<std::vector<double>> x0s;
      x0s.reserve(cfg.hyper_batch);
      std::vector<PathDraw> draws(cfg.hyper_batch);
      for (int b = 0; b < cfg.hyper_batch; ++b) {
        const auto r = clean.row(train_rows[hyper_rng.uniform_int(
            static_cast<int>(train_rows.size()))]);
        x0s.emplace_back(r.begin(), r.end());
        draws[b].tau = hyper_rng.uniform();
        draws[b].noise.resize(d);
        for (auto& nv : draws[b].noise) nv = hyper_rng.normal();
      }

      // Outer objective tape over (phi, theta).
      Tape<double> ft;
      auto phi_vars = make_leaves(ft, res.trigger.params.values);
      auto theta_vars = make_leaves(ft, res.timescore.params.values);
      const auto nodes = build_objective(ft, res.trigger,
                                         std::span<const Tape<double>::Var>(phi_vars),
                                         res.timescore,
                                         std::span<const Tape<double>::Var>(theta_vars), mu_clean,
                                         quad, mc, cfg.weights, outer_batch);
      DsaTraceRow row;
      row.cycle = cycle;
      row.step = step;
      row.l1 = ft.value(nodes.l1);
      row.l2 = ft.value(nodes.l2);
      row.l3 = ft.value(nodes.l3);
      row.total = ft.value(nodes.total);
      if (!std::isfinite(row.total))
        throw NumericError("run_dsa: non-finite objective at cycle " + std::to_string(cycle) +
                           " step " + std::to_string(step));
      ft.backward(nodes.total);
      ParamVector gphi;
      gphi.layout = res.trigger.params.layout;
      gphi.values.resize(phi_vars.size());
      for (std::size_t i = 0; i < phi_vars.size(); ++i) gphi.values[i] = ft.adjoint(phi_vars[i]);
      std::vector<double> gtheta(theta_vars.size());
      for (std::size_t i = 0; i < theta_vars.size(); ++i) gtheta[i] = ft.adjoint(theta_vars[i]);

      auto m_build = [&](auto& tape, auto phi_span, auto theta_span) {
        return build_ctsm_joint(tape, res.trigger, phi_span, res.timescore, theta_span,
                                cfg.schedule, x0s, draws);
      };
      const auto corr =
          inner_correction(m_build, res.trigger.params, res.timescore.params, gtheta, cfg.cg);
      for (std::size_t i = 0; i < gphi.values.size(); ++i)
        gphi.values[i] -= corr.mixed_phi[i];

      row.inner_grad_norm = corr.inner_grad_norm;
      row.cg_residual = corr.cg_residual;
      res.trace.push_back(row);
      if (corr.inner_grad_norm > cfg.inner_grad_flag) cycle_flagged = true;

      res.trigger.params = outer_step(res.trigger.params, gphi, cfg.outer_lr, cfg.clip_norm);
    }
    if (cycle_flagged) ++res.flagged_cycles;
    if (sink && cfg.checkpoint_every > 0 && cycle % cfg.checkpoint_every == 0)
      sink(cycle, res.trigger);
  }

  if (!res.trace.empty()) {
    res.initial_total = res.trace.front().total;
    res.final_total = res.trace.back().total;
  }
  return res;
}

inline void write_dsa_trace_csv(const std::vector<DsaTraceRow>& trace,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_dsa_trace_csv: cannot open " + path.string());
  out << "cycle,step,l1,l2,l3,total,inner_grad_norm,cg_residual\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.cycle, r.step,
                  r.l1, r.l2, r.l3, r.total, r.inner_grad_norm, r.cg_residual);
    out << buf;
  }
}

}  // namespace dsaforge
