#pragma once

// Minimal feedforward differentiation engine: plain forward evaluation, tape
// builders for trainable and frozen parameter sets, reverse-mode gradients
// and exact Hessian-vector products over arbitrary scalar losses.

#include <string>

#include "dsaforge/param_vector.hpp"
#include "dsaforge/tape.hpp"

namespace dsaforge {

enum class Activation { Tanh, Softplus };

inline std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "softplus";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  throw ConfigError("unknown activation '" + s + "' (expected tanh or softplus)");
}

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  Activation activation = Activation::Tanh;

  // Layer chain including the linear output layer. The engine accepts an
  // empty hidden list (pure linear map); validate() enforces the stricter
  // contract used at configuration boundaries.
  std::vector<LayerDims> layout() const {
    std::vector<LayerDims> out;
    int prev = input_dim;
    for (int h : hidden) {
      out.push_back({prev, h});
      prev = h;
    }
    out.push_back({prev, output_dim});
    return out;
  }

  std::size_t param_size() const {
    const auto l = layout();
    return param_count(std::span<const LayerDims>(l));
  }

  void validate() const {
    if (input_dim < 1) throw ConfigError("MlpSpec: input_dim must be >= 1");
    if (output_dim < 1) throw ConfigError("MlpSpec: output_dim must be >= 1");
    if (hidden.empty()) throw ConfigError("MlpSpec: at least one hidden layer required");
    for (int h : hidden)
      if (h < 1) throw ConfigError("MlpSpec: hidden widths must be >= 1");
  }

  bool operator==(const MlpSpec&) const = default;
};

// Per-layer uniform init in +-sqrt(6 / (fan_in + fan_out)).
inline ParamVector glorot_init(const MlpSpec& spec, Rng& rng) {
  ParamVector p;
  p.layout = spec.layout();
  p.values.reserve(spec.param_size());
  for (const auto& l : p.layout) {
    const double bound = std::sqrt(6.0 / (l.in + l.out));
    for (int i = 0; i < l.out * l.in; ++i) p.values.push_back(rng.uniform(-bound, bound));
    for (int i = 0; i < l.out; ++i) p.values.push_back(0.0);
  }
  return p;
}

inline void check_mlp_args(const MlpSpec& spec, const ParamVector& params, std::size_t in_len) {
  if (static_cast<int>(in_len) != spec.input_dim)
    throw ConfigError("mlp_forward: input length " + std::to_string(in_len) +
                      " != spec.input_dim " + std::to_string(spec.input_dim));
  if (params.layout != spec.layout() || params.values.size() != spec.param_size())
    throw ConfigError("mlp_forward: params do not match spec layout");
}

inline std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                       std::span<const double> input) {
  check_mlp_args(spec, params, input.size());
  std::vector<double> cur(input.begin(), input.end());
  std::vector<double> next;
  const auto layout = spec.layout();
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto [in, out] = layout[l];
    next.assign(out, 0.0);
    for (int r = 0; r < out; ++r) {
      double z = params.values[off + static_cast<std::size_t>(out) * in + r];  // bias
      const double* w = &params.values[off + static_cast<std::size_t>(r) * in];
      for (int c = 0; c < in; ++c) z += w[c] * cur[c];
      if (l + 1 < layout.size())
        next[r] = spec.activation == Activation::Tanh ? std::tanh(z) : softplus(z);
      else
        next[r] = z;
    }
    off += param_count(layout[l]);
    cur.swap(next);
  }
  return cur;
}

// --- tape builders ---------------------------------------------------------

template <class S>
using TapeVars = std::vector<typename Tape<S>::Var>;

template <class S>
TapeVars<S> make_leaves(Tape<S>& t, std::span<const double> values) {
  TapeVars<S> vars;
  vars.reserve(values.size());
  for (double v : values) vars.push_back(t.leaf(S{v}));
  return vars;
}

namespace detail {

template <class S>
typename Tape<S>::Var apply_act(Tape<S>& t, Activation act, typename Tape<S>::Var z) {
  return act == Activation::Tanh ? t.unary(Op::Tanh, z) : t.unary(Op::Softplus, z);
}

}  // namespace detail

// Trainable parameters over variable inputs.
template <class S>
TapeVars<S> tape_mlp(Tape<S>& t, const MlpSpec& spec,
                     std::span<const typename Tape<S>::Var> pvars,
                     std::span<const typename Tape<S>::Var> input) {
  using Var = typename Tape<S>::Var;
  TapeVars<S> cur(input.begin(), input.end());
  TapeVars<S> next;
  const auto layout = spec.layout();
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto [in, out] = layout[l];
    next.clear();
    for (int r = 0; r < out; ++r) {
      std::span<const Var> wrow = pvars.subspan(off + static_cast<std::size_t>(r) * in, in);
      Var z = t.dot(wrow, std::span<const Var>(cur)) +
              pvars[off + static_cast<std::size_t>(out) * in + r];
      next.push_back(l + 1 < layout.size() ? detail::apply_act(t, spec.activation, z) : z);
    }
    off += param_count(layout[l]);
    cur.swap(next);
  }
  return cur;
}

// Trainable parameters over constant inputs (first layer uses DotC).
template <class S>
TapeVars<S> tape_mlp(Tape<S>& t, const MlpSpec& spec,
                     std::span<const typename Tape<S>::Var> pvars,
                     std::span<const double> input) {
  using Var = typename Tape<S>::Var;
  TapeVars<S> cur;
  TapeVars<S> next;
  const auto layout = spec.layout();
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto [in, out] = layout[l];
    next.clear();
    for (int r = 0; r < out; ++r) {
      std::span<const Var> wrow = pvars.subspan(off + static_cast<std::size_t>(r) * in, in);
      Var z = l == 0 ? t.dotc(wrow, input) : t.dot(wrow, std::span<const Var>(cur));
      z = z + pvars[off + static_cast<std::size_t>(out) * in + r];
      next.push_back(l + 1 < layout.size() ? detail::apply_act(t, spec.activation, z) : z);
    }
    off += param_count(layout[l]);
    cur.swap(next);
  }
  return cur;
}

// Frozen parameters over variable inputs (weights enter as DotC constants).
template <class S>
TapeVars<S> tape_mlp_frozen(Tape<S>& t, const MlpSpec& spec, const ParamVector& params,
                            std::span<const typename Tape<S>::Var> input) {
  using Var = typename Tape<S>::Var;
  TapeVars<S> cur(input.begin(), input.end());
  TapeVars<S> next;
  const auto layout = spec.layout();
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto [in, out] = layout[l];
    next.clear();
    for (int r = 0; r < out; ++r) {
      std::span<const double> wrow(&params.values[off + static_cast<std::size_t>(r) * in],
                                   static_cast<std::size_t>(in));
      Var z = t.dotc(std::span<const Var>(cur), wrow) +
              params.values[off + static_cast<std::size_t>(out) * in + r];
      next.push_back(l + 1 < layout.size() ? detail::apply_act(t, spec.activation, z) : z);
    }
    off += param_count(layout[l]);
    cur.swap(next);
  }
  return cur;
}

// --- scalar-loss differentiation -------------------------------------------

struct GradReport {
  double value = 0.0;
  ParamVector gradient;
};

// F: (Tape<S>&, span<const Tape<S>::Var>) -> Tape<S>::Var, generic over S.
template <class F>
GradReport loss_grad(F&& loss, const ParamVector& params) {
  Tape<double> t;
  auto pvars = make_leaves(t, params.values);
  auto out = loss(t, std::span<const typename Tape<double>::Var>(pvars));
  const double value = t.value(out);
  if (!std::isfinite(value))
    throw NumericError("loss_grad: non-finite loss value " + std::to_string(value));
  t.backward(out);
  GradReport rep;
  rep.value = value;
  rep.gradient.layout = params.layout;
  rep.gradient.values.reserve(params.size());
  for (const auto& v : pvars) rep.gradient.values.push_back(t.adjoint(v));
  return rep;
}

// Exact H*v by forward-over-reverse: dual components of the parameter leaves
// carry the direction, dual components of their adjoints carry the product.
template <class F>
ParamVector hvp(F&& loss, const ParamVector& params, const ParamVector& v) {
  if (!params.same_layout(v) || params.size() != v.size())
    throw ConfigError("hvp: direction layout does not match parameter layout");
  Tape<Dual> t;
  TapeVars<Dual> pvars;
  pvars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    pvars.push_back(t.leaf(Dual{params.values[i], v.values[i]}));
  auto out = loss(t, std::span<const typename Tape<Dual>::Var>(pvars));
  if (!std::isfinite(t.value(out).v))
    throw NumericError("hvp: non-finite loss value");
  t.backward(out);
  ParamVector r;
  r.layout = params.layout;
  r.values.reserve(params.size());
  for (const auto& pv : pvars) r.values.push_back(t.adjoint(pv).d);
  return r;
}

}  // namespace dsaforge
