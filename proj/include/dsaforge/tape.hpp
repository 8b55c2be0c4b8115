#pragma once

// Reverse-mode tape with an optional dual-number scalar type.
//
// Recording with S = double and running backward() gives exact first-order
// gradients. Recording with S = Dual and seeding the dual components of
// selected leaves gives forward-over-reverse second order: after backward(),
// the dual component of a leaf adjoint is a row of the Hessian-vector /
// mixed-partial product with respect to the seeded direction. One tape can be
// re-evaluated with replay() after set_leaf() updates, which is what the CG
// loop uses to get many Hessian-vector products out of a single recording.
//
// Node-local partials are computed at evaluation time (record or replay) with
// the same scalar type as the values, which is what makes the dual route
// exact rather than a finite-difference approximation.

#include <cstdint>
#include <span>
#include <vector>

#include "dsaforge/common.hpp"

namespace dsaforge {

struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit from double is intended
  Dual(double value, double deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }

  friend Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator-(Dual a) { return {-a.v, -a.d}; }
  friend Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator*(Dual a, double c) { return {a.v * c, a.d * c}; }
  friend Dual operator*(double c, Dual a) { return a * c; }
  friend Dual operator/(Dual a, Dual b) {
    const double q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
  }
};

inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
  const double r = std::sqrt(a.v);
  return {r, a.d * 0.5 / r};
}
inline Dual sigmoid(Dual a) {
  const double s = sigmoid(a.v);
  return {s, a.d * s * (1.0 - s)};
}
inline Dual softplus(Dual a) {
  return {softplus(a.v), a.d * sigmoid(a.v)};
}

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Square,
  Recip,
  Tanh,
  Softplus,
  Sigmoid,
  Exp,
  Log,
  Sqrt,
  AddC,   // a + c
  MulC,   // a * c
  MinC,   // min(a, c); subgradient 1 on the a-branch
  Dot,    // sum_i val(na[i]) * val(nb[i]), operand ids in aux_nodes
  DotC,   // sum_i val(n[i]) * c[i], ids in aux_nodes, c in aux_consts
};

template <class S>
class Tape {
public:
  class Var {
  public:
    Var() = default;
    std::int32_t id() const { return id_; }
    bool valid() const { return id_ >= 0; }

    friend Var operator+(Var a, Var b) { return a.t_->add(a, b); }
    friend Var operator-(Var a, Var b) { return a.t_->sub(a, b); }
    friend Var operator*(Var a, Var b) { return a.t_->mul(a, b); }
    friend Var operator/(Var a, Var b) { return a.t_->div(a, b); }
    friend Var operator-(Var a) { return a.t_->neg(a); }
    friend Var operator+(Var a, double c) { return a.t_->add_c(a, c); }
    friend Var operator+(double c, Var a) { return a.t_->add_c(a, c); }
    friend Var operator-(Var a, double c) { return a.t_->add_c(a, -c); }
    friend Var operator-(double c, Var a) { return a.t_->add_c(a.t_->neg(a), c); }
    friend Var operator*(Var a, double c) { return a.t_->mul_c(a, c); }
    friend Var operator*(double c, Var a) { return a.t_->mul_c(a, c); }
    friend Var operator/(Var a, double c) { return a.t_->mul_c(a, 1.0 / c); }
    friend Var operator/(double c, Var a) { return a.t_->mul_c(a.t_->recip(a), c); }

    friend Var tanh(Var a) { return a.t_->unary(Op::Tanh, a); }
    friend Var softplus(Var a) { return a.t_->unary(Op::Softplus, a); }
    friend Var sigmoid(Var a) { return a.t_->unary(Op::Sigmoid, a); }
    friend Var exp(Var a) { return a.t_->unary(Op::Exp, a); }
    friend Var log(Var a) { return a.t_->unary(Op::Log, a); }
    friend Var sqrt(Var a) { return a.t_->unary(Op::Sqrt, a); }
    friend Var square(Var a) { return a.t_->unary(Op::Square, a); }
    friend Var min_c(Var a, double c) { return a.t_->min_const(a, c); }

  private:
    friend class Tape;
    Var(Tape* t, std::int32_t id) : t_(t), id_(id) {}
    Tape* t_ = nullptr;
    std::int32_t id_ = -1;
  };

  Var leaf(S v) {
    const std::int32_t id = push(Op::Leaf, -1, -1);
    val_[id] = v;
    return Var(this, id);
  }

  void set_leaf(Var x, S v) { val_[x.id()] = v; }

  S value(Var x) const { return val_[x.id()]; }
  S adjoint(Var x) const { return adj_[x.id()]; }

  Var add(Var a, Var b) { return eval_push(Op::Add, a.id(), b.id()); }
  Var sub(Var a, Var b) { return eval_push(Op::Sub, a.id(), b.id()); }
  Var mul(Var a, Var b) { return eval_push(Op::Mul, a.id(), b.id()); }
  Var div(Var a, Var b) { return eval_push(Op::Div, a.id(), b.id()); }
  Var neg(Var a) { return eval_push(Op::Neg, a.id(), -1); }
  Var recip(Var a) { return eval_push(Op::Recip, a.id(), -1); }
  Var unary(Op op, Var a) { return eval_push(op, a.id(), -1); }

  Var add_c(Var a, double c) {
    const std::int32_t id = push(Op::AddC, a.id(), -1);
    cval_[id] = c;
    eval(id);
    return Var(this, id);
  }
  Var mul_c(Var a, double c) {
    const std::int32_t id = push(Op::MulC, a.id(), -1);
    cval_[id] = c;
    eval(id);
    return Var(this, id);
  }
  Var min_const(Var a, double c) {
    const std::int32_t id = push(Op::MinC, a.id(), -1);
    cval_[id] = c;
    eval(id);
    return Var(this, id);
  }

  Var dot(std::span<const Var> a, std::span<const Var> b) {
    const std::int32_t id = push(Op::Dot, static_cast<std::int32_t>(aux_nodes_.size()),
                                 static_cast<std::int32_t>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
      aux_nodes_.push_back(a[i].id());
      aux_nodes_.push_back(b[i].id());
    }
    eval(id);
    return Var(this, id);
  }

  Var dotc(std::span<const Var> nodes, std::span<const double> consts) {
    const std::int32_t id = push(Op::DotC, static_cast<std::int32_t>(aux_nodes_.size()),
                                 static_cast<std::int32_t>(nodes.size()));
    caux_[id] = static_cast<std::int32_t>(aux_consts_.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      aux_nodes_.push_back(nodes[i].id());
      aux_consts_.push_back(consts[i]);
    }
    eval(id);
    return Var(this, id);
  }

  // Mean of a list of vars, accumulated in index order.
  Var mean(std::span<const Var> xs) {
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return mul_c(acc, 1.0 / static_cast<double>(xs.size()));
  }

  // Recompute all node values and partials from current leaf values.
  void replay() {
    const std::int32_t n = static_cast<std::int32_t>(op_.size());
    for (std::int32_t i = 0; i < n; ++i)
      if (op_[i] != Op::Leaf) eval(i);
  }

  void backward(Var out) {
    adj_.assign(op_.size(), S{});
    adj_[out.id()] = S{1.0};
    for (std::int32_t i = static_cast<std::int32_t>(op_.size()) - 1; i >= 0; --i) {
      const S g = adj_[i];
      if (value_of(g) == 0.0 && !is_dual_nonzero(g)) continue;
      switch (op_[i]) {
        case Op::Leaf:
          break;
        case Op::Dot: {
          const std::int32_t base = a_[i];
          const std::int32_t cnt = b_[i];
          for (std::int32_t k = 0; k < cnt; ++k) {
            const std::int32_t na = aux_nodes_[base + 2 * k];
            const std::int32_t nb = aux_nodes_[base + 2 * k + 1];
            adj_[na] += g * val_[nb];
            adj_[nb] += g * val_[na];
          }
          break;
        }
        case Op::DotC: {
          const std::int32_t base = a_[i];
          const std::int32_t cnt = b_[i];
          const std::int32_t cbase = caux_[i];
          for (std::int32_t k = 0; k < cnt; ++k)
            adj_[aux_nodes_[base + k]] += g * aux_consts_[cbase + k];
          break;
        }
        default:
          if (a_[i] >= 0) adj_[a_[i]] += g * pa_[i];
          if (b_[i] >= 0) adj_[b_[i]] += g * pb_[i];
      }
    }
  }

  std::size_t size() const { return op_.size(); }

  void reserve(std::size_t n) {
    op_.reserve(n);
    a_.reserve(n);
    b_.reserve(n);
    val_.reserve(n);
    pa_.reserve(n);
    pb_.reserve(n);
    cval_.reserve(n);
    caux_.reserve(n);
  }

private:
  static bool is_dual_nonzero(double) { return false; }
  static bool is_dual_nonzero(const Dual& x) { return x.d != 0.0; }

  std::int32_t push(Op op, std::int32_t a, std::int32_t b) {
    op_.push_back(op);
    a_.push_back(a);
    b_.push_back(b);
    val_.push_back(S{});
    pa_.push_back(S{});
    pb_.push_back(S{});
    cval_.push_back(0.0);
    caux_.push_back(-1);
    return static_cast<std::int32_t>(op_.size()) - 1;
  }

  Var eval_push(Op op, std::int32_t a, std::int32_t b) {
    const std::int32_t id = push(op, a, b);
    eval(id);
    return Var(this, id);
  }

  void eval(std::int32_t i) {
    const std::int32_t ia = a_[i];
    const std::int32_t ib = b_[i];
    switch (op_[i]) {
      case Op::Leaf:
        break;
      case Op::Add:
        val_[i] = val_[ia] + val_[ib];
        pa_[i] = S{1.0};
        pb_[i] = S{1.0};
        break;
      case Op::Sub:
        val_[i] = val_[ia] - val_[ib];
        pa_[i] = S{1.0};
        pb_[i] = S{-1.0};
        break;
      case Op::Mul:
        val_[i] = val_[ia] * val_[ib];
        pa_[i] = val_[ib];
        pb_[i] = val_[ia];
        break;
      case Op::Div: {
        const S q = val_[ia] / val_[ib];
        val_[i] = q;
        pa_[i] = S{1.0} / val_[ib];
        pb_[i] = -q / val_[ib];
        break;
      }
      case Op::Neg:
        val_[i] = -val_[ia];
        pa_[i] = S{-1.0};
        break;
      case Op::Square:
        val_[i] = val_[ia] * val_[ia];
        pa_[i] = S{2.0} * val_[ia];
        break;
      case Op::Recip: {
        const S r = S{1.0} / val_[ia];
        val_[i] = r;
        pa_[i] = -r * r;
        break;
      }
      case Op::Tanh: {
        using std::tanh;
        const S t = tanh(val_[ia]);
        val_[i] = t;
        pa_[i] = S{1.0} - t * t;
        break;
      }
      case Op::Softplus: {
        val_[i] = softplus_s(val_[ia]);
        pa_[i] = sigmoid_s(val_[ia]);
        break;
      }
      case Op::Sigmoid: {
        const S s = sigmoid_s(val_[ia]);
        val_[i] = s;
        pa_[i] = s * (S{1.0} - s);
        break;
      }
      case Op::Exp: {
        using std::exp;
        const S e = exp(val_[ia]);
        val_[i] = e;
        pa_[i] = e;
        break;
      }
      case Op::Log: {
        using std::log;
        val_[i] = log(val_[ia]);
        pa_[i] = S{1.0} / val_[ia];
        break;
      }
      case Op::Sqrt: {
        using std::sqrt;
        const S r = sqrt(val_[ia]);
        val_[i] = r;
        pa_[i] = S{0.5} / r;
        break;
      }
      case Op::AddC:
        val_[i] = val_[ia] + S{cval_[i]};
        pa_[i] = S{1.0};
        break;
      case Op::MulC:
        val_[i] = val_[ia] * cval_[i];
        pa_[i] = S{cval_[i]};
        break;
      case Op::MinC:
        if (value_of(val_[ia]) <= cval_[i]) {
          val_[i] = val_[ia];
          pa_[i] = S{1.0};
        } else {
          val_[i] = S{cval_[i]};
          pa_[i] = S{0.0};
        }
        break;
      case Op::Dot: {
        S s{};
        const std::int32_t base = a_[i];
        const std::int32_t cnt = b_[i];
        for (std::int32_t k = 0; k < cnt; ++k)
          s += val_[aux_nodes_[base + 2 * k]] * val_[aux_nodes_[base + 2 * k + 1]];
        val_[i] = s;
        break;
      }
      case Op::DotC: {
        S s{};
        const std::int32_t base = a_[i];
        const std::int32_t cnt = b_[i];
        const std::int32_t cbase = caux_[i];
        for (std::int32_t k = 0; k < cnt; ++k)
          s += val_[aux_nodes_[base + k]] * aux_consts_[cbase + k];
        val_[i] = s;
        break;
      }
    }
  }

  static double sigmoid_s(double x) { return sigmoid(x); }
  static Dual sigmoid_s(Dual x) { return sigmoid(x); }
  static double softplus_s(double x) { return softplus(x); }
  static Dual softplus_s(Dual x) { return softplus(x); }

  std::vector<Op> op_;
  std::vector<std::int32_t> a_, b_;
  std::vector<S> val_, pa_, pb_;
  std::vector<S> adj_;
  std::vector<double> cval_;          // scalar constant per node (AddC/MulC/MinC)
  std::vector<std::int32_t> caux_;    // offset into aux_consts_ (DotC)
  std::vector<std::int32_t> aux_nodes_;
  std::vector<double> aux_consts_;
};

}  // namespace dsaforge
