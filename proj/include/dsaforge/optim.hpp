#pragma once

// First-order optimizers and the cosine step-size schedule used by every
// training loop in the pipeline.

#include "dsaforge/common.hpp"

namespace dsaforge {

// lr(s) = lr_end + 0.5 (lr_start - lr_end) (1 + cos(pi s / total)); endpoints
// exact at s = 0 and s = total.
inline double cosine_lr(double lr_start, double lr_end, long step, long total) {
  if (total <= 0) return lr_start;
  const double c = std::cos(3.14159265358979323846 * static_cast<double>(step) /
                            static_cast<double>(total));
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + c);
}

enum class OptKind { Adam, Sgd };

inline std::string to_string(OptKind k) { return k == OptKind::Adam ? "adam" : "sgd"; }

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "adam") return OptKind::Adam;
  if (s == "sgd") return OptKind::Sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

struct InnerTrainConfig {
  int steps = 400;
  int batch_size = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  OptKind optimizer = OptKind::Adam;
  std::uint64_t seed = 0;

  void validate(const std::string& where) const {
    if (steps < 0) throw ConfigError(where + ".steps must be >= 0");
    if (batch_size < 1) throw ConfigError(where + ".batch must be >= 1");
    if (lr_end > lr_start) throw ConfigError(where + ".lr_end must be <= lr_start");
  }
};

// Adam with the standard constants. A coordinate whose gradient is exactly
// zero on every step is left bitwise unchanged (its moments stay zero), which
// the layer-freezing defenses rely on.
class Adam {
public:
  void step(std::vector<double>& params, std::span<const double> grad, double lr) {
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_);
    const double c2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad[i];
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      if (mhat != 0.0 || vhat != 0.0)
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

class Optimizer {
public:
  explicit Optimizer(OptKind kind) : kind_(kind) {}

  void step(std::vector<double>& params, std::span<const double> grad, double lr) {
    if (kind_ == OptKind::Adam) {
      adam_.step(params, grad, lr);
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    }
  }

private:
  OptKind kind_;
  Adam adam_;
};

}  // namespace dsaforge
