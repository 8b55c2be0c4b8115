#pragma once

// Gauss-Legendre quadrature mapped to (0,1) with weights normalized to sum
// to one. Nodes never touch the interval endpoints, so integrands are only
// evaluated where the variance-schedule floor is inactive.

#include "dsaforge/common.hpp"

namespace dsaforge {

struct Quadrature {
  std::vector<double> nodes;    // strictly increasing, in (0,1)
  std::vector<double> weights;  // positive, sum to 1

  // Newton iteration on the Legendre polynomial recurrence.
  static Quadrature gauss_legendre(int n) {
    if (n < 1) throw ConfigError("gauss_legendre: need n >= 1");
    std::vector<double> x(n), w(n);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
      double z = std::cos(3.14159265358979323846 * (i + 0.75) / (n + 0.5));
      double z1, pp;
      do {
        double p1 = 1.0, p2 = 0.0;
        for (int j = 0; j < n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
        }
        pp = n * (z * p1 - p2) / (z * z - 1.0);
        z1 = z;
        z = z1 - p1 / pp;
      } while (std::abs(z - z1) > 1e-15);
      x[i] = -z;
      x[n - 1 - i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
      w[n - 1 - i] = w[i];
    }
    Quadrature q;
    q.nodes.resize(n);
    q.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      q.nodes[i] = 0.5 * (x[i] + 1.0);  // map [-1,1] -> (0,1)
      q.weights[i] = 0.5 * w[i];
    }
    return q;
  }

  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
  }

  void check() const {
    if (nodes.size() != weights.size() || nodes.empty())
      throw ConfigError("Quadrature: node/weight size mismatch");
    double ws = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] <= 0.0 || nodes[i] >= 1.0) throw ConfigError("Quadrature: node outside (0,1)");
      if (i > 0 && nodes[i] <= nodes[i - 1])
        throw ConfigError("Quadrature: nodes not strictly increasing");
      if (weights[i] <= 0.0) throw ConfigError("Quadrature: nonpositive weight");
      ws += weights[i];
    }
    if (std::abs(ws - 1.0) > 1e-12) throw ConfigError("Quadrature: weights do not sum to 1");
  }
};

}  // namespace dsaforge
