#include <catch2/catch_amalgamated.hpp>

#include "dsaforge/mlp.hpp"

using namespace dsaforge;

namespace {

// Independent forward pass: plain matrix-multiply chain sharing nothing with
// mlp_forward except the parameter layout convention.
std::vector<double> oracle_forward(const MlpSpec& spec, const ParamVector& p,
                                   const std::vector<double>& x) {
  std::vector<double> cur = x;
  std::size_t off = 0;
  const auto layout = spec.layout();
  for (std::size_t l = 0; l < layout.size(); ++l) {
    std::vector<double> next(layout[l].out, 0.0);
    for (int r = 0; r < layout[l].out; ++r) {
      double z = 0.0;
      for (int c = 0; c < layout[l].in; ++c)
        z += p.values[off + static_cast<std::size_t>(r) * layout[l].in + c] * cur[c];
      z += p.values[off + static_cast<std::size_t>(layout[l].out) * layout[l].in + r];
      if (l + 1 < layout.size())
        next[r] = spec.activation == Activation::Tanh ? std::tanh(z) : std::log1p(std::exp(z));
      else
        next[r] = z;
    }
    off += param_count(layout[l]);
    cur = next;
  }
  return cur;
}

// Regression loss used by the gradient / HVP checks below.
template <class TapeT>
typename TapeT::Var regression_loss(TapeT& t, std::span<const typename TapeT::Var> p,
                                    const MlpSpec& spec, const std::vector<std::vector<double>>& xs,
                                    const std::vector<double>& ys) {
  typename TapeT::Var acc;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto out = tape_mlp(t, spec, p, std::span<const double>(xs[i]));
    auto r = out[0] - ys[i];
    auto sq = square(r);
    acc = acc.valid() ? t.add(acc, sq) : sq;
  }
  return acc * (1.0 / static_cast<double>(xs.size()));
}

struct Problem {
  MlpSpec spec;
  ParamVector params;
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;

  double loss_at(const ParamVector& p) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = mlp_forward(spec, p, xs[i])[0] - ys[i];
      acc += r * r;
    }
    return acc / static_cast<double>(xs.size());
  }

  auto builder() const {
    return [this](auto& t, auto p) { return regression_loss(t, p, spec, xs, ys); };
  }
};

Problem make_problem(std::uint64_t seed, int dim = 3, std::vector<int> hidden = {5, 4}) {
  Problem pr;
  Rng rng(seed);
  pr.spec = MlpSpec{dim, std::move(hidden), 1,
                    seed % 2 == 0 ? Activation::Tanh : Activation::Softplus};
  pr.params = glorot_init(pr.spec, rng);
  for (int i = 0; i < 8; ++i) {
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.normal();
    pr.xs.push_back(x);
    pr.ys.push_back(rng.normal());
  }
  return pr;
}

}  // namespace

TEST_CASE("mlp_forward: zero parameters give zero output") {
  MlpSpec spec{2, {4}, 3, Activation::Tanh};
  ParamVector p{spec.layout(), std::vector<double>(spec.param_size(), 0.0)};
  const auto out = mlp_forward(spec, p, std::vector<double>{1.5, -2.0});
  REQUIRE(out.size() == 3);
  for (double v : out) REQUIRE(v == 0.0);
}

TEST_CASE("mlp_forward: single linear layer with identity weights") {
  // Engine-level spec without hidden layers: output layer is linear.
  MlpSpec spec{2, {}, 2, Activation::Tanh};
  ParamVector p{spec.layout(), {1.0, 0.0, 0.0, 1.0, 0.0, 0.0}};
  const auto out = mlp_forward(spec, p, std::vector<double>{1.0, 2.0});
  REQUIRE(out[0] == 1.0);
  REQUIRE(out[1] == 2.0);
}

TEST_CASE("mlp_forward: matches independent matrix-multiply oracle") {
  for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
    auto pr = make_problem(seed);
    Rng rng(seed + 100);
    std::vector<double> x(pr.spec.input_dim);
    for (auto& v : x) v = rng.normal();
    const auto got = mlp_forward(pr.spec, pr.params, x);
    const auto want = oracle_forward(pr.spec, pr.params, x);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
  }
}

TEST_CASE("mlp_forward: dimension mismatch raises configuration error") {
  MlpSpec spec{2, {4}, 1, Activation::Tanh};
  Rng rng(1);
  auto p = glorot_init(spec, rng);
  REQUIRE_THROWS_AS(mlp_forward(spec, p, std::vector<double>{1.0, 2.0, 3.0}), ConfigError);
}

TEST_CASE("loss_grad: quadratic and constant losses") {
  ParamVector theta{{}, {3.0, -1.0}};
  auto half_sq = [](auto& t, auto p) {
    auto acc = square(p[0]) * 0.5;
    for (std::size_t i = 1; i < p.size(); ++i) acc = acc + square(p[i]) * 0.5;
    return acc;
  };
  auto rep = loss_grad(half_sq, theta);
  REQUIRE_THAT(rep.value, Catch::Matchers::WithinAbs(5.0, 1e-15));
  REQUIRE(rep.gradient.values[0] == 3.0);
  REQUIRE(rep.gradient.values[1] == -1.0);

  auto constant = [](auto& t, auto p) { return p[0] * 0.0 + 7.0; };
  auto crep = loss_grad(constant, theta);
  REQUIRE(crep.value == 7.0);
  REQUIRE(crep.gradient.values[0] == 0.0);
  REQUIRE(crep.gradient.values[1] == 0.0);
}

TEST_CASE("loss_grad: non-finite loss raises numeric error") {
  ParamVector theta{{}, {0.0}};
  auto bad = [](auto& t, auto p) { return log(p[0]); };  // log(0) = -inf
  REQUIRE_THROWS_AS(loss_grad(bad, theta), NumericError);
}

TEST_CASE("loss_grad: matches central finite differences on a random MLP loss") {
  auto pr = make_problem(21);
  const auto rep = loss_grad(pr.builder(), pr.params);
  const double h = 1e-5;
  ParamVector probe = pr.params;
  for (std::size_t i = 0; i < pr.params.size(); ++i) {
    probe.values[i] = pr.params.values[i] + h;
    const double fp = pr.loss_at(probe);
    probe.values[i] = pr.params.values[i] - h;
    const double fm = pr.loss_at(probe);
    probe.values[i] = pr.params.values[i];
    const double fd = (fp - fm) / (2.0 * h);
    const double g = rep.gradient.values[i];
    if (std::abs(g) > 1e-8) REQUIRE_THAT(fd / g, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("gradient check: 100 seeded problems vs finite differences") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto pr = make_problem(seed, 2 + static_cast<int>(seed % 3), {4, 3});
    const auto rep = loss_grad(pr.builder(), pr.params);
    const double h = 1e-5;
    ParamVector probe = pr.params;
    // Every 7th coordinate, to keep 100 problems fast while covering layers.
    for (std::size_t i = 0; i < pr.params.size(); i += 7) {
      probe.values[i] = pr.params.values[i] + h;
      const double fp = pr.loss_at(probe);
      probe.values[i] = pr.params.values[i] - h;
      const double fm = pr.loss_at(probe);
      probe.values[i] = pr.params.values[i];
      const double fd = (fp - fm) / (2.0 * h);
      const double g = rep.gradient.values[i];
      if (std::abs(g) > 1e-8)
        REQUIRE_THAT(fd / g, Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
  }
}

TEST_CASE("hvp: identity Hessian returns the direction") {
  ParamVector theta{{}, {1.0, -2.0, 0.5}};
  ParamVector v{{}, {0.3, 0.7, -1.1}};
  auto half_sq = [](auto& t, auto p) {
    auto acc = square(p[0]) * 0.5;
    for (std::size_t i = 1; i < p.size(); ++i) acc = acc + square(p[i]) * 0.5;
    return acc;
  };
  const auto hv = hvp(half_sq, theta, v);
  for (std::size_t i = 0; i < v.size(); ++i)
    REQUIRE_THAT(hv.values[i], Catch::Matchers::WithinAbs(v.values[i], 1e-14));
}

TEST_CASE("hvp: quadratic form reproduces A*v") {
  const int n = 5;
  Rng rng(77);
  std::vector<double> A(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) A[i * n + j] = A[j * n + i] = rng.normal();
  ParamVector theta{{}, std::vector<double>(n)};
  ParamVector v{{}, std::vector<double>(n)};
  for (int i = 0; i < n; ++i) {
    theta.values[i] = rng.normal();
    v.values[i] = rng.normal();
  }
  auto quad = [&](auto& t, auto p) {
    // 0.5 * theta^T A theta via per-row DotC.
    typename std::decay_t<decltype(t)>::Var acc;
    for (int i = 0; i < n; ++i) {
      auto row = t.dotc(p, std::span<const double>(&A[i * n], n));
      auto term = p[i] * row;
      acc = acc.valid() ? acc + term : term;
    }
    return acc * 0.5;
  };
  const auto hv = hvp(quad, theta, v);
  for (int i = 0; i < n; ++i) {
    double want = 0.0;
    for (int j = 0; j < n; ++j) want += A[i * n + j] * v.values[j];
    REQUIRE_THAT(hv.values[i], Catch::Matchers::WithinRel(want, 1e-6));
  }
}

TEST_CASE("hvp: symmetry and linearity") {
  auto pr = make_problem(42);
  Rng rng(43);
  ParamVector v = ParamVector::zeros_like(pr.params);
  ParamVector w = ParamVector::zeros_like(pr.params);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v.values[i] = rng.normal();
    w.values[i] = rng.normal();
  }
  const auto hv = hvp(pr.builder(), pr.params, v);
  const auto hw = hvp(pr.builder(), pr.params, w);
  // w^T (H v) == v^T (H w)
  REQUIRE_THAT(dot(w.values, hv.values),
               Catch::Matchers::WithinAbs(dot(v.values, hw.values), 1e-8));

  const double a = 0.37, b = -1.21;
  ParamVector av_bw = ParamVector::zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i)
    av_bw.values[i] = a * v.values[i] + b * w.values[i];
  const auto h_lin = hvp(pr.builder(), pr.params, av_bw);
  for (std::size_t i = 0; i < v.size(); ++i)
    REQUIRE_THAT(h_lin.values[i],
                 Catch::Matchers::WithinAbs(a * hv.values[i] + b * hw.values[i], 1e-10));
}

TEST_CASE("hvp: consistent with finite differences of the gradient") {
  auto pr = make_problem(55);
  Rng rng(56);
  ParamVector v = ParamVector::zeros_like(pr.params);
  for (auto& x : v.values) x = rng.normal();
  const auto hv = hvp(pr.builder(), pr.params, v);

  const double h = 1e-5;
  ParamVector plus = pr.params, minus = pr.params;
  for (std::size_t i = 0; i < v.size(); ++i) {
    plus.values[i] += h * v.values[i];
    minus.values[i] -= h * v.values[i];
  }
  const auto gp = loss_grad(pr.builder(), plus).gradient;
  const auto gm = loss_grad(pr.builder(), minus).gradient;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double fd = (gp.values[i] - gm.values[i]) / (2.0 * h);
    num += (hv.values[i] - fd) * (hv.values[i] - fd);
    den += hv.values[i] * hv.values[i];
  }
  REQUIRE(std::sqrt(num) <= 1e-3 * std::sqrt(den));
}

TEST_CASE("hvp: layout mismatch raises configuration error") {
  ParamVector theta{{LayerDims{1, 1}}, {1.0, 0.0}};
  ParamVector v{{}, {1.0, 0.0}};
  auto f = [](auto& t, auto p) { return square(p[0]); };
  REQUIRE_THROWS_AS(hvp(f, theta, v), ConfigError);
}

TEST_CASE("ParamVector: JSON round trip preserves values exactly") {
  Rng rng(7);
  MlpSpec spec{3, {4}, 2, Activation::Softplus};
  auto p = glorot_init(spec, rng);
  p.values[0] = 0.1 + 0.2;  // not exactly representable in decimal
  const auto j = to_json(p);
  const auto back = param_vector_from_json(nlohmann::json::parse(j.dump()));
  REQUIRE(back.layout == p.layout);
  for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(back.values[i] == p.values[i]);
}

TEST_CASE("ParamVector: check rejects wrong length") {
  ParamVector p{{LayerDims{2, 3}}, std::vector<double>(5, 0.0)};
  REQUIRE_THROWS_AS(p.check(), ConfigError);
}

TEST_CASE("MlpSpec: validate enforces hidden layer contract") {
  MlpSpec bad{2, {}, 2, Activation::Tanh};
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  MlpSpec good{2, {4}, 2, Activation::Tanh};
  REQUIRE_NOTHROW(good.validate());
}
