#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "gameprior/solver.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace gameprior;
using gameprior::testing::random_tensor;

namespace {

const ModelConfig kPixel{DataKind::pixel, 1, 1, false};

ModelParams pixel_params(const std::vector<PriorSpec>& priors, std::size_t K, double eta0) {
  return init_params({}, kPixel, priors, InitOptions{K, eta0, 0});
}

// Plain loop on dense tensors: H = 2(z - x) + 2 sum_k a_jk (z_j - z_k)
std::vector<Tensor> laplacian_path(const Tensor& x, const Tensor& a, Method method, const std::vector<double>& eta) {
  const std::size_t m = x.size();
  auto h = [&](const Tensor& z) {
    Tensor g({m, 1});
    for (std::size_t j = 0; j < m; ++j) {
      double s = 2.0 * (z[j] - x[j]);
      for (std::size_t k = 0; k < m; ++k) s += 2.0 * a.at(j, k) * (z[j] - z[k]);
      g[j] = s;
    }
    return g;
  };
  std::vector<Tensor> path{x.reshaped({m, 1})};
  for (double e : eta) {
    const Tensor& z = path.back();
    path.push_back(method == Method::gradient ? z - e * h(z) : z - e * h(z - e * h(z)));
  }
  return path;
}

}  // namespace

TEST_CASE("solver config") {
  SolverConfig c;
  c.iterations = 24;
  CHECK(c.refresh_period() == 4);
  c.refresh_fraction = 1.0 / 12.0;
  CHECK(c.refresh_period() == 2);
  c.refresh_fraction = 0.0;
  CHECK(c.refresh_period() == 0);
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.iterations = 3;
  c.eta0 = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  for (Method m : {Method::gradient, Method::extragradient}) CHECK(parse_method(to_string(m)) == m);
  for (StepRule r : {StepRule::fixed, StepRule::learned, StepRule::barzilai_borwein}) CHECK(parse_step_rule(to_string(r)) == r);
  for (L1Mode m : {L1Mode::smoothed, L1Mode::proximal_step}) CHECK(parse_l1_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("adam"), std::invalid_argument);
}

TEST_CASE("unrolled iterations match a dense loop") {
  const Tensor x = random_tensor({4, 5}, 1);
  const std::vector<PriorSpec> priors{{PriorKind::laplacian}};
  ModelParams p = pixel_params(priors, 5, 0.1);
  p.set_value(param::eta, Tensor::vector({0.05, 0.1, 0.15, 0.1, 0.05}));
  const BoundParams b(p, nullptr);
  Game game(kPixel, priors, b, ad::constant(x));
  const Tensor a = game.graph(0)->dense();
  CHECK(a.at(0, 1) == doctest::Approx(0.1));
  for (Method method : {Method::gradient, Method::extragradient}) {
    SolverConfig c;
    c.iterations = 5;
    c.method = method;
    c.step_rule = StepRule::fixed;
    c.eta0 = 0.1;
    const SolveResult fixed = solve(game, c);
    const auto want = laplacian_path(x, a, method, std::vector<double>(5, 0.1));
    CHECK(max_abs_diff(fixed.codes.value(), want.back()) < 1e-12);
    c.step_rule = StepRule::learned;
    const SolveResult learned = solve(game, c);
    CHECK(max_abs_diff(learned.codes.value(), laplacian_path(x, a, method, {0.05, 0.1, 0.15, 0.1, 0.05}).back()) < 1e-12);
    REQUIRE(learned.trace.size() == 5);
    CHECK(learned.trace[2].t == 2);
    CHECK(learned.trace[2].eta == doctest::Approx(0.15));
    CHECK(fixed.trace[0].residual == doctest::Approx(norm2(game.simultaneous_gradient(game.initial_codes(), 0).value())));
    CHECK(fixed.final_residual ==
          doctest::Approx(norm2(game.simultaneous_gradient(ad::constant(fixed.codes.value()), 4).value())));
  }
  SolverConfig longer;
  longer.iterations = 6;
  CHECK_THROWS_AS(solve(game, longer), std::invalid_argument);
}

TEST_CASE("similarity refresh schedule") {
  const Tensor x = gameprior::testing::piecewise_constant(10, 10, 2);
  PriorSpec nl{PriorKind::nltv};
  nl.window = 5;
  nl.max_neighbors = 8;
  nl.similarity_patch = 3;
  const ModelParams p = pixel_params({nl}, 12, 0.1);
  const BoundParams b(p, nullptr);
  Game game(kPixel, {nl}, b, ad::constant(x));
  SolverConfig c;
  c.iterations = 12;
  c.refresh_fraction = 1.0 / 6.0;  // every 2 iterations
  CHECK(solve(game, c).refreshes == 3);
  c.max_refreshes = 100;
  CHECK(solve(game, c).refreshes == 5);
  c.refresh_fraction = 0.0;
  CHECK(solve(game, c).refreshes == 0);
}

TEST_CASE("divergence is reported") {
  const Tensor x = random_tensor({3, 3}, 4);
  const std::vector<PriorSpec> priors{{PriorKind::laplacian}};
  const ModelParams p = pixel_params(priors, 30, 1.0);
  const BoundParams b(p, nullptr);
  Game game(kPixel, priors, b, ad::constant(x));
  SolverConfig c;
  c.iterations = 30;
  c.method = Method::gradient;
  c.step_rule = StepRule::fixed;
  c.eta0 = 5.0;
  c.divergence_bound = 1e6;
  try {
    solve(game, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() < 30);
  }
}

TEST_CASE("proximal l1 step") {
  const ModelConfig m{DataKind::patch_dict, 2, 3, false};
  const std::vector<PriorSpec> priors{{PriorKind::weighted_l1}};
  const Tensor img = random_tensor({3, 3}, 5);
  ModelParams p;
  const Tensor d = random_tensor({4, 3}, 6, 0.5);
  p.add(std::string(param::dictionary), d);
  p.add(std::string(param::reconstruction), d);
  p.add(std::string(param::lambda), Tensor::vector({0.05, 0.2, 0.1}), Constraint::positive);
  p.add(std::string(param::eta), Tensor::vector({0.3}), Constraint::positive);
  p.add(std::string(param::alpha), Tensor({1, 1}, 1.0), Constraint::positive);
  const BoundParams b(p, nullptr);
  Game game(m, priors, b, ad::constant(img));
  SolverConfig c;
  c.iterations = 1;
  c.method = Method::gradient;
  c.l1_mode = L1Mode::proximal_step;
  const Tensor z1 = solve(game, c).codes.value();
  // z1 = soft(eta X D, eta lambda)
  const Tensor xd = game.inputs().value();
  for (std::size_t j = 0; j < game.nodes(); ++j)
    for (std::size_t l = 0; l < 3; ++l) {
      double u = 0.0;
      for (std::size_t i = 0; i < 4; ++i) u += 0.3 * xd.at(j, i) * d.at(i, l);
      const double t = 0.3 * p.value(param::lambda)[l];
      const double want = std::abs(u) <= t ? 0.0 : (u > 0 ? u - t : u + t);
      CHECK(z1.at(j, l) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("Barzilai-Borwein steps") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor z = Tensor::matrix({{1.0, 3.0}, {5.0, 5.0}});
  const Tensor prev = Tensor::matrix({{1.0, 1.0}, {5.0, 5.0}});
  const Tensor s = bb_step(z, prev, eye, Tensor::vector({0.7, 0.9}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == 0.9);

  const Tensor d = random_tensor({4, 3}, 8);
  const Tensor zz = random_tensor({6, 3}, 9), zp = random_tensor({6, 3}, 10);
  const Tensor got = bb_step(zz, zp, d, Tensor({6}, 1.0));
  Eigen::MatrixXd ed(4, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t l = 0; l < 3; ++l) ed(i, l) = d.at(i, l);
  for (std::size_t j = 0; j < 6; ++j) {
    Eigen::VectorXd sj(3);
    for (std::size_t l = 0; l < 3; ++l) sj(l) = zz.at(j, l) - zp.at(j, l);
    const Eigen::VectorXd ds = ed * sj;
    CHECK(got[j] == doctest::Approx((ed.transpose() * ds).norm() / ds.squaredNorm()));
  }
}

TEST_CASE("bilinear toy: gradient spirals out, extra-gradient contracts") {
  // min_x max_y xy, H(x, y) = (y, -x)
  auto h = [](const Tensor& z) { return Tensor::vector({z[1], -z[0]}); };
  for (double eta : {0.1, 0.3, 0.5}) {
    const auto gd = iterate(Method::gradient, h, Tensor::vector({1.0, 0.5}), eta, 20);
    const auto eg = iterate(Method::extragradient, h, Tensor::vector({1.0, 0.5}), eta, 20);
    REQUIRE(gd.size() == 21);
    for (std::size_t t = 1; t < 21; ++t) {
      CHECK(norm2(gd[t]) / norm2(gd[t - 1]) == doctest::Approx(std::sqrt(1 + eta * eta)).epsilon(1e-12));
      CHECK(norm2(eg[t]) / norm2(eg[t - 1]) ==
            doctest::Approx(std::sqrt(1 - eta * eta + std::pow(eta, 4))).epsilon(1e-12));
    }
  }
}

TEST_CASE("potential classification") {
  const Tensor x = random_tensor({4, 4}, 11);
  PriorSpec sym{PriorKind::laplacian};
  sym.symmetric = true;
  const ModelParams p = pixel_params({sym}, 2, 0.1);
  const BoundParams b(p, nullptr);
  Game game(kPixel, {sym}, b, ad::constant(x));
  CHECK(is_potential_game(game));
  const PotentialReport r = verify_potential(game);
  CHECK(r.is_potential);
  CHECK(r.max_gradient_gap < 1e-7);

  const PriorSpec one_sided{PriorKind::laplacian};
  const ModelParams q = pixel_params({one_sided}, 2, 0.1);
  // a_{j-k} and a_{k-j} start equal; make them differ
  ModelParams q2 = q;
  q2.set_value(param::grid_weights(0), Tensor::vector({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}));
  const BoundParams bq2(q2, nullptr);
  Game skewed(kPixel, {one_sided}, bq2, ad::constant(x));
  CHECK_FALSE(is_potential_game(skewed));
  CHECK(verify_potential(skewed).max_gradient_gap > 1e-3);
}

TEST_CASE("trace csv") {
  std::ostringstream out;
  write_trace_csv(out, {{0, 2.5, 0.1}, {1, 1.25, 0.1}});
  CHECK(out.str().rfind("t,residual,eta\n0,2.5,0.1\n", 0) == 0);
}

TEST_CASE("an equilibrium is a fixed point of both methods") {
  const Tensor x = random_tensor({4, 5}, 12, 10.0);
  const std::vector<PriorSpec> priors{{PriorKind::laplacian}};
  ModelParams p = pixel_params(priors, 6, 0.2);
  p.set_value(param::grid_weights(0), Tensor::vector({0.1, 0.3, 0.2, 0.4, 0.05, 0.2, 0.1, 0.3}));
  const BoundParams b(p, nullptr);
  Game game(kPixel, priors, b, ad::constant(x));
  // H is affine here: (2I + 2(Deg - A)) z = 2x
  const Tensor a = game.graph(0)->dense();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(20, 20) * 2.0;
  Eigen::VectorXd rhs(20);
  for (std::size_t j = 0; j < 20; ++j) {
    rhs(j) = 2.0 * x[j];
    for (std::size_t k = 0; k < 20; ++k) {
      m(j, j) += 2.0 * a.at(j, k);
      m(j, k) -= 2.0 * a.at(j, k);
    }
  }
  const Eigen::VectorXd star = m.partialPivLu().solve(rhs);
  Tensor z({20, 1});
  for (std::size_t j = 0; j < 20; ++j) z[j] = star(j);
  CHECK(norm2(game.simultaneous_gradient(ad::constant(z), 0).value()) < 1e-10);
  for (Method method : {Method::gradient, Method::extragradient}) {
    SolverConfig c;
    c.iterations = 6;
    c.method = method;
    CHECK(max_abs_diff(solve_from(game, c, ad::constant(z)).codes.value(), z) < 1e-12);
  }
}

TEST_CASE("the potential decreases along short gradient steps") {
  for (PriorKind kind : {PriorKind::laplacian, PriorKind::tv}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      PriorSpec spec{kind};
      spec.symmetric = true;
      ModelParams p = pixel_params({spec}, 1, 0.1);
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.05, 1.0);
      p.set_value(param::grid_weights(0), Tensor::vector({u(rng), u(rng), u(rng), u(rng)}));
      p.set_value(param::alpha, Tensor({1, 1}, 0.5 + u(rng)));
      const BoundParams b(p, nullptr);
      Game game(kPixel, {spec}, b, ad::constant(random_tensor({5, 6}, seed, 20.0)));
      // L <= 2 + alpha ||Deg - A|| scaled for the pairwise term, ||Deg - A|| <= 2 max degree
      const Tensor a = game.graph(0)->dense();
      double degree = 0.0;
      for (std::size_t j = 0; j < 30; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < 30; ++k) d += a.at(j, k);
        degree = std::max(degree, d);
      }
      const double slope = kind == PriorKind::laplacian ? 2.0 : p.value(param::alpha)[0];
      const double lipschitz = 2.0 + slope * 2.0 * degree;
      auto h = [&](const Tensor& z) { return game.simultaneous_gradient(ad::constant(z), 0).value(); };
      const auto path = iterate(Method::gradient, h, game.initial_codes().value(), 1.0 / lipschitz, 24);
      for (std::size_t t = 1; t < path.size(); ++t) CHECK(game.potential(path[t]) <= game.potential(path[t - 1]) + 1e-9);
    }
  }
}

TEST_CASE("unrolled codes differentiate through the dictionary") {
  const ModelConfig m{DataKind::patch_dict, 2, 3, false};
  const std::vector<PriorSpec> priors{{PriorKind::laplacian}};
  const Tensor img = random_tensor({3, 3}, 21);
  ModelParams p;
  p.add(std::string(param::dictionary), random_tensor({4, 3}, 22, 0.4));
  p.add(std::string(param::reconstruction), random_tensor({4, 3}, 23, 0.4));
  p.add(param::grid_weights(0), Tensor({8}, 0.2), Constraint::positive);
  p.add(std::string(param::eta), Tensor::vector({0.5, 0.4, 0.3}), Constraint::positive);
  p.add(std::string(param::alpha), Tensor({3, 1}, 1.0), Constraint::positive);
  SolverConfig c;
  c.iterations = 3;
  const Tensor weights = random_tensor({4, 3}, 24);

  auto final_codes = [&](const ModelParams& q) {
    const BoundParams b(q, nullptr);
    Game game(m, priors, b, ad::constant(img));
    return solve(game, c).codes.value();
  };
  ad::Graph g;
  const BoundParams b(p, &g);
  Game game(m, priors, b, ad::constant(img));
  REQUIRE(game.nodes() == 4);
  const ad::Var out = ad::sum(ad::mul(solve(game, c).codes, ad::constant(weights)));
  const Tensor analytic = g.backward(out, Tensor::scalar(1.0)).of(b.free(param::dictionary));
  auto f = [&](const Tensor& d) {
    ModelParams q = p;
    q.set_value(param::dictionary, d);
    return dot(final_codes(q), weights);
  };
  const Tensor numeric = gameprior::testing::numeric_gradient(f, p.value(param::dictionary));
  CHECK(gameprior::testing::relative_error(analytic, numeric) < 1e-4);
}
