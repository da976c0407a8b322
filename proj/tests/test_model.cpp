#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "gameprior/model.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace gameprior;
using gameprior::testing::random_tensor;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("spectral norm against an SVD") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Tensor d = random_tensor({9 + seed, 4 + 2 * seed}, seed);
    const double sigma = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(d)).singularValues()(0);
    CHECK(spectral_norm(d) == doctest::Approx(sigma).epsilon(1e-9));
    const Tensor n = spectral_normalize(d);
    CHECK(Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(n)).singularValues()(0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(max_abs_diff(sigma * n, d) < 1e-8);
  }
  CHECK_THROWS_AS(spectral_normalize(Tensor({3, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("positive parameters are stored as square roots") {
  ModelParams p;
  p.add("s", Tensor::vector({4.0, 0.25}), Constraint::positive);
  p.add("n", Tensor::vector({-1.0}));
  CHECK(p.get("s").free[0] == doctest::Approx(2.0));
  CHECK(p.value("s")[1] == doctest::Approx(0.25));
  p.get("s").free[0] = -3.0;  // any free value maps to a non-negative one
  CHECK(p.value("s")[0] == doctest::Approx(9.0));
  CHECK(p.value("n")[0] == -1.0);
  CHECK_THROWS_AS(p.add("s", Tensor::scalar(1.0)), std::invalid_argument);
  CHECK_THROWS_AS(p.add("t", Tensor::scalar(-1.0), Constraint::positive), std::invalid_argument);
  CHECK_THROWS(p.get("missing"));
}

TEST_CASE("bound parameters: entries and leaves") {
  ModelParams p;
  p.add("eta", Tensor::vector({1.0, 4.0}), Constraint::positive);
  p.add("alpha", Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}}), Constraint::positive);
  ad::Graph g;
  const BoundParams b(p, &g);
  CHECK(b.entry("eta", 1).value()[0] == doctest::Approx(4.0));
  CHECK(b.entry("alpha", 1, 0).value()[0] == doctest::Approx(3.0));
  CHECK(b.free("eta").value()[1] == doctest::Approx(2.0));
  // d(f^2)/df = 2f
  const ad::Var s = ad::sum(b.value("eta"));
  const auto grads = g.backward(s, Tensor::scalar(1.0));
  CHECK(grads.of(b.free("eta"))[1] == doctest::Approx(4.0));
}

TEST_CASE("data term gradients") {
  SUBCASE("pixel model") {
    const ModelConfig m{DataKind::pixel, 1, 1, false};
    const BoundParams b(ModelParams{}, nullptr);
    const Tensor x = Tensor::matrix({{1.0}, {2.0}});
    const Tensor z = Tensor::matrix({{0.5}, {4.0}});
    const Tensor g = data_term_grad(m, b, ad::constant(x), ad::constant(z)).value();
    CHECK(g[0] == doctest::Approx(-1.0));
    CHECK(g[1] == doctest::Approx(4.0));
  }
  SUBCASE("tied and untied dictionary") {
    const Tensor d = random_tensor({4, 3}, 1), c = random_tensor({4, 3}, 2);
    const Tensor x = random_tensor({5, 4}, 3), z = random_tensor({5, 3}, 4);
    ModelParams p;
    p.add(std::string(param::dictionary), d);
    p.add(std::string(param::preconditioner), c);
    const BoundParams b(p, nullptr);
    const auto ed = to_eigen(d), ec = to_eigen(c), ex = to_eigen(x), ez = to_eigen(z);
    const Eigen::MatrixXd r = ez * ed.transpose() - ex;
    const Eigen::MatrixXd tied = r * ed, untied = r * ec;
    const Tensor gt = data_term_grad(ModelConfig{DataKind::patch_dict, 2, 3, false}, b, ad::constant(x), ad::constant(z)).value();
    const Tensor gu = data_term_grad(ModelConfig{DataKind::patch_dict, 2, 3, true}, b, ad::constant(x), ad::constant(z)).value();
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 3; ++l) {
        CHECK(gt.at(j, l) == doctest::Approx(tied(j, l)));
        CHECK(gu.at(j, l) == doctest::Approx(untied(j, l)));
      }
    // one gradient step from zero codes with eta = 1 lands on D^T x
    const Tensor step = -1.0 * data_term_grad(ModelConfig{DataKind::patch_dict, 2, 3, false}, b, ad::constant(x),
                                        ad::constant(Tensor({5, 3}, 0.0))).value();
    const Eigen::MatrixXd dtx = ex * ed;
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 3; ++l) CHECK(step.at(j, l) == doctest::Approx(dtx(j, l)));
  }
}

TEST_CASE("reconstruction averages overlapping patches") {
  const ModelConfig m{DataKind::patch_dict, 2, 3, false};
  const PatchOperator op(PatchLayout{3, 4, 2, 1, Boundary::valid});
  ModelParams p;
  const Tensor w = random_tensor({4, 3}, 5);
  p.add(std::string(param::reconstruction), w);
  const BoundParams b(p, nullptr);
  const Tensor z = random_tensor({op.patch_count(), 3}, 6);
  const Tensor y = reconstruct(m, b, op, ad::constant(z)).value();
  // direct: sum of W z_j over covering patches, divided by the count
  Tensor sum({3, 4}, 0.0), count({3, 4}, 0.0);
  for (std::size_t pr = 0; pr < 2; ++pr)
    for (std::size_t pc = 0; pc < 3; ++pc) {
      const std::size_t j = pr * 3 + pc;
      for (std::size_t i = 0; i < 4; ++i) {
        double v = 0.0;
        for (std::size_t l = 0; l < 3; ++l) v += w.at(i, l) * z.at(j, l);
        sum.at(pr + i / 2, pc + i % 2) += v;
        count.at(pr + i / 2, pc + i % 2) += 1.0;
      }
    }
  for (std::size_t i = 0; i < 12; ++i) CHECK(y[i] == doctest::Approx(sum[i] / count[i]));

  const ModelConfig px{DataKind::pixel, 1, 1, false};
  const PatchOperator ident(PatchLayout{3, 4, 1, 1, Boundary::valid});
  const Tensor codes = random_tensor({12, 1}, 7);
  const Tensor img = reconstruct(px, BoundParams(ModelParams{}, nullptr), ident, ad::constant(codes)).value();
  CHECK(img.shape() == Shape{3, 4});
  CHECK(max_abs_diff(img.reshaped({12, 1}), codes) == 0.0);
}

TEST_CASE("initial parameters") {
  const Tensor img = gameprior::testing::piecewise_constant(24, 24, 1) + random_tensor({24, 24}, 2, 0.05);
  const ModelConfig m{DataKind::patch_dict, 5, 16, true};
  const std::vector<PriorSpec> priors{{PriorKind::nltv}, {PriorKind::laplacian}, {PriorKind::weighted_l1}};
  const ModelParams p = init_params({img}, m, priors, InitOptions{6, 0.5, 3});
  const Tensor d = p.value(param::dictionary);
  CHECK(d.shape() == Shape{25, 16});
  CHECK(spectral_norm(d) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.value(param::preconditioner) == d);
  CHECK(p.value(param::reconstruction) == d);
  // the first atom is constant
  for (std::size_t i = 1; i < 25; ++i) CHECK(d.at(i, 0) == doctest::Approx(d.at(0, 0)));
  CHECK(p.value(param::eta).shape() == Shape{6});
  CHECK(p.value(param::eta)[3] == doctest::Approx(0.5));
  CHECK(p.value(param::alpha).shape() == Shape{6, 3});
  CHECK(p.value(param::lambda).shape() == Shape{16});
  CHECK(p.value(param::lambda)[0] == doctest::Approx(0.1));
  CHECK(p.value(param::kappa).shape() == Shape{25});
  CHECK(p.value(param::grid_weights(1)).shape() == Shape{8});
  CHECK_FALSE(p.has(param::grid_weights(0)));
  CHECK(p.get(param::eta).constraint == Constraint::positive);
  CHECK(init_params({img}, m, priors, InitOptions{6, 0.5, 3}) == p);

  CHECK_THROWS_AS(init_params({img}, m, priors, InitOptions{0, 1.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(init_params({img}, m, priors, InitOptions{3, 0.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(init_params({Tensor({24, 24}, 0.5)}, m, priors, InitOptions{}), std::invalid_argument);
  CHECK_THROWS_AS(init_params({img}, ModelConfig{DataKind::pixel, 1, 1, false}, {{PriorKind::variance_reduction}},
                              InitOptions{}),
                  std::invalid_argument);
}

TEST_CASE("model names") {
  CHECK(parse_data_kind(to_string(DataKind::pixel)) == DataKind::pixel);
  CHECK(parse_data_kind(to_string(DataKind::patch_dict)) == DataKind::patch_dict);
  CHECK_THROWS_AS(parse_data_kind("pixels"), std::invalid_argument);
}
