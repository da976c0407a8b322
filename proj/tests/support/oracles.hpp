#pragma once

// Independent numerical references for the tests.

#include <functional>
#include <random>

#include "gameprior/tensor.hpp"

namespace gameprior::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

/// Central differences of a scalar function.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(p) - f(m)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Tensor& a, const Tensor& b) {
  const double d = norm2(a - b);
  const double s = std::max({norm2(a), norm2(b), 1e-12});
  return d / s;
}

}  // namespace gameprior::testing
