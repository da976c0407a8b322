#include "gameprior/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace gameprior {

std::string_view to_string(DataKind kind) { return kind == DataKind::pixel ? "pixel" : "patch_dict"; }

DataKind parse_data_kind(std::string_view name) {
  if (name == "pixel") return DataKind::pixel;
  if (name == "patch_dict") return DataKind::patch_dict;
  throw std::invalid_argument("unknown data term '" + std::string(name) + "'");
}

std::string param::grid_weights(std::size_t prior_index) { return "grid_weights." + std::to_string(prior_index); }

Tensor Parameter::value() const {
  if (constraint == Constraint::none) return free;
  Tensor v = free;
  for (double& x : v.values()) x *= x;
  return v;
}

void ModelParams::add(std::string name, const Tensor& value, Constraint constraint) {
  if (has(name)) throw std::invalid_argument("ModelParams: duplicate parameter '" + name + "'");
  Parameter p{std::move(name), constraint, value, true};
  if (constraint == Constraint::positive) {
    for (double& x : p.free.values()) {
      if (!(x > 0.0)) throw std::invalid_argument("ModelParams: positive parameter '" + p.name + "' needs positive values");
      x = std::sqrt(x);
    }
  }
  params_.push_back(std::move(p));
}

bool ModelParams::has(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

Parameter& ModelParams::get(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("ModelParams: no parameter '" + std::string(name) + "'");
}

const Parameter& ModelParams::get(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("ModelParams: no parameter '" + std::string(name) + "'");
}

void ModelParams::set_value(std::string_view name, const Tensor& value) {
  Parameter& p = get(name);
  if (value.shape() != p.free.shape()) {
    throw std::invalid_argument("ModelParams::set_value: shape mismatch for '" + std::string(name) + "'");
  }
  p.free = value;
  if (p.constraint == Constraint::positive) {
    for (double& x : p.free.values()) {
      if (!(x > 0.0)) throw std::invalid_argument("ModelParams::set_value: '" + p.name + "' must stay positive");
      x = std::sqrt(x);
    }
  }
}

BoundParams::BoundParams(const ModelParams& params, ad::Graph* graph) {
  for (const auto& p : params.parameters()) {
    Bound b;
    b.free = graph && p.trainable ? graph->leaf(p.free) : ad::constant(p.free);
    b.value = p.constraint == Constraint::positive ? ad::square(b.free) : b.free;
    bound_.emplace(p.name, std::move(b));
  }
}

bool BoundParams::has(std::string_view name) const { return bound_.find(name) != bound_.end(); }

const BoundParams::Bound& BoundParams::find(std::string_view name) const {
  auto it = bound_.find(name);
  if (it == bound_.end()) throw std::out_of_range("model parameter '" + std::string(name) + "' is not defined");
  return it->second;
}

const ad::Var& BoundParams::value(std::string_view name) const { return find(name).value; }
const ad::Var& BoundParams::free(std::string_view name) const { return find(name).free; }

ad::Var BoundParams::entry(std::string_view name, std::size_t t) const {
  const ad::Var& v = value(name);
  if (t >= v.size()) throw std::out_of_range("parameter '" + std::string(name) + "' has no entry " + std::to_string(t));
  auto column = ad::reshape(v, {v.size(), 1});
  return ad::reshape(ad::gather(column, ad::make_index({t})), {1});
}

ad::Var BoundParams::entry(std::string_view name, std::size_t row, std::size_t col) const {
  const ad::Var& v = value(name);
  if (v.shape().size() != 2 || row >= v.shape()[0] || col >= v.shape()[1]) {
    throw std::out_of_range("parameter '" + std::string(name) + "' has no entry (" + std::to_string(row) + "," +
                            std::to_string(col) + ")");
  }
  return entry(name, row * v.shape()[1] + col);
}

namespace {

// Normalised power iteration on M^T M from a fixed, generic start vector.
double top_singular_value(const Tensor& M, std::size_t max_iters, double tol) {
  const std::size_t rows = M.dim(0), cols = M.dim(1);
  std::vector<double> v(cols), u(rows);
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  for (double& x : v) x = unif(rng);
  double sigma = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x /= nv;
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += M[i * cols + j] * v[j];
      u[i] = s;
    }
    const double next = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i) s += M[i * cols + j] * u[i];
      v[j] = s;
    }
    if (next == 0.0) return 0.0;
    const bool done = std::abs(next - sigma) <= tol * next;
    sigma = next;
    if (done) break;
  }
  return sigma;
}

}  // namespace

double spectral_norm(const Tensor& matrix, std::size_t max_iters, double tol) {
  if (matrix.rank() != 2) throw std::invalid_argument("spectral_norm: expected a matrix");
  return top_singular_value(matrix, max_iters, tol);
}

Tensor spectral_normalize(const Tensor& dictionary, std::size_t max_iters, double tol) {
  const double sigma = spectral_norm(dictionary, max_iters, tol);
  if (!(sigma > 0.0)) throw std::invalid_argument("spectral_normalize: zero matrix");
  return (1.0 / sigma) * dictionary;
}

ad::Var data_term_grad(const ModelConfig& model, const BoundParams& params, const ad::Var& patches_x,
                       const ad::Var& codes) {
  if (model.data == DataKind::pixel) {
    if (codes.shape() != patches_x.shape()) {
      throw std::invalid_argument("data_term_grad: pixel codes " + shape_string(codes.shape()) + " vs input " +
                                  shape_string(patches_x.shape()));
    }
    return ad::scale(ad::sub(codes, patches_x), 2.0);
  }
  const ad::Var& D = params.value(param::dictionary);
  auto residual = ad::sub(ad::matmul(codes, ad::transpose(D)), patches_x);
  return ad::matmul(residual, model.untied ? params.value(param::preconditioner) : D);
}

ad::Var reconstruct(const ModelConfig& model, const BoundParams& params, const PatchOperator& patches,
                    const ad::Var& codes) {
  const auto& layout = patches.layout();
  if (model.data == DataKind::pixel) return ad::reshape(codes, {layout.image_h, layout.image_w});
  return patches.average_reconstruct(codes, params.value(param::reconstruction));
}

std::size_t similarity_patch_size(const ModelConfig& model, const std::vector<PriorSpec>& priors) {
  if (model.data == DataKind::patch_dict) return model.patch_side * model.patch_side;
  std::size_t side = 0;
  for (const auto& p : priors) {
    if (!uses_nonlocal_weights(p.kind)) continue;
    if (side && side != p.similarity_patch) {
      throw std::invalid_argument("non-local priors of one model must share the similarity patch size");
    }
    side = p.similarity_patch;
  }
  return side * side;
}

ModelParams init_params(const std::vector<Tensor>& train_images, const ModelConfig& model,
                        const std::vector<PriorSpec>& priors, const InitOptions& options) {
  if (options.iterations == 0) throw std::invalid_argument("init_params: K must be at least 1");
  if (!(options.eta0 > 0.0)) throw std::invalid_argument("init_params: eta0 must be positive");
  ModelParams params;
  std::mt19937_64 rng(options.seed);

  if (model.data == DataKind::patch_dict) {
    const std::size_t s = model.patch_side, q = s * s, p = model.atoms;
    if (p == 0) throw std::invalid_argument("init_params: dictionary needs at least one atom");
    std::vector<std::vector<double>> pool;
    for (const auto& img : train_images) {
      if (img.rank() != 2 || img.dim(0) < s || img.dim(1) < s) continue;
      PatchOperator op(PatchLayout{img.dim(0), img.dim(1), s, 1, Boundary::valid});
      const Tensor patches = op.extract(ad::constant(img)).value();
      for (std::size_t j = 0; j < op.patch_count(); ++j) {
        std::vector<double> v(patches.values().begin() + j * q, patches.values().begin() + (j + 1) * q);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / q;
        double nrm = 0.0;
        for (double& x : v) {
          x -= mean;
          nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        if (nrm < 1e-8) continue;
        for (double& x : v) x /= nrm;
        pool.push_back(std::move(v));
      }
    }
    if (pool.size() + 1 < p) {
      throw std::invalid_argument("init_params: " + std::to_string(pool.size()) +
                                  " non-flat training patches available, dictionary needs " + std::to_string(p - 1));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    Tensor D({q, p}, 0.0);
    for (std::size_t i = 0; i < q; ++i) D.at(i, 0) = 1.0 / std::sqrt(static_cast<double>(q));
    for (std::size_t a = 1; a < p; ++a)
      for (std::size_t i = 0; i < q; ++i) D.at(i, a) = pool[a - 1][i];
    D = spectral_normalize(D);
    params.add(std::string(param::dictionary), D);
    if (model.untied) params.add(std::string(param::preconditioner), D);
    params.add(std::string(param::reconstruction), D);
  }

  const std::size_t p = model.code_size();
  const bool needs_lambda = std::any_of(priors.begin(), priors.end(), [](const PriorSpec& s) { return uses_lambda(s.kind); });
  const bool needs_kappa =
      std::any_of(priors.begin(), priors.end(), [](const PriorSpec& s) { return uses_nonlocal_weights(s.kind); });
  const bool needs_bilateral =
      std::any_of(priors.begin(), priors.end(), [](const PriorSpec& s) { return uses_bilateral_weights(s.kind); });
  for (const auto& s : priors) {
    if (s.kind == PriorKind::variance_reduction && model.data != DataKind::patch_dict) {
      throw std::invalid_argument("init_params: variance_reduction requires the patch dictionary model");
    }
  }
  if (needs_lambda) params.add(std::string(param::lambda), Tensor({p}, 0.1), Constraint::positive);
  if (needs_kappa) params.add(std::string(param::kappa), Tensor({similarity_patch_size(model, priors)}, 1.0));
  if (needs_bilateral) {
    params.add(std::string(param::sigma_d), Tensor::scalar(25.0), Constraint::positive);
    params.add(std::string(param::sigma_r), Tensor::scalar(2.0), Constraint::positive);
  }
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (uses_grid_weights(priors[i].kind)) {
      params.add(param::grid_weights(i), Tensor({grid_weight_count(priors[i].radius, priors[i].symmetric)}, 0.1),
                 Constraint::positive);
    }
  }
  params.add(std::string(param::eta), Tensor({options.iterations}, options.eta0), Constraint::positive);
  params.add(std::string(param::alpha), Tensor({options.iterations, std::max<std::size_t>(priors.size(), 1)}, 1.0),
             Constraint::positive);
  return params;
}

}  // namespace gameprior
