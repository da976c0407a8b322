#include "gameprior/solver.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

namespace gameprior {

std::string_view to_string(Method m) { return m == Method::gradient ? "gradient" : "extragradient"; }

std::string_view to_string(StepRule r) {
  switch (r) {
    case StepRule::fixed: return "fixed";
    case StepRule::learned: return "learned";
    case StepRule::barzilai_borwein: return "barzilai_borwein";
  }
  return "unknown";
}

std::string_view to_string(L1Mode m) { return m == L1Mode::smoothed ? "smoothed" : "proximal_step"; }

Method parse_method(std::string_view s) {
  if (s == "gradient") return Method::gradient;
  if (s == "extragradient") return Method::extragradient;
  throw std::invalid_argument("unknown solver method '" + std::string(s) + "'");
}

StepRule parse_step_rule(std::string_view s) {
  if (s == "fixed") return StepRule::fixed;
  if (s == "learned") return StepRule::learned;
  if (s == "barzilai_borwein") return StepRule::barzilai_borwein;
  throw std::invalid_argument("unknown step rule '" + std::string(s) + "'");
}

L1Mode parse_l1_mode(std::string_view s) {
  if (s == "smoothed") return L1Mode::smoothed;
  if (s == "proximal_step") return L1Mode::proximal_step;
  throw std::invalid_argument("unknown l1 mode '" + std::string(s) + "'");
}

void SolverConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("SolverConfig: K must be at least 1");
  if (!(eta0 > 0.0)) throw std::invalid_argument("SolverConfig: eta0 must be positive");
  if (!(refresh_fraction >= 0.0 && refresh_fraction <= 1.0)) {
    throw std::invalid_argument("SolverConfig: refresh fraction must lie in [0,1]");
  }
  if (!(divergence_bound > 0.0)) throw std::invalid_argument("SolverConfig: divergence bound must be positive");
}

std::size_t SolverConfig::refresh_period() const {
  if (refresh_fraction <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(refresh_fraction * static_cast<double>(iterations) - 1e-12));
}

Game::Game(const ModelConfig& model, std::vector<PriorSpec> priors, const BoundParams& params, const ad::Var& image)
    : model_(model),
      priors_(std::move(priors)),
      params_(&params),
      patches_(PatchLayout{image.shape().size() == 2 ? image.shape()[0] : 0,
                           image.shape().size() == 2 ? image.shape()[1] : 0, model.extraction_side(), 1,
                           Boundary::valid}),
      grid_{patches_.layout().grid_h(), patches_.layout().grid_w()},
      inputs_(patches_.extract(image)),
      graphs_(priors_.size()) {
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    const PriorSpec& s = priors_[i];
    if (s.kind == PriorKind::variance_reduction && model_.data != DataKind::patch_dict) {
      throw std::invalid_argument("variance_reduction requires the patch dictionary model");
    }
    if (uses_grid_weights(s.kind)) {
      graphs_[i] = grid_graph(grid_, s.radius, params.value(param::grid_weights(i)), s.symmetric);
    }
  }
  refresh_graphs(image);
}

ad::Var Game::similarity_patches(const ad::Var& image) const {
  if (model_.data == DataKind::patch_dict) return patches_.extract(image);
  std::size_t side = 0;
  for (const auto& s : priors_)
    if (uses_nonlocal_weights(s.kind)) side = s.similarity_patch;
  const auto& l = patches_.layout();
  return PatchOperator(PatchLayout{l.image_h, l.image_w, side, 1, Boundary::reflect}).extract(image);
}

ad::Var Game::node_intensity(const ad::Var& image) const {
  if (model_.data == DataKind::pixel) return image;
  const std::size_t q = patches_.patch_size(), s = model_.patch_side;
  const std::size_t centre = (s / 2) * s + s / 2;
  std::vector<std::size_t> idx(nodes());
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = (*patches_.pixel_index())[j * q + centre];
  const auto& l = patches_.layout();
  auto flat = ad::reshape(image, {l.image_h * l.image_w, 1});
  return ad::reshape(ad::gather(flat, ad::make_index(std::move(idx))), {grid_.h, grid_.w});
}

void Game::refresh_graphs(const ad::Var& image) {
  std::optional<ad::Var> sim;
  std::optional<ad::Var> intensity;
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    const PriorSpec& s = priors_[i];
    if (uses_nonlocal_weights(s.kind)) {
      if (!sim) sim = similarity_patches(image);
      graphs_[i] = nonlocal_weights(*sim, params_->value(param::kappa), grid_, s.window, s.max_neighbors,
                                    s.kind == PriorKind::nl_group);
    } else if (uses_bilateral_weights(s.kind)) {
      if (!intensity) intensity = node_intensity(image);
      graphs_[i] = bilateral_weights(*intensity, params_->value(param::sigma_d), params_->value(param::sigma_r),
                                     s.window, s.max_neighbors);
    }
  }
}

void Game::set_graph(std::size_t prior_index, NeighborGraph graph) {
  if (prior_index >= priors_.size()) throw std::out_of_range("Game::set_graph: no such prior");
  if (graph.nodes != nodes()) throw std::invalid_argument("Game::set_graph: graph size does not match the game");
  graphs_[prior_index] = std::move(graph);
}

const NeighborGraph* Game::graph(std::size_t prior_index) const {
  const auto& g = graphs_.at(prior_index);
  return g ? &*g : nullptr;
}

PriorTerms Game::terms(std::size_t index, const ad::Var& codes, std::size_t t) const {
  PriorTerms terms;
  const PriorSpec& s = priors_[index];
  if (is_smoothed(s.kind)) terms.alpha = params_->entry(param::alpha, t, index);
  if (uses_lambda(s.kind)) terms.lambda = params_->value(param::lambda);
  terms.graph = graph(index);
  if (s.kind == PriorKind::variance_reduction) {
    terms.reconstruction_dictionary = params_->value(param::reconstruction);
    terms.reconstruction = reconstruct(codes);
    terms.patches = &patches_;
  }
  return terms;
}

ad::Var Game::simultaneous_gradient(const ad::Var& codes, std::size_t t, bool include_l1) const {
  if (codes.shape() != Shape{nodes(), code_size()}) {
    throw std::invalid_argument("simultaneous_gradient: codes shape " + shape_string(codes.shape()) + " expected " +
                                shape_string({nodes(), code_size()}));
  }
  ad::Var h = data_term_grad(model_, *params_, inputs_, codes);
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    if (!include_l1 && priors_[i].kind == PriorKind::weighted_l1) continue;
    h = ad::add(h, prior_gradient(priors_[i], codes, terms(i, codes, t)));
  }
  return h;
}

ad::Var Game::reconstruct(const ad::Var& codes) const {
  return gameprior::reconstruct(model_, *params_, patches_, codes);
}

ad::Var Game::initial_codes() const {
  if (model_.data == DataKind::pixel) return ad::constant(inputs_.value());
  return ad::constant(Tensor({nodes(), code_size()}, 0.0));
}

double Game::potential(const Tensor& codes, std::size_t t) const {
  const ad::Var z(codes);
  double v = 0.0;
  const Tensor& x = inputs_.value();
  if (model_.data == DataKind::pixel) {
    for (std::size_t i = 0; i < codes.size(); ++i) v += (codes[i] - x[i]) * (codes[i] - x[i]);
  } else {
    const Tensor r = ad::sub(ad::matmul(z, ad::transpose(params_->value(param::dictionary))), inputs_).value();
    v += 0.5 * dot(r, r);
  }
  for (std::size_t i = 0; i < priors_.size(); ++i) {
    const double weight = priors_[i].kind == PriorKind::weighted_l1 ? 1.0 : 0.5;
    v += weight * ad::sum(node_penalties(priors_[i], z, terms(i, z, t))).value()[0];
  }
  return v;
}

namespace {

void check_divergence(const Tensor& z, std::size_t t, double bound) {
  if (!z.all_finite()) {
    throw DivergenceError(t, "solver diverged at iteration " + std::to_string(t) + ": non-finite codes");
  }
  const double m = max_abs(z);
  if (m > bound) {
    std::ostringstream msg;
    msg << "solver diverged at iteration " << t << ": |Z| = " << m << " exceeds " << bound;
    throw DivergenceError(t, msg.str());
  }
}

}  // namespace

SolveResult solve(Game& game, const SolverConfig& config) { return solve_from(game, config, game.initial_codes()); }

SolveResult solve_from(Game& game, const SolverConfig& config, const ad::Var& start) {
  config.validate();
  const BoundParams& params = game.params();
  const std::size_t m = game.nodes(), K = config.iterations;
  const bool include_l1 = config.l1_mode == L1Mode::smoothed;
  const bool prox_l1 = !include_l1 && std::any_of(game.priors().begin(), game.priors().end(), [](const PriorSpec& s) {
    return s.kind == PriorKind::weighted_l1;
  });
  if (config.step_rule == StepRule::learned && params.value(param::eta).size() < K) {
    throw std::invalid_argument("solve: learned steps hold fewer entries than K");
  }

  Tensor bb_dictionary;
  if (config.step_rule == StepRule::barzilai_borwein) {
    bb_dictionary = game.model().data == DataKind::patch_dict ? params.value(param::dictionary).value()
                                                             : Tensor::matrix({{1.0}});
  }
  Tensor steps({m}, config.eta0);

  auto proximal = [&](const ad::Var& z, const ad::Var& eta) {
    const ad::Var& lambda = params.value(param::lambda);
    if (eta.size() == 1) return ad::soft_threshold(z, ad::mul(lambda, eta));
    auto per_node = ad::mul(ad::mul(ad::constant(Tensor(z.shape(), 1.0)), lambda), eta);
    return ad::soft_threshold(z, per_node);
  };

  SolveResult result;
  ad::Var z = start;
  const std::size_t period = config.refresh_period();
  for (std::size_t t = 0; t < K; ++t) {
    if (period && t > 0 && t % period == 0 && result.refreshes < config.max_refreshes) {
      game.refresh_graphs(game.reconstruct(z));
      ++result.refreshes;
    }
    ad::Var eta;
    double eta_mean = 0.0;
    switch (config.step_rule) {
      case StepRule::fixed:
        eta = ad::constant(Tensor::scalar(config.eta0));
        eta_mean = config.eta0;
        break;
      case StepRule::learned:
        eta = params.entry(param::eta, t);
        eta_mean = eta.value()[0];
        break;
      case StepRule::barzilai_borwein:
        eta = ad::constant(steps.reshaped({m, 1}));
        for (double s : steps.values()) eta_mean += s / static_cast<double>(m);
        break;
    }

    ad::Var h = game.simultaneous_gradient(z, t, include_l1);
    result.trace.push_back({t, norm2(h.value()), eta_mean});
    ad::Var next;
    if (config.method == Method::gradient) {
      next = ad::sub(z, ad::mul(h, eta));
      if (prox_l1) next = proximal(next, eta);
    } else {
      ad::Var half = ad::sub(z, ad::mul(h, eta));
      if (prox_l1) half = proximal(half, eta);
      check_divergence(half.value(), t, config.divergence_bound);
      next = ad::sub(z, ad::mul(game.simultaneous_gradient(half, t, include_l1), eta));
      if (prox_l1) next = proximal(next, eta);
    }
    check_divergence(next.value(), t, config.divergence_bound);
    if (config.step_rule == StepRule::barzilai_borwein) steps = bb_step(next.value(), z.value(), bb_dictionary, steps);
    z = next;
  }
  result.final_residual = norm2(game.simultaneous_gradient(ad::constant(z.value()), K - 1, include_l1).value());
  result.codes = z;
  return result;
}

std::vector<Tensor> iterate(Method method, const std::function<Tensor(const Tensor&)>& h, const Tensor& start,
                            double eta, std::size_t iterations) {
  std::vector<Tensor> path{start};
  path.reserve(iterations + 1);
  for (std::size_t t = 0; t < iterations; ++t) {
    const Tensor& z = path.back();
    if (method == Method::gradient) {
      path.push_back(z - eta * h(z));
    } else {
      const Tensor half = z - eta * h(z);
      path.push_back(z - eta * h(half));
    }
  }
  return path;
}

Tensor bb_step(const Tensor& codes, const Tensor& previous_codes, const Tensor& dictionary,
               const Tensor& previous_steps) {
  if (codes.shape() != previous_codes.shape() || codes.rank() != 2) {
    throw std::invalid_argument("bb_step: codes shapes " + shape_string(codes.shape()) + " and " +
                                shape_string(previous_codes.shape()) + " differ");
  }
  const std::size_t m = codes.dim(0), p = codes.dim(1);
  if (dictionary.rank() != 2 || dictionary.dim(1) != p) {
    throw std::invalid_argument("bb_step: dictionary shape " + shape_string(dictionary.shape()) + " incompatible");
  }
  if (previous_steps.size() != m) throw std::invalid_argument("bb_step: one previous step per node required");
  const std::size_t q = dictionary.dim(0);
  Tensor out({m}, 0.0);
  std::vector<double> s(p), ds(q);
  for (std::size_t j = 0; j < m; ++j) {
    bool zero = true;
    for (std::size_t l = 0; l < p; ++l) {
      s[l] = codes.at(j, l) - previous_codes.at(j, l);
      zero = zero && s[l] == 0.0;
    }
    double den = 0.0;
    for (std::size_t i = 0; i < q && !zero; ++i) {
      double v = 0.0;
      for (std::size_t l = 0; l < p; ++l) v += dictionary.at(i, l) * s[l];
      ds[i] = v;
      den += v * v;
    }
    if (zero || den == 0.0) {
      out[j] = previous_steps[j];
      continue;
    }
    double num = 0.0;
    for (std::size_t l = 0; l < p; ++l) {
      double v = 0.0;
      for (std::size_t i = 0; i < q; ++i) v += dictionary.at(i, l) * ds[i];
      num += v * v;
    }
    out[j] = std::sqrt(num) / den;
  }
  return out;
}

bool is_potential_game(const Game& game) {
  const auto& params = game.params();
  if (game.model().data == DataKind::patch_dict && game.model().untied &&
      !(params.value(param::preconditioner).value() == params.value(param::dictionary).value())) {
    return false;
  }
  for (std::size_t i = 0; i < game.priors().size(); ++i) {
    const PriorKind k = game.priors()[i].kind;
    // Each node's group norm involves its neighbours' codes through a term the
    // neighbours do not share, so the own-partial field has no potential.
    if (k == PriorKind::variance_reduction || k == PriorKind::nl_group) return false;
    if (const NeighborGraph* g = game.graph(i); g && !g->weights_symmetric(1e-12)) return false;
  }
  return true;
}

PotentialReport verify_potential(const Game& game, std::size_t trials, std::uint64_t seed, double fd_step,
                                 double scale) {
  PotentialReport report;
  report.is_potential = is_potential_game(game);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  const std::size_t m = game.nodes(), p = game.code_size();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Tensor z({m, p});
    for (double& v : z.values()) v = normal(rng);
    const Tensor h = game.simultaneous_gradient(ad::constant(z), 0).value();
    for (std::size_t i = 0; i < z.size(); ++i) {
      Tensor zp = z, zm = z;
      zp[i] += fd_step;
      zm[i] -= fd_step;
      const double fd = (game.potential(zp) - game.potential(zm)) / (2.0 * fd_step);
      report.max_gradient_gap = std::max(report.max_gradient_gap, std::abs(fd - h[i]));
    }
  }
  return report;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "t,residual,eta\n";
  for (const auto& r : trace) out << r.t << ',' << r.residual << ',' << r.eta << '\n';
}

}  // namespace gameprior
