#include "gameprior/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "gameprior/checkpoint.hpp"
#include "gameprior/patch.hpp"
#include "gameprior/trainer.hpp"

namespace gameprior {
namespace {

Check make_check(std::string suite, std::string name, double value, double tolerance) {
  return Check{std::move(suite), std::move(name), std::isfinite(value) && value < tolerance, value, tolerance};
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Minimises a convex f on [lo, hi] by golden-section search.
template <class F>
double golden_min(F f, double lo, double hi, int iterations = 200) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return std::min(fc, fd);
}

// Envelope min_v phi(v) + alpha/2 |v-u|^2 by direct minimisation. For l1 the
// problem separates by coordinate; for the l2 norm the minimiser lies on the
// segment from 0 to u.
double numeric_envelope(Penalty phi, const Tensor& u, double alpha) {
  if (phi == Penalty::l1) {
    double s = 0.0;
    for (double x : u.values()) {
      s += golden_min([&](double v) { return std::abs(v) + 0.5 * alpha * (v - x) * (v - x); },
                      std::min(0.0, x) - 1.0, std::max(0.0, x) + 1.0);
    }
    return s;
  }
  const double n = norm2(u);
  return golden_min([&](double t) { return std::abs(t) + 0.5 * alpha * (t - n) * (t - n); }, -1.0, n + 1.0);
}

// Coarse-to-fine grid search of argmin phi(v) + |v-u|^2/(2 tau) in 1 or 2
// dimensions; returns the minimiser and the final grid spacing.
std::pair<Tensor, double> grid_search_prox(Penalty phi, const Tensor& u, double tau) {
  const std::size_t dim = u.size();
  auto objective = [&](const std::vector<double>& v) {
    double pen = 0.0, dist = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      dist += (v[i] - u[i]) * (v[i] - u[i]);
      pen += phi == Penalty::l1 ? std::abs(v[i]) : v[i] * v[i];
    }
    if (phi == Penalty::l2norm) pen = std::sqrt(pen);
    return pen + dist / (2.0 * tau);
  };
  const int n = dim == 1 ? 2001 : 201;
  std::vector<double> centre(u.values().begin(), u.values().end());
  double half = max_abs(u) + 1.0;
  double spacing = 0.0;
  // refinement stops near 1e-6: below that the objective differences sink
  // under double precision
  for (spacing = 2.0 * half / (n - 1); spacing > 1e-6; spacing = 2.0 * half / (n - 1)) {
    std::vector<double> best = centre, v(dim);
    double best_f = objective(centre);
    if (dim == 1) {
      for (int i = 0; i < n; ++i) {
        v[0] = centre[0] - half + i * spacing;
        if (double f = objective(v); f < best_f) best_f = f, best = v;
      }
    } else {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          v[0] = centre[0] - half + i * spacing;
          v[1] = centre[1] - half + j * spacing;
          if (double f = objective(v); f < best_f) best_f = f, best = v;
        }
      }
    }
    centre = best;
    half = 4.0 * spacing;
  }
  return {Tensor(u.shape(), centre), half / 4.0};
}

}  // namespace

std::vector<Check> verify_prox(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Check> out;

  double soft = 0.0, block = 0.0, soft_tol = 0.0, block_tol = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double tau = 0.1 + 1.9 * unit(rng);
    const Tensor s = random_tensor({1}, rng, 2.0);
    auto [gs, hs] = grid_search_prox(Penalty::l1, s, tau);
    soft = std::max(soft, max_abs_diff(prox(Penalty::l1, s, tau), gs) / hs);
    const Tensor v = random_tensor({2}, rng, 2.0);
    auto [gv, hv] = grid_search_prox(Penalty::l2norm, v, tau);
    block = std::max(block, max_abs_diff(prox(Penalty::l2norm, v, tau), gv) / hv);
  }
  // errors in units of the final grid spacing; the grid argmin of a convex
  // function may sit one cell past the nearest node in each coordinate
  soft_tol = block_tol = 2.0;
  out.push_back(make_check("prox", "soft-threshold vs grid search (grid steps)", soft, soft_tol));
  out.push_back(make_check("prox", "block shrinkage vs grid search (grid steps)", block, block_tol));

  for (Penalty phi : {Penalty::l1, Penalty::l2norm}) {
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double alpha = 0.2 + 3.0 * unit(rng);
      const Tensor u = random_tensor({3}, rng, 1.5);
      const Tensor g = moreau_grad(phi, u, alpha);
      Tensor fd(u.shape());
      for (std::size_t k = 0; k < u.size(); ++k) {
        const double h = 1e-5;
        Tensor up = u, um = u;
        up[k] += h;
        um[k] -= h;
        fd[k] = (numeric_envelope(phi, up, alpha) - numeric_envelope(phi, um, alpha)) / (2.0 * h);
      }
      worst = std::max(worst, norm2(g - fd) / std::max({norm2(g), norm2(fd), 1e-12}));
    }
    out.push_back(make_check("prox", std::string("moreau gradient vs envelope differences (") +
                                         (phi == Penalty::l1 ? "l1" : "l2norm") + ")",
                             worst, 1e-4));
  }
  return out;
}

NeighborGraph random_symmetric_graph(std::size_t nodes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    for (std::size_t k = j + 1; k < nodes; ++k) {
      if (unit(rng) < 0.5) continue;
      const double a = 0.1 + 0.9 * unit(rng);
      adj[j].emplace_back(k, a);
      adj[k].emplace_back(j, a);
    }
  }
  return make_graph(adj);
}

PotentialProbe potential_probe(PriorKind kind, const NeighborGraph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelConfig model{DataKind::patch_dict, 2, 4, false};
  std::vector<PriorSpec> priors{PriorSpec{kind}};
  priors[0].window = 5;
  ModelParams params;
  const Tensor d = spectral_normalize(random_tensor({4, 4}, rng));
  params.add(std::string(param::dictionary), d);
  params.add(std::string(param::reconstruction), d);
  params.add(std::string(param::lambda), Tensor({4}, 0.3), Constraint::positive);
  params.add(std::string(param::kappa), Tensor({4}, 1.0));
  params.add(param::grid_weights(0), Tensor({grid_weight_count(1, false)}, 0.1), Constraint::positive);
  params.add(std::string(param::eta), Tensor({1}, 1.0), Constraint::positive);
  params.add(std::string(param::alpha), Tensor({1, 1}, 1.0));
  const BoundParams bound(params, nullptr);
  Game game(model, priors, bound, ad::constant(random_tensor({3, 5}, rng)));
  if (game.nodes() != graph.nodes) throw std::invalid_argument("potential_probe: graph must have 8 nodes");
  game.set_graph(0, graph);
  const PotentialReport r = verify_potential(game, 3, seed + 1);
  return {r.max_gradient_gap, r.is_potential};
}

std::vector<Check> verify_potential(std::uint64_t seed) {
  std::vector<Check> out;
  for (PriorKind kind : {PriorKind::tv, PriorKind::laplacian, PriorKind::nl_group}) {
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
      NeighborGraph g = random_symmetric_graph(8, seed * 31 + trial);
      const PotentialProbe sym = potential_probe(kind, g, seed + trial);
      // the classification must agree with the measured gap
      const bool consistent = sym.is_potential == (sym.gap < 1e-8);
      out.push_back(Check{"potential",
                          std::string(to_string(kind)) + " symmetric: is_potential agrees with |grad V - H|",
                          consistent, sym.gap, 1e-8});

      // perturb one directed weight
      Tensor w = g.weight.value();
      for (std::size_t e = 0; e < g.slots(); ++e) {
        if ((*g.source)[e] != (*g.neighbor)[e] && w[e] > 0.0) {
          w[e] += 0.5;
          break;
        }
      }
      g.weight = ad::constant(w);
      g.symmetric = false;
      const PotentialProbe asym = potential_probe(kind, g, seed + trial);
      out.push_back(Check{"potential", std::string(to_string(kind)) + " asymmetric: not a potential game",
                          !asym.is_potential, asym.gap, 0.0});
    }
  }
  return out;
}

GradcheckCase gradcheck_case(PriorKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradcheckCase c;
  c.model = ModelConfig{DataKind::patch_dict, 3, 8, false};
  PriorSpec p{kind};
  p.window = 5;
  p.max_neighbors = 8;
  c.priors = {p};
  c.solver.iterations = 3;
  c.solver.method = Method::extragradient;
  c.solver.step_rule = StepRule::learned;
  c.solver.refresh_fraction = 1.0 / 3.0;
  c.clean = Tensor({12, 12});
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t col = 0; col < 12; ++col)
      c.clean[r * 12 + col] = 0.5 + 0.3 * std::sin(0.5 * r) * std::cos(col / 3.0) + (col > 6 ? 0.2 : 0.0);
  c.noisy = c.clean + random_tensor({12, 12}, rng, 0.1);
  c.params = init_params({c.clean}, c.model, c.priors, InitOptions{3, 1.0, seed});
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& prm : c.params.parameters()) {
    for (double& v : prm.free.values()) v += 0.05 * n(rng) * (std::abs(v) + 0.1);
  }
  return c;
}

std::vector<GradcheckEntry> gradcheck(const ModelConfig& model, const std::vector<PriorSpec>& priors,
                                      const SolverConfig& solver, const ModelParams& params, const Tensor& noisy,
                                      const Tensor& clean, std::size_t samples, std::uint64_t seed, double step) {
  const StepResult analytic = loss_and_gradient(model, priors, solver, params, {TrainItem{noisy, clean}});
  std::mt19937_64 rng(seed);
  std::vector<GradcheckEntry> out;
  ModelParams probe = params;
  auto eval = [&] { return loss(clean, denoise(model, priors, solver, probe, noisy)); };
  const auto& ps = params.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i].trainable) continue;
    std::vector<std::size_t> idx(ps[i].free.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(samples, idx.size()));
    double diff = 0.0, gn = 0.0, fn = 0.0;
    for (std::size_t k : idx) {
      double& f = probe.parameters()[i].free[k];
      const double orig = f;
      const double h = step * std::max(1.0, std::abs(orig));
      f = orig + h;
      const double lp = eval();
      f = orig - h;
      const double lm = eval();
      f = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = analytic.grads[i][k];
      diff += (g - fd) * (g - fd);
      gn += g * g;
      fn += fd * fd;
    }
    const double denom = std::max({std::sqrt(gn), std::sqrt(fn), 1e-10});
    out.push_back({ps[i].name, std::sqrt(diff) / denom, idx.size()});
  }
  return out;
}

std::vector<Check> verify_gradcheck(std::uint64_t seed) {
  std::vector<Check> out;
  for (PriorKind kind : {PriorKind::laplacian, PriorKind::nl_laplacian, PriorKind::bilateral, PriorKind::tv,
                         PriorKind::nltv, PriorKind::bltv, PriorKind::weighted_l1, PriorKind::nl_group,
                         PriorKind::variance_reduction}) {
    const GradcheckCase c = gradcheck_case(kind, seed);
    double worst = 0.0;
    std::string where;
    for (const auto& e : gradcheck(c.model, c.priors, c.solver, c.params, c.noisy, c.clean, 6, seed)) {
      if (e.rel_error >= worst) worst = e.rel_error, where = e.parameter;
    }
    out.push_back(make_check("gradcheck", std::string(to_string(kind)) + " (worst: " + where + ")", worst, 1e-4));
  }
  return out;
}

std::vector<Check> verify_adjoint(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Check> out;

  for (const PatchLayout& layout : {PatchLayout{13, 11, 4, 1, Boundary::valid}, PatchLayout{13, 11, 3, 2, Boundary::valid},
                                    PatchLayout{9, 9, 5, 1, Boundary::reflect}}) {
    const PatchOperator op(layout);
    const Tensor x = random_tensor({layout.image_h, layout.image_w}, rng);
    const Tensor p = random_tensor({op.patch_count(), op.patch_size()}, rng);
    const double lhs = dot(op.extract(ad::constant(x)).value(), p);
    const double rhs = dot(x, op.place_transpose(ad::constant(p)).value());
    std::ostringstream name;
    name << "patch adjoint " << layout.image_h << "x" << layout.image_w << " side " << layout.patch_side
         << " stride " << layout.stride << (layout.boundary == Boundary::reflect ? " reflect" : "");
    out.push_back(make_check("adjoint", name.str(), std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)), 1e-10));
  }

  {
    const GridShape grid{6, 7};
    const Tensor patches = random_tensor({grid.size(), 9}, rng);
    const Tensor kappa = random_tensor({9}, rng, 0.5);
    for (bool self : {false, true}) {
      const NeighborGraph g = nonlocal_weights(ad::constant(patches), ad::constant(kappa), grid, 5, 8, self);
      out.push_back(make_check("adjoint", std::string("non-local row sums") + (self ? " with self" : ""),
                               g.max_row_sum_error(), 1e-10));
    }
    const NeighborGraph b = bilateral_weights(ad::constant(random_tensor({6, 7}, rng, 20.0)),
                                              ad::constant(Tensor::scalar(25.0)), ad::constant(Tensor::scalar(2.0)),
                                              5, 8);
    out.push_back(make_check("adjoint", "bilateral row sums", b.max_row_sum_error(), 1e-10));
  }

  {
    const Tensor d = spectral_normalize(random_tensor({81, 256}, rng));
    // largest eigenvalue of D D^T by plain power iteration on the Gram matrix
    const std::size_t q = d.dim(0), p = d.dim(1);
    Tensor gram({q, q}, 0.0);
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < q; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < p; ++l) s += d.at(i, l) * d.at(j, l);
        gram[i * q + j] = s;
      }
    Tensor v({q}, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      Tensor next({q}, 0.0);
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j) next[i] += gram[i * q + j] * v[j];
      const double n = norm2(next);
      const double change = std::abs(n - lambda);
      lambda = n;
      v = (1.0 / n) * next;
      if (change < 1e-15) break;
    }
    out.push_back(make_check("adjoint", "spectral normalization sigma_max = 1", std::abs(std::sqrt(lambda) - 1.0),
                             1e-8));
  }

  {
    Checkpoint c;
    c.config = preset("tv");
    c.state.params.add("D", random_tensor({4, 3}, rng));
    c.state.params.add("lambda", Tensor({3}, 0.1), Constraint::positive);
    c.state.params.get("lambda").trainable = false;
    c.state.optimizer = make_adam(c.state.params);
    c.state.optimizer.step = 7;
    c.state.optimizer.m[0] = random_tensor({4, 3}, rng, 1e-3);
    c.state.optimizer.v[0] = random_tensor({4, 3}, rng, 1e-7);
    c.state.step = 42;
    c.state.lr_scale = 0.8 * 0.8;
    c.state.rng.seed(seed + 5);
    c.state.rng.discard(17);
    std::stringstream first;
    write_checkpoint(first, c);
    const std::string bytes = first.str();
    const Checkpoint back = read_checkpoint(first);
    std::stringstream second;
    write_checkpoint(second, back);
    const bool same = back == c && second.str() == bytes;
    out.push_back(Check{"adjoint", "checkpoint bit-exact round trip", same, same ? 0.0 : 1.0, 0.0});
  }
  return out;
}

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names{"all", "prox", "potential", "gradcheck", "adjoint"};
  return names;
}

std::vector<Check> run_verify(std::string_view suite, std::uint64_t seed) {
  std::vector<Check> out;
  auto append = [&out](std::vector<Check> v) { out.insert(out.end(), v.begin(), v.end()); };
  const bool all = suite == "all";
  if (!all && std::find(verify_suites().begin(), verify_suites().end(), suite) == verify_suites().end()) {
    throw std::invalid_argument("unknown verify suite '" + std::string(suite) + "'");
  }
  if (all || suite == "prox") append(verify_prox(seed));
  if (all || suite == "potential") append(verify_potential(seed));
  if (all || suite == "gradcheck") append(verify_gradcheck(seed));
  if (all || suite == "adjoint") append(verify_adjoint(seed));
  return out;
}

}  // namespace gameprior
