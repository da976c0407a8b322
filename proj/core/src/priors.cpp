#include "gameprior/priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace gameprior {

namespace {

constexpr std::pair<PriorKind, std::string_view> kPriorNames[] = {
    {PriorKind::laplacian, "laplacian"},
    {PriorKind::nl_laplacian, "nl_laplacian"},
    {PriorKind::bilateral, "bilateral"},
    {PriorKind::tv, "tv"},
    {PriorKind::nltv, "nltv"},
    {PriorKind::bltv, "bltv"},
    {PriorKind::weighted_l1, "weighted_l1"},
    {PriorKind::nl_group, "nl_group"},
    {PriorKind::variance_reduction, "variance_reduction"},
};

bool is_pairwise_quadratic(PriorKind k) {
  return k == PriorKind::laplacian || k == PriorKind::nl_laplacian || k == PriorKind::bilateral;
}

bool is_pairwise_l1(PriorKind k) { return k == PriorKind::tv || k == PriorKind::nltv || k == PriorKind::bltv; }

struct Candidate {
  std::size_t node;
  double distance;
};

// Window neighbours of node j on the grid, mirrored at borders, duplicates removed.
std::vector<std::size_t> window_nodes(GridShape grid, std::size_t j, std::size_t window, bool include_self) {
  const long half = static_cast<long>(window / 2);
  const long r0 = static_cast<long>(j / grid.w), c0 = static_cast<long>(j % grid.w);
  std::vector<std::size_t> out;
  for (long dr = -half; dr <= half; ++dr) {
    for (long dc = -half; dc <= half; ++dc) {
      const std::size_t k = reflect_index(r0 + dr, grid.h) * grid.w + reflect_index(c0 + dc, grid.w);
      if (k == j && !include_self) continue;
      out.push_back(k);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Keeps the `cap` closest candidates (smaller index wins ties) and lays them out in slots.
struct SlotLayout {
  std::size_t degree = 0;
  std::vector<std::size_t> source, neighbor;
  Tensor mask;
};

SlotLayout select_neighbors(std::vector<std::vector<Candidate>> candidates, std::size_t cap) {
  SlotLayout s;
  for (auto& c : candidates) {
    std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.node < b.node);
    });
    if (c.size() > cap) c.resize(cap);
    s.degree = std::max(s.degree, c.size());
  }
  const std::size_t n = candidates.size();
  s.source.resize(n * s.degree);
  s.neighbor.resize(n * s.degree);
  s.mask = Tensor({n * s.degree, 1}, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t e = 0; e < s.degree; ++e) {
      const std::size_t slot = j * s.degree + e;
      s.source[slot] = j;
      if (e < candidates[j].size()) {
        s.neighbor[slot] = candidates[j][e].node;
        s.mask[slot] = 1.0;
      } else {
        s.neighbor[slot] = j;
      }
    }
  }
  return s;
}

// Masked softmax of -distance within each source node's slots.
ad::Var softmax_weights(const ad::Var& distance, const SlotLayout& s, std::size_t nodes,
                        const std::shared_ptr<const std::vector<std::size_t>>& src) {
  Tensor shift({s.source.size(), 1}, 0.0);
  Tensor lonely({nodes, 1}, 1.0);
  std::vector<double> best(nodes, std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < s.source.size(); ++e) {
    if (s.mask[e] > 0.0) {
      best[s.source[e]] = std::min(best[s.source[e]], distance.value()[e]);
      lonely[s.source[e]] = 0.0;
    }
  }
  for (std::size_t e = 0; e < s.source.size(); ++e) {
    const double b = best[s.source[e]];
    shift[e] = std::isfinite(b) ? b : 0.0;
  }
  auto e = ad::mul(ad::exp(ad::neg(ad::sub(distance, ad::constant(std::move(shift))))), ad::constant(s.mask));
  auto denom = ad::add(ad::scatter_add(e, src, nodes), ad::constant(std::move(lonely)));
  return ad::div(e, ad::gather(denom, src));
}

void require_codes(const ad::Var& codes, const char* op) {
  if (codes.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": codes must be [m,p], got " + shape_string(codes.shape()));
  }
}

void require_graph(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& t) {
  if (!t.graph) throw std::invalid_argument(std::string(to_string(spec.kind)) + ": neighbour graph missing");
  if (t.graph->nodes != codes.shape()[0]) {
    throw std::invalid_argument(std::string(to_string(spec.kind)) + ": graph has " + std::to_string(t.graph->nodes) +
                                " nodes but codes have " + std::to_string(codes.shape()[0]) + " rows");
  }
}

void require_alpha(const PriorSpec& spec, const PriorTerms& t) {
  if (!t.alpha.defined() || t.alpha.size() != 1) {
    throw std::invalid_argument(std::string(to_string(spec.kind)) + ": smoothing level alpha missing");
  }
  if (!(t.alpha.value()[0] > 0.0)) {
    throw std::invalid_argument(std::string(to_string(spec.kind)) + ": smoothing level alpha must be positive");
  }
}

void require_lambda(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& t) {
  if (!t.lambda.defined() || t.lambda.shape() != Shape{codes.shape()[1]}) {
    throw std::invalid_argument(std::string(to_string(spec.kind)) + ": lambda must have one entry per code channel");
  }
}

void require_variance_terms(const ad::Var& codes, const PriorTerms& t) {
  if (!t.reconstruction_dictionary.defined() || !t.reconstruction.defined() || !t.patches) {
    throw std::invalid_argument("variance_reduction: reconstruction dictionary, image estimate and patch layout required");
  }
  if (t.reconstruction_dictionary.shape() != Shape{t.patches->patch_size(), codes.shape()[1]}) {
    throw std::invalid_argument("variance_reduction: dictionary shape " +
                                shape_string(t.reconstruction_dictionary.shape()) + " incompatible with codes " +
                                shape_string(codes.shape()));
  }
}

// Mask of slots linking a node to itself with a real edge.
ad::Var self_slot_mask(const NeighborGraph& g) {
  Tensor mask({g.slots(), 1}, 0.0);
  for (std::size_t e = 0; e < g.slots(); ++e) mask[e] = (*g.source)[e] == (*g.neighbor)[e] ? 1.0 : 0.0;
  return ad::constant(std::move(mask));
}

// Per-node sum over slots of a_{j,k} |z_j - z_k|-type terms; `edge_term` is [E,p].
ad::Var accumulate(const NeighborGraph& g, const ad::Var& edge_term) {
  return ad::scatter_add(ad::mul(edge_term, g.weight), g.source, g.nodes);
}

// sum_k a_{j,k} z_k[l]^2, the squared group norms, [m,p].
ad::Var group_energy(const NeighborGraph& g, const ad::Var& codes) {
  return accumulate(g, ad::square(ad::gather(codes, g.neighbor)));
}

}  // namespace

std::string_view to_string(PriorKind kind) {
  for (const auto& [k, name] : kPriorNames)
    if (k == kind) return name;
  return "unknown";
}

PriorKind parse_prior_kind(std::string_view name) {
  for (const auto& [k, n] : kPriorNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown prior kind '" + std::string(name) + "'");
}

bool uses_grid_weights(PriorKind k) { return k == PriorKind::laplacian || k == PriorKind::tv; }
bool uses_nonlocal_weights(PriorKind k) {
  return k == PriorKind::nl_laplacian || k == PriorKind::nltv || k == PriorKind::nl_group;
}
bool uses_bilateral_weights(PriorKind k) { return k == PriorKind::bilateral || k == PriorKind::bltv; }
bool uses_graph(PriorKind k) { return uses_grid_weights(k) || uses_nonlocal_weights(k) || uses_bilateral_weights(k); }
bool is_smoothed(PriorKind k) { return is_pairwise_l1(k) || k == PriorKind::weighted_l1 || k == PriorKind::nl_group; }
bool uses_lambda(PriorKind k) { return k == PriorKind::weighted_l1 || k == PriorKind::nl_group; }

Tensor NeighborGraph::dense() const {
  Tensor a({nodes, nodes}, 0.0);
  for (std::size_t e = 0; e < slots(); ++e) a.at((*source)[e], (*neighbor)[e]) += weight.value()[e];
  return a;
}

bool NeighborGraph::weights_symmetric(double tol) const {
  const Tensor a = dense();
  for (std::size_t j = 0; j < nodes; ++j)
    for (std::size_t k = j + 1; k < nodes; ++k)
      if (std::abs(a.at(j, k) - a.at(k, j)) > tol) return false;
  return true;
}

double NeighborGraph::max_row_sum_error() const {
  std::vector<double> rows(nodes, 0.0);
  for (std::size_t e = 0; e < slots(); ++e) rows[(*source)[e]] += weight.value()[e];
  double worst = 0.0;
  for (double r : rows) worst = std::max(worst, std::abs(r - 1.0));
  return worst;
}

NeighborGraph make_graph(const std::vector<std::vector<std::pair<std::size_t, double>>>& adjacency) {
  NeighborGraph g;
  g.nodes = adjacency.size();
  for (const auto& list : adjacency) g.degree = std::max(g.degree, list.size());
  std::vector<std::size_t> src(g.slots()), nbr(g.slots());
  Tensor w({g.slots(), 1}, 0.0);
  for (std::size_t j = 0; j < g.nodes; ++j) {
    for (std::size_t e = 0; e < g.degree; ++e) {
      const std::size_t slot = j * g.degree + e;
      src[slot] = j;
      nbr[slot] = j;
      if (e < adjacency[j].size()) {
        if (adjacency[j][e].first >= g.nodes) throw std::out_of_range("make_graph: neighbour index out of range");
        nbr[slot] = adjacency[j][e].first;
        w[slot] = adjacency[j][e].second;
      }
    }
  }
  g.source = ad::make_index(std::move(src));
  g.neighbor = ad::make_index(std::move(nbr));
  g.weight = ad::constant(std::move(w));
  g.symmetric = g.weights_symmetric();
  return g;
}

std::size_t grid_offset_count(std::size_t radius) { return (2 * radius + 1) * (2 * radius + 1) - 1; }

std::size_t grid_weight_count(std::size_t radius, bool symmetric) {
  return symmetric ? grid_offset_count(radius) / 2 : grid_offset_count(radius);
}

NeighborGraph grid_graph(GridShape grid, std::size_t radius, const ad::Var& offset_weights, bool symmetric) {
  const std::size_t n_off = grid_offset_count(radius);
  const std::size_t n_w = grid_weight_count(radius, symmetric);
  if (radius == 0) throw std::invalid_argument("grid_graph: radius must be positive");
  if (offset_weights.size() != n_w) {
    throw std::invalid_argument("grid_graph: expected " + std::to_string(n_w) + " offset weights, got shape " +
                                shape_string(offset_weights.shape()));
  }
  // Row-major offsets without the centre; offset i and n_off-1-i are opposite.
  std::vector<std::pair<long, long>> offsets;
  const long r = static_cast<long>(radius);
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (dy != 0 || dx != 0) offsets.emplace_back(dy, dx);

  NeighborGraph g;
  g.nodes = grid.size();
  g.degree = n_off;
  g.symmetric = symmetric;
  std::vector<std::size_t> src(g.slots()), nbr(g.slots()), widx(g.slots());
  Tensor mask({g.slots(), 1}, 0.0);
  for (std::size_t j = 0; j < g.nodes; ++j) {
    const long y = static_cast<long>(j / grid.w), x = static_cast<long>(j % grid.w);
    for (std::size_t o = 0; o < n_off; ++o) {
      const std::size_t slot = j * n_off + o;
      const long ny = y + offsets[o].first, nx = x + offsets[o].second;
      const bool inside = ny >= 0 && nx >= 0 && ny < static_cast<long>(grid.h) && nx < static_cast<long>(grid.w);
      src[slot] = j;
      nbr[slot] = inside ? static_cast<std::size_t>(ny) * grid.w + static_cast<std::size_t>(nx) : j;
      widx[slot] = symmetric ? std::min(o, n_off - 1 - o) : o;
      mask[slot] = inside ? 1.0 : 0.0;
    }
  }
  g.source = ad::make_index(std::move(src));
  g.neighbor = ad::make_index(std::move(nbr));
  auto column = ad::reshape(offset_weights, {n_w, 1});
  g.weight = ad::mul(ad::gather(column, ad::make_index(std::move(widx))), ad::constant(std::move(mask)));
  return g;
}

NeighborGraph nonlocal_weights(const ad::Var& patches, const ad::Var& kappa, GridShape grid, std::size_t window,
                               std::size_t max_neighbors, bool include_self) {
  if (patches.shape().size() != 2 || patches.shape()[0] != grid.size()) {
    throw std::invalid_argument("nonlocal_weights: patches shape " + shape_string(patches.shape()) +
                                " does not match a grid of " + std::to_string(grid.size()) + " nodes");
  }
  const std::size_t n = grid.size(), q = patches.shape()[1];
  if (kappa.shape() != Shape{q}) {
    throw std::invalid_argument("nonlocal_weights: kappa shape " + shape_string(kappa.shape()) + " expected [" +
                                std::to_string(q) + "]");
  }
  if (window % 2 == 0) throw std::invalid_argument("nonlocal_weights: window side must be odd");

  const Tensor& P = patches.value();
  const Tensor& K = kappa.value();
  std::vector<std::vector<Candidate>> cand(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k : window_nodes(grid, j, window, include_self)) {
      double d = 0.0;
      for (std::size_t c = 0; c < q; ++c) {
        const double v = K[c] * (P[j * q + c] - P[k * q + c]);
        d += v * v;
      }
      cand[j].push_back({k, d});
    }
  }
  SlotLayout s = select_neighbors(std::move(cand), max_neighbors);

  NeighborGraph g;
  g.nodes = n;
  g.degree = s.degree;
  g.source = ad::make_index(s.source);
  g.neighbor = ad::make_index(s.neighbor);
  auto diff = ad::sub(ad::gather(patches, g.source), ad::gather(patches, g.neighbor));
  auto distance = ad::sum_rows(ad::square(ad::mul(diff, kappa)));
  g.weight = softmax_weights(distance, s, n, g.source);
  return g;
}

NeighborGraph bilateral_weights(const ad::Var& intensity, const ad::Var& sigma_d, const ad::Var& sigma_r,
                                std::size_t window, std::size_t max_neighbors) {
  if (intensity.shape().size() != 2) {
    throw std::invalid_argument("bilateral_weights: intensity must be [h,w], got " + shape_string(intensity.shape()));
  }
  if (sigma_d.size() != 1 || sigma_r.size() != 1) throw std::invalid_argument("bilateral_weights: sigmas must be scalars");
  const double sd = sigma_d.value()[0], sr = sigma_r.value()[0];
  if (!(sd > 0.0) || !(sr > 0.0)) {
    throw std::invalid_argument("bilateral_weights: sigma_d and sigma_r must be positive (got " + std::to_string(sd) +
                                ", " + std::to_string(sr) + ")");
  }
  if (window % 2 == 0) throw std::invalid_argument("bilateral_weights: window side must be odd");
  const GridShape grid{intensity.shape()[0], intensity.shape()[1]};
  const std::size_t n = grid.size();
  const Tensor& X = intensity.value();

  auto spatial = [&](std::size_t j, std::size_t k) {
    const double dy = static_cast<double>(j / grid.w) - static_cast<double>(k / grid.w);
    const double dx = static_cast<double>(j % grid.w) - static_cast<double>(k % grid.w);
    return dy * dy + dx * dx;
  };
  std::vector<std::vector<Candidate>> cand(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k : window_nodes(grid, j, window, false)) {
      const double di = X[j] - X[k];
      cand[j].push_back({k, di * di / (2 * sd * sd) + spatial(j, k) / (2 * sr * sr)});
    }
  }
  SlotLayout s = select_neighbors(std::move(cand), max_neighbors);

  NeighborGraph g;
  g.nodes = n;
  g.degree = s.degree;
  g.source = ad::make_index(s.source);
  g.neighbor = ad::make_index(s.neighbor);
  Tensor sq({g.slots(), 1}, 0.0);
  for (std::size_t e = 0; e < g.slots(); ++e) sq[e] = spatial(s.source[e], s.neighbor[e]);
  auto flat = ad::reshape(intensity, {n, 1});
  auto di = ad::sub(ad::gather(flat, g.source), ad::gather(flat, g.neighbor));
  auto distance = ad::add(ad::div(ad::square(di), ad::scale(ad::square(sigma_d), 2.0)),
                          ad::div(ad::constant(std::move(sq)), ad::scale(ad::square(sigma_r), 2.0)));
  g.weight = softmax_weights(distance, s, n, g.source);
  return g;
}

Tensor prox(Penalty phi, const Tensor& u, double threshold) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("prox: threshold must be non-negative");
  Tensor v = u;
  if (phi == Penalty::l1) {
    for (double& x : v.values()) x = x > threshold ? x - threshold : (x < -threshold ? x + threshold : 0.0);
    return v;
  }
  const double n = norm2(u);
  const double factor = n > 0.0 ? std::max(0.0, 1.0 - threshold / n) : 0.0;
  for (double& x : v.values()) x *= factor;
  return v;
}

Tensor moreau_grad(Penalty phi, const Tensor& u, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("moreau_grad: alpha must be positive");
  return alpha * (u - prox(phi, u, 1.0 / alpha));
}

double moreau_envelope(Penalty phi, const Tensor& u, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("moreau_envelope: alpha must be positive");
  auto huber = [alpha](double r) { return alpha * r <= 1.0 ? 0.5 * alpha * r * r : r - 0.5 / alpha; };
  if (phi == Penalty::l2norm) return huber(norm2(u));
  double s = 0.0;
  for (double x : u.values()) s += huber(std::abs(x));
  return s;
}

ad::Var prior_gradient(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& t) {
  require_codes(codes, "prior_gradient");
  const std::size_t m = codes.shape()[0];
  if (uses_graph(spec.kind)) require_graph(spec, codes, t);

  if (is_pairwise_quadratic(spec.kind)) {
    const NeighborGraph& g = *t.graph;
    auto diff = ad::sub(ad::gather(codes, g.source), ad::gather(codes, g.neighbor));
    return ad::scale(accumulate(g, diff), 2.0);
  }
  if (is_pairwise_l1(spec.kind)) {
    require_alpha(spec, t);
    const NeighborGraph& g = *t.graph;
    auto diff = ad::sub(ad::gather(codes, g.source), ad::gather(codes, g.neighbor));
    return accumulate(g, ad::clamp_unit(ad::mul(diff, t.alpha)));
  }
  switch (spec.kind) {
    case PriorKind::weighted_l1:
      require_alpha(spec, t);
      require_lambda(spec, codes, t);
      return ad::mul(ad::clamp_unit(ad::mul(codes, t.alpha)), t.lambda);
    case PriorKind::nl_group: {
      require_alpha(spec, t);
      require_lambda(spec, codes, t);
      const NeighborGraph& g = *t.graph;
      // lambda_l a_jj alpha z_j[l] / max(1, alpha ||g_jl||)
      auto energy = group_energy(g, codes);
      auto denom = ad::sqrt(ad::add_scalar(ad::max0(ad::add_scalar(ad::mul(energy, ad::square(t.alpha)), -1.0)), 1.0));
      auto self_weight = ad::scatter_add(ad::mul(g.weight, self_slot_mask(g)), g.source, m);
      auto shrunk = ad::div(ad::mul(codes, t.alpha), denom);
      return ad::mul(ad::mul(shrunk, t.lambda), self_weight);
    }
    case PriorKind::variance_reduction: {
      require_variance_terms(codes, t);
      const ad::Var& W = t.reconstruction_dictionary;
      auto residual = ad::sub(ad::matmul(codes, ad::transpose(W)), t.patches->extract(t.reconstruction));
      return ad::scale(ad::matmul(residual, W), 2.0);
    }
    default:
      break;
  }
  throw std::logic_error("prior_gradient: unhandled prior kind");
}

ad::Var node_penalties(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& t) {
  require_codes(codes, "node_penalties");
  const std::size_t m = codes.shape()[0];
  if (uses_graph(spec.kind)) require_graph(spec, codes, t);

  if (is_pairwise_quadratic(spec.kind)) {
    const NeighborGraph& g = *t.graph;
    auto diff = ad::sub(ad::gather(codes, g.source), ad::gather(codes, g.neighbor));
    return ad::scatter_add(ad::mul(ad::sum_rows(ad::square(diff)), g.weight), g.source, m);
  }
  if (is_pairwise_l1(spec.kind)) {
    require_alpha(spec, t);
    const NeighborGraph& g = *t.graph;
    auto diff = ad::sub(ad::gather(codes, g.source), ad::gather(codes, g.neighbor));
    auto h = ad::sum_rows(ad::abs_smooth(diff, t.alpha.value()[0]));
    return ad::scatter_add(ad::mul(h, g.weight), g.source, m);
  }
  switch (spec.kind) {
    case PriorKind::weighted_l1:
      require_alpha(spec, t);
      require_lambda(spec, codes, t);
      return ad::sum_rows(ad::mul(ad::abs_smooth(codes, t.alpha.value()[0]), t.lambda));
    case PriorKind::nl_group: {
      require_alpha(spec, t);
      require_lambda(spec, codes, t);
      // Huber of the block norm: alpha r^2/2 inside 1/alpha, r - 1/(2 alpha) outside.
      const double alpha = t.alpha.value()[0];
      const Tensor energy = group_energy(*t.graph, codes).value();
      const std::size_t p = codes.shape()[1];
      Tensor out({m, 1}, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < p; ++l) {
          const double r = std::sqrt(energy[j * p + l]);
          s += t.lambda.value()[l] * (alpha * r <= 1.0 ? 0.5 * alpha * r * r : r - 0.5 / alpha);
        }
        out[j] = s;
      }
      return ad::constant(std::move(out));
    }
    case PriorKind::variance_reduction: {
      require_variance_terms(codes, t);
      auto residual = ad::sub(ad::matmul(codes, ad::transpose(t.reconstruction_dictionary)),
                              t.patches->extract(t.reconstruction));
      return ad::sum_rows(ad::square(residual));
    }
    default:
      break;
  }
  throw std::logic_error("node_penalties: unhandled prior kind");
}

}  // namespace gameprior
