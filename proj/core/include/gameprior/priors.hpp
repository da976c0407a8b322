#pragma once

// Regularizers coupling the per-patch problems, their neighbour graphs, and
// the proximal / Moreau-Yosida machinery used to smooth the non-smooth ones.

#include <cstddef>
#include <memory>
#include <string_view>
#include <utility>
#include <vector>

#include "gameprior/autodiff.hpp"
#include "gameprior/patch.hpp"
#include "gameprior/tensor.hpp"

namespace gameprior {

enum class PriorKind {
  laplacian,
  nl_laplacian,
  bilateral,
  tv,
  nltv,
  bltv,
  weighted_l1,
  nl_group,
  variance_reduction,
};

std::string_view to_string(PriorKind kind);
PriorKind parse_prior_kind(std::string_view name);

bool uses_grid_weights(PriorKind kind);    // laplacian, tv
bool uses_nonlocal_weights(PriorKind kind);  // nl_laplacian, nltv, nl_group
bool uses_bilateral_weights(PriorKind kind); // bilateral, bltv
bool uses_graph(PriorKind kind);
bool is_smoothed(PriorKind kind);          // penalties built on |.| or ||.||_2
bool uses_lambda(PriorKind kind);          // weighted_l1, nl_group

struct PriorSpec {
  PriorKind kind = PriorKind::tv;
  std::size_t radius = 1;             // grid stencil half-width (grid kinds)
  bool symmetric = false;             // grid kinds: a_{j-k} shared with a_{k-j}
  std::size_t window = 55;            // similarity search window side, odd
  std::size_t max_neighbors = 32;     // cap on similarity neighbours per node
  std::size_t similarity_patch = 5;   // pixel models: side of centred patches compared by the non-local distance

  friend bool operator==(const PriorSpec&, const PriorSpec&) = default;
};

struct GridShape {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t size() const { return h * w; }
};

/// Directed weighted neighbour lists in a fixed-degree slot layout: slot e
/// links source[e] to neighbor[e] with weight[e]. Unused slots point a node at
/// itself with weight zero.
struct NeighborGraph {
  std::size_t nodes = 0;
  std::size_t degree = 0;
  std::shared_ptr<const std::vector<std::size_t>> source;
  std::shared_ptr<const std::vector<std::size_t>> neighbor;
  ad::Var weight;  // [nodes*degree, 1]
  bool symmetric = false;

  std::size_t slots() const { return nodes * degree; }
  Tensor dense() const;  // [nodes,nodes], a_{j,k} at (j,k)
  bool weights_symmetric(double tol = 1e-12) const;
  double max_row_sum_error() const;  // max_j |sum_k a_{j,k} - 1|
};

/// Builds a graph from explicit adjacency lists (j -> {(k, a_jk)}).
NeighborGraph make_graph(const std::vector<std::vector<std::pair<std::size_t, double>>>& adjacency);

/// Number of stencil offsets (directed) and of free weights for a grid stencil.
std::size_t grid_offset_count(std::size_t radius);
std::size_t grid_weight_count(std::size_t radius, bool symmetric);

/// Translation-invariant stencil on a node grid; offset_weights has
/// grid_weight_count() entries and is differentiable.
NeighborGraph grid_graph(GridShape grid, std::size_t radius, const ad::Var& offset_weights, bool symmetric);

/// Softmax of -||diag(kappa)(P_j x - P_k x)||^2 over the window around j
/// (mirrored at borders), keeping the `max_neighbors` largest weights.
NeighborGraph nonlocal_weights(const ad::Var& patches, const ad::Var& kappa, GridShape grid, std::size_t window,
                               std::size_t max_neighbors, bool include_self);

/// Softmax of -(|x_i-x_j|^2/(2 sigma_d^2) + |i-j|^2/(2 sigma_r^2)) over the
/// window around j, self excluded.
NeighborGraph bilateral_weights(const ad::Var& intensity, const ad::Var& sigma_d, const ad::Var& sigma_r,
                                std::size_t window, std::size_t max_neighbors);

enum class Penalty { l1, l2norm };

/// argmin_v phi(v) + |v-u|^2 / (2 threshold). l2norm treats u as one block.
Tensor prox(Penalty phi, const Tensor& u, double threshold);
/// Gradient of the Moreau envelope min_v phi(v) + alpha/2 |v-u|^2.
Tensor moreau_grad(Penalty phi, const Tensor& u, double alpha);
double moreau_envelope(Penalty phi, const Tensor& u, double alpha);

/// Inputs a prior needs at one solver iteration.
struct PriorTerms {
  ad::Var alpha;                       // [1] smoothing level
  ad::Var lambda;                      // [p] sparsity weights
  const NeighborGraph* graph = nullptr;
  ad::Var reconstruction_dictionary;   // W, variance reduction
  ad::Var reconstruction;              // current image estimate, variance reduction
  const PatchOperator* patches = nullptr;
};

/// Block-stacked partials of every node's own (smoothed) penalty, [m,p].
ad::Var prior_gradient(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& terms);

/// Per-node smoothed penalty values psi_j, [m,1].
ad::Var node_penalties(const PriorSpec& spec, const ad::Var& codes, const PriorTerms& terms);

}  // namespace gameprior
