#pragma once

// Self-checks against independent numerical oracles, run by `verify`.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gameprior/model.hpp"
#include "gameprior/priors.hpp"
#include "gameprior/solver.hpp"
#include "gameprior/tensor.hpp"

namespace gameprior {

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured error or statistic
  double tolerance = 0.0;  // bound it was held to
};

/// suite: all, prox, potential, gradcheck, adjoint.
std::vector<Check> run_verify(std::string_view suite, std::uint64_t seed = 0);
const std::vector<std::string>& verify_suites();

std::vector<Check> verify_prox(std::uint64_t seed);
std::vector<Check> verify_potential(std::uint64_t seed);
std::vector<Check> verify_gradcheck(std::uint64_t seed);
std::vector<Check> verify_adjoint(std::uint64_t seed);

struct GradcheckEntry {
  std::string parameter;
  double rel_error = 0.0;  // ||g - fd|| / max(||g||, ||fd||, floor) over sampled entries
  std::size_t sampled = 0;
};

/// End-to-end d loss / d free parameters against central finite differences
/// on one (noisy, clean) pair. Samples up to `samples` entries per tensor.
std::vector<GradcheckEntry> gradcheck(const ModelConfig& model, const std::vector<PriorSpec>& priors,
                                      const SolverConfig& solver, const ModelParams& params, const Tensor& noisy,
                                      const Tensor& clean, std::size_t samples, std::uint64_t seed,
                                      double step = 1e-5);

/// The small instance used for gradient checks: 12x12 image, 3x3 patches,
/// 8 atoms, K = 3, one prior of `kind`.
struct GradcheckCase {
  ModelConfig model;
  std::vector<PriorSpec> priors;
  SolverConfig solver;
  ModelParams params;
  Tensor noisy;
  Tensor clean;
};
GradcheckCase gradcheck_case(PriorKind kind, std::uint64_t seed);

/// Potential-game probe: 8 nodes (2x4 grid, 2x2 patches, 4 atoms) with an
/// explicit neighbour graph in place of the prior's own.
struct PotentialProbe {
  double gap = 0.0;  // max |dV/dz - H| by central differences
  bool is_potential = false;
};
PotentialProbe potential_probe(PriorKind kind, const NeighborGraph& graph, std::uint64_t seed);
NeighborGraph random_symmetric_graph(std::size_t nodes, std::uint64_t seed);

}  // namespace gameprior
