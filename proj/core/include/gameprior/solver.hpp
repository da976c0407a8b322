#pragma once

// Unrolled gradient / extra-gradient iterations on the simultaneous gradient
// H(Z) = [grad_{z_j} h_j(Z)]_j of the patch-level game.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gameprior/autodiff.hpp"
#include "gameprior/model.hpp"
#include "gameprior/patch.hpp"
#include "gameprior/priors.hpp"

namespace gameprior {

enum class Method { gradient, extragradient };
enum class StepRule { fixed, learned, barzilai_borwein };
enum class L1Mode { smoothed, proximal_step };

std::string_view to_string(Method m);
std::string_view to_string(StepRule r);
std::string_view to_string(L1Mode m);
Method parse_method(std::string_view s);
StepRule parse_step_rule(std::string_view s);
L1Mode parse_l1_mode(std::string_view s);

struct SolverConfig {
  std::size_t iterations = 24;  // K
  Method method = Method::extragradient;
  StepRule step_rule = StepRule::learned;
  double eta0 = 1.0;
  double refresh_fraction = 1.0 / 6.0;  // similarity refresh period as a fraction of K
  std::size_t max_refreshes = 3;
  L1Mode l1_mode = L1Mode::smoothed;
  double divergence_bound = 1e12;  // |Z| beyond this counts as divergence

  void validate() const;
  /// Iterations between similarity refreshes, 0 when refreshing is off.
  std::size_t refresh_period() const;

  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

struct TraceRow {
  std::size_t t = 0;
  double residual = 0.0;  // ||H(Z_t)||_2
  double eta = 0.0;       // mean step over nodes
};

/// One game instance: a corrupted image, the model, and its priors.
class Game {
 public:
  Game(const ModelConfig& model, std::vector<PriorSpec> priors, const BoundParams& params, const ad::Var& image);

  const ModelConfig& model() const noexcept { return model_; }
  const std::vector<PriorSpec>& priors() const noexcept { return priors_; }
  const BoundParams& params() const noexcept { return *params_; }
  const PatchOperator& patches() const noexcept { return patches_; }
  GridShape node_grid() const noexcept { return grid_; }
  std::size_t nodes() const noexcept { return patches_.patch_count(); }
  std::size_t code_size() const noexcept { return model_.code_size(); }
  /// Data seen by every node: patches [m,q] or pixels [m,1].
  const ad::Var& inputs() const noexcept { return inputs_; }

  /// Recomputes similarity graphs (non-local and bilateral priors) from `image`.
  void refresh_graphs(const ad::Var& image);
  void set_graph(std::size_t prior_index, NeighborGraph graph);
  const NeighborGraph* graph(std::size_t prior_index) const;

  /// H(Z) at iteration t (selects alpha_t). `include_l1 = false` leaves the
  /// weighted l1 term out for the proximal-step variant.
  ad::Var simultaneous_gradient(const ad::Var& codes, std::size_t t, bool include_l1 = true) const;
  ad::Var reconstruct(const ad::Var& codes) const;
  ad::Var initial_codes() const;

  /// V(Z): data terms plus half of every pairwise penalty and all unary ones.
  double potential(const Tensor& codes, std::size_t t = 0) const;

 private:
  PriorTerms terms(std::size_t index, const ad::Var& codes, std::size_t t) const;
  ad::Var similarity_patches(const ad::Var& image) const;
  ad::Var node_intensity(const ad::Var& image) const;

  ModelConfig model_;
  std::vector<PriorSpec> priors_;
  const BoundParams* params_;
  PatchOperator patches_;
  GridShape grid_;
  ad::Var inputs_;
  std::vector<std::optional<NeighborGraph>> graphs_;
};

struct SolveResult {
  ad::Var codes;                // Z_K
  std::vector<TraceRow> trace;  // one row per iteration
  double final_residual = 0.0;  // ||H(Z_K)||_2
  std::size_t refreshes = 0;
};

/// Runs K iterations from initial_codes(). Throws DivergenceError when Z leaves
/// the finite range. Recorded on the params' graph when they are tracked.
SolveResult solve(Game& game, const SolverConfig& config);
/// Same, from a given starting point.
SolveResult solve_from(Game& game, const SolverConfig& config, const ad::Var& start);

/// The same update rules on a plain operator H with a fixed step:
/// returns z_0, ..., z_K.
std::vector<Tensor> iterate(Method method, const std::function<Tensor(const Tensor&)>& h, const Tensor& start,
                            double eta, std::size_t iterations);

/// Per-node Barzilai-Borwein steps ||D^T D s_j|| / ||D s_j||^2, s_j = z_j - z_j_prev;
/// nodes with s_j = 0 keep previous_steps[j]. Shapes: [m,p], [m,p], [q,p], [m].
Tensor bb_step(const Tensor& codes, const Tensor& previous_codes, const Tensor& dictionary,
               const Tensor& previous_steps);

struct PotentialReport {
  bool is_potential = false;
  double max_gradient_gap = 0.0;  // max over trials of ||grad V - H||_inf (finite differences)
};

/// Checks the game against its potential V on random Z.
PotentialReport verify_potential(const Game& game, std::size_t trials = 3, std::uint64_t seed = 0,
                                 double fd_step = 1e-5, double scale = 1.0);

/// Whether the game is a potential game: symmetric couplings, a tied data
/// term, and only penalties whose own partials integrate to V.
bool is_potential_game(const Game& game);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace gameprior
