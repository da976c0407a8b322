#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gameprior/autodiff.hpp"
#include "gameprior/patch.hpp"
#include "gameprior/priors.hpp"
#include "gameprior/tensor.hpp"

namespace gameprior {

enum class DataKind {
  pixel,       // (x_j - z_j)^2, one scalar code per pixel
  patch_dict,  // 1/2 ||P_j x - D z_j||^2
};

std::string_view to_string(DataKind kind);
DataKind parse_data_kind(std::string_view name);

struct ModelConfig {
  DataKind data = DataKind::patch_dict;
  std::size_t patch_side = 9;
  std::size_t atoms = 256;
  bool untied = false;  // use C^T (D z - x) in place of D^T (D z - x)

  std::size_t code_size() const { return data == DataKind::pixel ? 1 : atoms; }
  std::size_t extraction_side() const { return data == DataKind::pixel ? 1 : patch_side; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Constraint : std::uint8_t {
  none,
  positive,  // stored as a free value f, used as f^2
};

struct Parameter {
  std::string name;
  Constraint constraint = Constraint::none;
  Tensor free;
  bool trainable = true;

  Tensor value() const;
  friend bool operator==(const Parameter&, const Parameter&) = default;
};

namespace param {
inline constexpr std::string_view dictionary = "D";
inline constexpr std::string_view preconditioner = "C";
inline constexpr std::string_view reconstruction = "W";
inline constexpr std::string_view lambda = "lambda";
inline constexpr std::string_view kappa = "kappa";
inline constexpr std::string_view sigma_d = "sigma_d";
inline constexpr std::string_view sigma_r = "sigma_r";
inline constexpr std::string_view eta = "eta";      // [K]
inline constexpr std::string_view alpha = "alpha";  // [K, number of priors]
std::string grid_weights(std::size_t prior_index);
}  // namespace param

/// All trainable quantities, addressed by name.
class ModelParams {
 public:
  /// `value` is the constrained value; positive parameters store sqrt(value).
  void add(std::string name, const Tensor& value, Constraint constraint = Constraint::none);
  bool has(std::string_view name) const;
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Tensor value(std::string_view name) const { return get(name).value(); }
  void set_value(std::string_view name, const Tensor& value);

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<Parameter> params_;
};

/// Parameters as Vars for one forward pass: leaves on `graph` when given,
/// constants otherwise.
class BoundParams {
 public:
  BoundParams(const ModelParams& params, ad::Graph* graph);

  bool has(std::string_view name) const;
  const ad::Var& value(std::string_view name) const;  // constrained
  const ad::Var& free(std::string_view name) const;   // the leaf itself
  /// Row `t` of a rank-2 parameter (or entry t of a vector) as a [1]-shaped or row Var.
  ad::Var entry(std::string_view name, std::size_t t) const;
  ad::Var entry(std::string_view name, std::size_t row, std::size_t col) const;

 private:
  struct Bound {
    ad::Var free;
    ad::Var value;
  };
  const Bound& find(std::string_view name) const;
  std::map<std::string, Bound, std::less<>> bound_;
};

double spectral_norm(const Tensor& matrix, std::size_t max_iters = 1000, double tol = 1e-12);
/// D / sigma_max(D). Throws on a zero matrix.
Tensor spectral_normalize(const Tensor& dictionary, std::size_t max_iters = 1000, double tol = 1e-12);

/// Gradient of the data term in z for every node, [m,p]. `patches_x` is
/// [m,q] (patch model) or [m,1] (pixel model).
ad::Var data_term_grad(const ModelConfig& model, const BoundParams& params, const ad::Var& patches_x,
                       const ad::Var& codes);

/// Image estimate from codes: codes reshaped for pixel models, overlap
/// averaging with W for patch models.
ad::Var reconstruct(const ModelConfig& model, const BoundParams& params, const PatchOperator& patches,
                    const ad::Var& codes);

struct InitOptions {
  std::size_t iterations = 24;  // K
  double eta0 = 1.0;
  std::uint64_t seed = 0;
};

/// Parameters for `priors`: D from mean-subtracted random training patches
/// plus one constant atom, spectrally normalised; C = W = D; lambda = 0.1;
/// kappa = 1; grid weights = 0.1; eta = eta0; alpha = 1.
ModelParams init_params(const std::vector<Tensor>& train_images, const ModelConfig& model,
                        const std::vector<PriorSpec>& priors, const InitOptions& options);

/// Length of kappa for this model (similarity patch size).
std::size_t similarity_patch_size(const ModelConfig& model, const std::vector<PriorSpec>& priors);

}  // namespace gameprior
