#pragma once

// Run configuration as flat `key = value` text under section headers:
//
//   [model]   data, patch_side, atoms, untied
//   [solver]  iterations, method, step_rule, eta0, refresh_fraction, ...
//   [train]   epochs, batch_size, lr0, ...
//   [prior]   kind, radius, symmetric, ...   (one section per prior)
//
// Unknown sections or keys are errors.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gameprior/model.hpp"
#include "gameprior/priors.hpp"
#include "gameprior/solver.hpp"
#include "gameprior/trainer.hpp"

namespace gameprior {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  std::vector<PriorSpec> priors;
  SolverConfig solver;
  TrainConfig train;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const RunConfig& config);

/// Names accepted by preset(): tv, nltv, sc, nlgroup, pixel-laplacian.
const std::vector<std::string>& preset_names();
RunConfig preset(std::string_view name);

}  // namespace gameprior
