#pragma once

// Binary checkpoint, little-endian throughout:
//   "GPCKPT\0\0", u32 version,
//   config text (u64 length + bytes),
//   u64 parameter count, then per parameter: name, u8 constraint, u8 trainable,
//     tensor (u64 rank, u64 dims..., f64 values...),
//   Adam: f64 beta1, beta2, epsilon, u64 step, one m and one v tensor per parameter,
//   u64 training step, f64 lr scale, RNG state text.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "gameprior/config.hpp"
#include "gameprior/trainer.hpp"

namespace gameprior {

inline constexpr std::uint32_t checkpoint_version = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  TrainState state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gameprior
