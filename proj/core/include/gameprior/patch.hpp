#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "gameprior/autodiff.hpp"
#include "gameprior/tensor.hpp"

namespace gameprior {

enum class Boundary {
  valid,    // patches fully inside the image, top-left corners on a stride grid
  reflect,  // one patch centred on every pixel, mirrored at the borders
};

struct PatchLayout {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t patch_side = 1;
  std::size_t stride = 1;
  Boundary boundary = Boundary::valid;

  std::size_t grid_h() const;
  std::size_t grid_w() const;
  std::size_t patch_count() const { return grid_h() * grid_w(); }
  std::size_t patch_size() const { return patch_side * patch_side; }

  /// Throws std::invalid_argument when the layout cannot tile the image.
  void validate() const;

  friend bool operator==(const PatchLayout&, const PatchLayout&) = default;
};

/// Mirror index into [0, n) without repeating the edge sample (-1 -> 1).
std::size_t reflect_index(long i, std::size_t n);

/// Precomputed pixel index map and overlap counts for one layout.
/// Patches are enumerated row-major over their anchor (top-left corner in
/// valid mode, centre pixel in reflect mode); within a patch, offsets are row-major.
class PatchOperator {
 public:
  explicit PatchOperator(const PatchLayout& layout);

  const PatchLayout& layout() const noexcept { return layout_; }
  std::size_t patch_count() const noexcept { return m_; }
  std::size_t patch_size() const noexcept { return q_; }

  /// Flat pixel index of offset `o` of patch `j` is pixel_index()[j*q + o].
  const std::shared_ptr<const std::vector<std::size_t>>& pixel_index() const noexcept { return index_; }
  /// Number of patch entries covering each pixel, shape [h,w].
  const Tensor& overlap_counts() const noexcept { return counts_; }

  ad::Var extract(const ad::Var& image) const;                 // [h,w] -> [m,q]
  ad::Var place_transpose(const ad::Var& patches) const;       // [m,q] -> [h,w]
  ad::Var average_reconstruct(const ad::Var& codes, const ad::Var& dictionary) const;  // [m,p],[q,p] -> [h,w]

 private:
  void check_image(const ad::Var& image, const char* op) const;

  PatchLayout layout_;
  std::size_t m_ = 0;
  std::size_t q_ = 0;
  std::shared_ptr<const std::vector<std::size_t>> index_;
  Tensor counts_;
  ad::Var inv_counts_;
};

ad::Var extract(const ad::Var& image, const PatchLayout& layout);
ad::Var place_transpose(const ad::Var& patches, const PatchLayout& layout);
ad::Var average_reconstruct(const ad::Var& codes, const ad::Var& dictionary, const PatchLayout& layout);

}  // namespace gameprior
