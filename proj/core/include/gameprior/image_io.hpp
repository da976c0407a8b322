#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "gameprior/tensor.hpp"

namespace gameprior {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit grayscale PGM (P5) or PNG, values in [0,255] as [h,w].
/// PGM with maxval != 255 is rescaled linearly.
Tensor load_image(const std::filesystem::path& path);

/// Rounds half away from zero, clamps to [0,255], writes by extension
/// (.pgm or .png).
void save_image(const Tensor& image, const std::filesystem::path& path);

/// The 8-bit quantisation applied by save_image.
Tensor quantize(const Tensor& image);

/// Adds seeded i.i.d. N(0, sigma^2) noise, no clamping.
Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed);

/// 10 log10(255^2 / MSE); +infinity when the images are equal.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace gameprior
