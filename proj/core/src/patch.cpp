#include "gameprior/patch.hpp"

#include <stdexcept>
#include <string>

namespace gameprior {

std::size_t PatchLayout::grid_h() const {
  if (boundary == Boundary::reflect) return image_h;
  if (patch_side > image_h || stride == 0) return 0;
  return (image_h - patch_side) / stride + 1;
}

std::size_t PatchLayout::grid_w() const {
  if (boundary == Boundary::reflect) return image_w;
  if (patch_side > image_w || stride == 0) return 0;
  return (image_w - patch_side) / stride + 1;
}

void PatchLayout::validate() const {
  if (image_h == 0 || image_w == 0) throw std::invalid_argument("PatchLayout: empty image");
  if (patch_side == 0) throw std::invalid_argument("PatchLayout: patch side must be positive");
  if (stride == 0) throw std::invalid_argument("PatchLayout: stride must be positive");
  if (boundary == Boundary::valid && patch_side > std::min(image_h, image_w)) {
    throw std::invalid_argument("PatchLayout: patch side " + std::to_string(patch_side) + " exceeds image " +
                                std::to_string(image_h) + "x" + std::to_string(image_w) + " in valid mode");
  }
  if (boundary == Boundary::reflect) {
    if (patch_side % 2 == 0) throw std::invalid_argument("PatchLayout: reflect mode needs an odd patch side");
    if (stride != 1) throw std::invalid_argument("PatchLayout: reflect mode supports stride 1 only");
  }
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<long>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

PatchOperator::PatchOperator(const PatchLayout& layout) : layout_(layout) {
  layout_.validate();
  m_ = layout_.patch_count();
  q_ = layout_.patch_size();
  const std::size_t w = layout_.image_w, s = layout_.patch_side;
  std::vector<std::size_t> idx(m_ * q_);
  counts_ = Tensor({layout_.image_h, w}, 0.0);
  const long half = static_cast<long>(s / 2);
  for (std::size_t gr = 0; gr < layout_.grid_h(); ++gr) {
    for (std::size_t gc = 0; gc < layout_.grid_w(); ++gc) {
      const std::size_t j = gr * layout_.grid_w() + gc;
      for (std::size_t dr = 0; dr < s; ++dr) {
        for (std::size_t dc = 0; dc < s; ++dc) {
          std::size_t r, c;
          if (layout_.boundary == Boundary::valid) {
            r = gr * layout_.stride + dr;
            c = gc * layout_.stride + dc;
          } else {
            r = reflect_index(static_cast<long>(gr + dr) - half, layout_.image_h);
            c = reflect_index(static_cast<long>(gc + dc) - half, w);
          }
          idx[j * q_ + dr * s + dc] = r * w + c;
          counts_[r * w + c] += 1.0;
        }
      }
    }
  }
  Tensor inv(counts_.shape());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = counts_[i] > 0.0 ? 1.0 / counts_[i] : 0.0;
  inv_counts_ = ad::Var(std::move(inv));
  index_ = ad::make_index(std::move(idx));
}

void PatchOperator::check_image(const ad::Var& image, const char* op) const {
  if (image.shape() != Shape{layout_.image_h, layout_.image_w}) {
    throw std::invalid_argument(std::string(op) + ": image shape " + shape_string(image.shape()) +
                                " does not match layout " + std::to_string(layout_.image_h) + "x" +
                                std::to_string(layout_.image_w));
  }
}

ad::Var PatchOperator::extract(const ad::Var& image) const {
  check_image(image, "extract");
  auto flat = ad::reshape(image, {layout_.image_h * layout_.image_w, 1});
  return ad::reshape(ad::gather(flat, index_), {m_, q_});
}

ad::Var PatchOperator::place_transpose(const ad::Var& patches) const {
  if (patches.shape() != Shape{m_, q_}) {
    throw std::invalid_argument("place_transpose: patches shape " + shape_string(patches.shape()) + " expected " +
                                shape_string({m_, q_}));
  }
  auto flat = ad::scatter_add(ad::reshape(patches, {m_ * q_, 1}), index_, layout_.image_h * layout_.image_w);
  return ad::reshape(flat, {layout_.image_h, layout_.image_w});
}

ad::Var PatchOperator::average_reconstruct(const ad::Var& codes, const ad::Var& dictionary) const {
  if (codes.shape().size() != 2 || codes.shape()[0] != m_) {
    throw std::invalid_argument("average_reconstruct: codes shape " + shape_string(codes.shape()) + " needs " +
                                std::to_string(m_) + " rows");
  }
  if (dictionary.shape().size() != 2 || dictionary.shape()[0] != q_ || dictionary.shape()[1] != codes.shape()[1]) {
    throw std::invalid_argument("average_reconstruct: dictionary shape " + shape_string(dictionary.shape()) +
                                " incompatible with codes " + shape_string(codes.shape()));
  }
  auto patches = ad::matmul(codes, ad::transpose(dictionary));
  return ad::mul(place_transpose(patches), inv_counts_);
}

ad::Var extract(const ad::Var& image, const PatchLayout& layout) { return PatchOperator(layout).extract(image); }

ad::Var place_transpose(const ad::Var& patches, const PatchLayout& layout) {
  return PatchOperator(layout).place_transpose(patches);
}

ad::Var average_reconstruct(const ad::Var& codes, const ad::Var& dictionary, const PatchLayout& layout) {
  return PatchOperator(layout).average_reconstruct(codes, dictionary);
}

}  // namespace gameprior
