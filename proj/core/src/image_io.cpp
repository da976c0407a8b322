#include "gameprior/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace gameprior {
namespace {

std::string lower_extension(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

// Next header token of a PGM, skipping whitespace and comments.
std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw ImageError(path + ": truncated PGM header");
  return tok;
}

std::size_t pgm_number(std::istream& in, const std::string& path, const char* field) {
  const std::string tok = pgm_token(in, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ImageError(path + ": bad PGM " + field + " '" + tok + "'");
  }
  return std::stoul(tok);
}

Tensor load_pgm(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(name + ": cannot open");
  if (pgm_token(in, name) != "P5") throw ImageError(name + ": not a binary PGM (P5)");
  const std::size_t w = pgm_number(in, name, "width");
  const std::size_t h = pgm_number(in, name, "height");
  const std::size_t maxval = pgm_number(in, name, "maxval");
  if (w == 0 || h == 0) throw ImageError(name + ": empty image");
  if (maxval == 0 || maxval > 255) throw ImageError(name + ": unsupported maxval " + std::to_string(maxval));
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw ImageError(name + ": truncated pixel data (" + std::to_string(in.gcount()) + " of " +
                     std::to_string(bytes.size()) + " bytes)");
  }
  Tensor img({h, w});
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] > maxval) throw ImageError(name + ": sample exceeds maxval");
    img[i] = maxval == 255 ? bytes[i] : bytes[i] * scale;
  }
  return img;
}

void save_pgm(const std::vector<unsigned char>& bytes, std::size_t h, std::size_t w,
              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError(path.string() + ": cannot open for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError(path.string() + ": write failed");
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Tensor load_png(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(name.c_str(), "rb"));
  if (!f) throw ImageError(name + ": cannot open");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_stdio(&image, f.get())) {
    throw ImageError(name + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError(name + ": " + msg);
  }
  Tensor img({image.height, image.width});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i];
  return img;
}

void save_png(const std::vector<unsigned char>& bytes, std::size_t h, std::size_t w,
              const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw ImageError(path.string() + ": " + image.message);
  }
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return load_pgm(path);
  if (ext == ".png") return load_png(path);
  throw ImageError(path.string() + ": unsupported format '" + ext + "' (expected .pgm or .png)");
}

Tensor quantize(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.values()) v = std::clamp(std::round(v), 0.0, 255.0);
  return out;
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 2 || image.empty()) {
    throw ImageError(path.string() + ": image must be a non-empty [h,w] tensor, got " + shape_string(image.shape()));
  }
  if (!image.all_finite()) throw ImageError(path.string() + ": image has non-finite values");
  const Tensor q = quantize(image);
  std::vector<unsigned char> bytes(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) bytes[i] = static_cast<unsigned char>(q[i]);
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") {
    save_pgm(bytes, image.dim(0), image.dim(1), path);
  } else if (ext == ".png") {
    save_png(bytes, image.dim(0), image.dim(1), path);
  } else {
    throw ImageError(path.string() + ": unsupported format '" + ext + "' (expected .pgm or .png)");
  }
}

Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be non-negative");
  Tensor out = image;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : out.values()) v += n(rng);
  return out;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("psnr: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                                " differ");
  }
  if (a.empty()) throw std::invalid_argument("psnr: empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  if (s == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 * static_cast<double>(a.size()) / s);
}

}  // namespace gameprior
