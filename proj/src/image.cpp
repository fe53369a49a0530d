#include "leaffine/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "leaffine/io.hpp"

namespace leaffine {
namespace {

constexpr std::size_t kMaxPixels = std::size_t{1} << 28;

class PpmHeader {
 public:
  explicit PpmHeader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_separators() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_separators();
    const std::size_t start = pos_;
    last_start_ = start;
    if (pos_ >= b_.size()) throw DecodeError(std::string("PPM header ends before ") + what, pos_);
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > kMaxPixels) throw DecodeError(std::string("PPM ") + what + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) throw DecodeError(std::string("PPM ") + what + " is not a decimal number", start);
    return v;
  }

  /// Offset of the first digit of the most recent number.
  std::size_t last_start() const noexcept { return last_start_; }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) {
      throw DecodeError("PPM header must end with one whitespace byte", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
  std::size_t last_start_ = 2;
};

}  // namespace

bool looks_like_ppm(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6';
}

bool looks_like_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (!looks_like_ppm(bytes)) throw DecodeError("not a binary PPM (expected magic 'P6')", 0);
  PpmHeader h(bytes);
  const std::size_t width = h.number("width");
  const std::size_t width_at = h.last_start();
  const std::size_t height = h.number("height");
  if (width == 0 || height == 0) throw DecodeError("PPM has zero width or height", width_at);
  if (width * height > kMaxPixels) throw DecodeError("PPM dimensions are too large", width_at);
  const std::size_t maxval = h.number("maxval");
  const std::size_t maxval_at = h.last_start();
  if (maxval != 255) throw DecodeError("PPM maxval must be 255, got " + std::to_string(maxval), maxval_at);
  h.single_whitespace();
  const std::size_t payload_at = h.pos();
  const std::size_t plane = width * height;
  if (bytes.size() - payload_at < plane * 3) {
    throw DecodeError("PPM payload holds " + std::to_string(bytes.size() - payload_at) + " bytes, header declares " +
                          std::to_string(plane * 3),
                      bytes.size());
  }
  Image img(Shape{3, height, width});
  const std::uint8_t* px = bytes.data() + payload_at;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = static_cast<float>(px[i * 3 + c]) / 255.0f;
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("encode_ppm expects a 3xHxW image, got " + to_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.resize(header.size() + plane * 3);
  std::uint8_t* px = out.data() + header.size();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
      px[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("PNG: ") + png.message, 0);
  }
  png.format = PNG_FORMAT_RGB;
  if (static_cast<std::size_t>(png.width) * png.height > kMaxPixels || png.width == 0 || png.height == 0) {
    png_image_free(&png);
    throw DecodeError("PNG dimensions are out of range", 16);
  }
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DecodeError("PNG: " + msg, 0);
  }
  const std::size_t h = png.height, w = png.width, plane = h * w;
  Image img(Shape{3, h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = static_cast<float>(buf[i * 3 + c]) / 255.0f;
  }
  return img;
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (looks_like_png(bytes)) return decode_png(bytes);
  if (looks_like_ppm(bytes)) return decode_ppm(bytes);
  throw DecodeError("unrecognised image format (expected binary PPM or PNG)", 0);
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.message(), e.offset());
  }
}

void save_ppm(const Image& image, const std::filesystem::path& path) { write_file_atomic(path, encode_ppm(image)); }

double sample_bilinear(const float* plane, std::size_t height, std::size_t width, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, height - 1);
  const std::size_t x1 = std::min(x0 + 1, width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = (1.0 - fx) * plane[y0 * width + x0] + fx * plane[y0 * width + x1];
  const double bottom = (1.0 - fx) * plane[y1 * width + x0] + fx * plane[y1 * width + x1];
  return (1.0 - fy) * top + fy * bottom;
}

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw DimensionError("resize expects a CxHxW image, got " + to_string(image.shape()));
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Image out(Shape{ch, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t c = 0; c < ch; ++c) {
    const float* src = image.data().data() + c * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double y = (static_cast<double>(i) + 0.5) * sy - 0.5;
      for (std::size_t j = 0; j < out_w; ++j) {
        const double x = (static_cast<double>(j) + 0.5) * sx - 0.5;
        out[(c * out_h + i) * out_w + j] = static_cast<float>(sample_bilinear(src, h, w, y, x));
      }
    }
  }
  return out;
}

}  // namespace leaffine
