#include "leaffine/augment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace leaffine {

void AugmentConfig::validate() const {
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must lie in [0, 1]");
  if (!(max_rotate_deg >= 0.0)) throw ConfigError("max_rotate_deg must be non-negative");
  if (!(warp_magnitude >= 0.0 && warp_magnitude < 1.0)) throw ConfigError("warp_magnitude must lie in [0, 1)");
  if (!(zoom_min >= 1.0 && zoom_max >= zoom_min)) throw ConfigError("zoom range must satisfy 1 <= zoom_min <= zoom_max");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.hflip_prob = 0.0;
  c.max_rotate_deg = 0.0;
  c.warp_magnitude = 0.0;
  c.zoom_min = c.zoom_max = 1.0;
  return c;
}

std::mt19937_64 item_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t item) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(item), static_cast<std::uint32_t>(item >> 32)};
  return std::mt19937_64(seq);
}

AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::mt19937_64& rng) {
  // Every draw happens regardless of the config so streams stay aligned across configs.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams p;
  p.flip = unit(rng) < cfg.hflip_prob;
  p.angle_deg = (2.0 * unit(rng) - 1.0) * cfg.max_rotate_deg;
  const double reach = cfg.warp_magnitude * static_cast<double>(std::min(height, width)) / 2.0;
  for (auto& s : p.corner_shift) s = (2.0 * unit(rng) - 1.0) * reach;
  p.zoom = cfg.zoom_min + unit(rng) * (cfg.zoom_max - cfg.zoom_min);
  const double crop_w = static_cast<double>(width) / p.zoom;
  const double crop_h = static_cast<double>(height) / p.zoom;
  p.crop_x = unit(rng) * (static_cast<double>(width) - crop_w);
  p.crop_y = unit(rng) * (static_cast<double>(height) - crop_h);
  if (!cfg.enabled) return AugmentParams{};
  return p;
}

std::array<double, 9> corner_homography(std::size_t height, std::size_t width, const std::array<double, 8>& shift) {
  const double w = static_cast<double>(width - 1), h = static_cast<double>(height - 1);
  const double src[4][2] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1];
    const double u = x + shift[2 * i], v = y + shift[2 * i + 1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hvec = a.partialPivLu().solve(b);
  return {hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), 1.0};
}

Image apply_augment(const Image& image, const AugmentParams& p) {
  if (image.rank() != 3) throw DimensionError("augment expects a CxHxW image, got " + to_string(image.shape()));
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool warp = std::any_of(p.corner_shift.begin(), p.corner_shift.end(), [](double s) { return s != 0.0; });
  const bool rotate = p.angle_deg != 0.0;
  const bool zoom = p.zoom != 1.0 || p.crop_x != 0.0 || p.crop_y != 0.0;
  const auto hm = warp ? corner_homography(h, w, p.corner_shift) : std::array<double, 9>{};
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cx = static_cast<double>(w - 1) / 2.0, cy = static_cast<double>(h - 1) / 2.0;

  Image out(image.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double x = static_cast<double>(j), y = static_cast<double>(i);
      if (zoom) {
        x = p.crop_x + (x + 0.5) / p.zoom - 0.5;
        y = p.crop_y + (y + 0.5) / p.zoom - 0.5;
      }
      if (warp) {
        const double den = hm[6] * x + hm[7] * y + hm[8];
        const double nx = (hm[0] * x + hm[1] * y + hm[2]) / den;
        const double ny = (hm[3] * x + hm[4] * y + hm[5]) / den;
        x = nx;
        y = ny;
      }
      if (rotate) {
        const double dx = x - cx, dy = y - cy;
        x = cx + cos_t * dx + sin_t * dy;
        y = cy - sin_t * dx + cos_t * dy;
      }
      if (p.flip) x = static_cast<double>(w - 1) - x;
      for (std::size_t c = 0; c < ch; ++c) {
        const double v = sample_bilinear(image.data().data() + c * h * w, h, w, y, x);
        out[(c * h + i) * w + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image augment(const Image& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (image.rank() != 3) throw DimensionError("augment expects a CxHxW image, got " + to_string(image.shape()));
  return apply_augment(image, sample_augment(cfg, image.dim(1), image.dim(2), rng));
}

void NormalizationPreset::validate() const {
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("normalization preset '" + name + "' has a non-positive std");
  }
}

NormalizationPreset NormalizationPreset::imagenet() { return NormalizationPreset{}; }

Image normalize(const Image& image, const NormalizationPreset& preset) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("normalize expects a 3xHxW image, got " + to_string(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  Image out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (image[c * plane + i] - preset.mean[c]) / preset.std[c];
  }
  return out;
}

Image denormalize(const Image& image, const NormalizationPreset& preset) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("denormalize expects a 3xHxW image, got " + to_string(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  Image out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = image[c * plane + i] * preset.std[c] + preset.mean[c];
  }
  return out;
}

}  // namespace leaffine
