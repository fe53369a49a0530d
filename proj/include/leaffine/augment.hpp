#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "leaffine/image.hpp"

namespace leaffine {

struct AugmentConfig {
  double hflip_prob = 0.5;
  double max_rotate_deg = 10.0;
  /// Corner displacement bound as a fraction of min(H, W) / 2.
  double warp_magnitude = 0.2;
  double zoom_min = 1.0;
  double zoom_max = 1.1;
  bool enabled = true;

  void validate() const;
  static AugmentConfig identity();

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// One draw of the random transform. Corner shifts are (dx, dy) pairs in pixels
/// for the top-left, top-right, bottom-right and bottom-left corners.
struct AugmentParams {
  bool flip = false;
  double angle_deg = 0.0;
  std::array<double, 8> corner_shift{};
  double zoom = 1.0;
  double crop_x = 0.0;
  double crop_y = 0.0;
};

/// RNG stream for one item: independent of batch composition and visiting order.
std::mt19937_64 item_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t item);

AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::mt19937_64& rng);

/// Horizontal flip, rotation about the centre, perspective warp, then zoom-crop,
/// composed into one inverse map and sampled bilinearly with border replication.
Image apply_augment(const Image& image, const AugmentParams& params);

Image augment(const Image& image, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Homography (row-major 3x3, h33 = 1) taking the four image corners to the corners
/// displaced by `shift`. Maps output coordinates of the warp to its input.
std::array<double, 9> corner_homography(std::size_t height, std::size_t width, const std::array<double, 8>& shift);

struct NormalizationPreset {
  std::string name = "imagenet";
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};

  void validate() const;
  static NormalizationPreset imagenet();
};

/// out[c] = (in[c] - mean[c]) / std[c].
Image normalize(const Image& image, const NormalizationPreset& preset);
Image denormalize(const Image& image, const NormalizationPreset& preset);

}  // namespace leaffine
