#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "leaffine/tensor.hpp"

namespace leaffine {

/// Channel-first 3×H×W float image with values in [0, 1].
using Image = Tensor<float>;

/// Binary PPM (P6, maxval 255). Throws DecodeError carrying the byte offset.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);

/// PNG via libpng; any colour type is converted to 8-bit RGB.
Image decode_png(std::span<const std::uint8_t> bytes);

bool looks_like_png(std::span<const std::uint8_t> bytes);
bool looks_like_ppm(std::span<const std::uint8_t> bytes);

/// Dispatches on the leading magic bytes.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Reads and decodes a file; decode errors name the path.
Image load_image(const std::filesystem::path& path);
void save_ppm(const Image& image, const std::filesystem::path& path);

/// Bilinear sample of one H×W plane at continuous pixel-centre coordinates,
/// replicating the border outside the image.
double sample_bilinear(const float* plane, std::size_t height, std::size_t width, double y, double x);

/// Resamples to out_h×out_w, aligning pixel centres. Same-size input is copied exactly.
Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

}  // namespace leaffine
