#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffine/augment.hpp"
#include "leaffine/model.hpp"

namespace leaffine {

struct ClassScore {
  std::string name;
  std::size_t index = 0;
  double probability = 0.0;
};

/// Resize, normalize, inference-mode forward and softmax. Every class is ranked by
/// probability, descending; ties go to the lower class index.
std::vector<ClassScore> predict_image(const Model& model, const Image& image, const NormalizationPreset& preset,
                                      std::size_t image_size);

std::vector<ClassScore> predict_bytes(const Model& model, std::span<const std::uint8_t> bytes,
                                      const NormalizationPreset& preset, std::size_t image_size);

std::vector<ClassScore> predict(const Model& model, const std::filesystem::path& image_path,
                                const NormalizationPreset& preset, std::size_t image_size);

/// A trained model with the input settings it was trained under.
struct Predictor {
  Model model;
  NormalizationPreset preset;
  std::size_t image_size = 64;

  std::vector<ClassScore> predict_bytes(std::span<const std::uint8_t> bytes) const;
  std::vector<ClassScore> predict(const std::filesystem::path& image_path) const;
};

/// Loads a checkpoint; the preset and image size come from its "extra" metadata
/// ("normalization", "image_size"), defaulting to ImageNet statistics and the
/// model's configured size.
Predictor load_predictor(const std::filesystem::path& checkpoint);

/// {"class", "probability", "top_k": [{"class", "probability"}, ...]} with at most
/// `top_k` entries.
nlohmann::json prediction_json(const std::vector<ClassScore>& scores, std::size_t top_k);

}  // namespace leaffine
