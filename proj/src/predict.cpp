#include "leaffine/predict.hpp"

#include <algorithm>
#include <numeric>

#include "leaffine/checkpoint.hpp"
#include "leaffine/config.hpp"
#include "leaffine/error.hpp"
#include "leaffine/evaluate.hpp"
#include "leaffine/image.hpp"

namespace leaffine {

std::vector<ClassScore> predict_image(const Model& model, const Image& image, const NormalizationPreset& preset,
                                      std::size_t image_size) {
  const Image x = normalize(resize_bilinear(image, image_size, image_size), preset);
  Tensor<float> batch(Shape{1, x.dim(0), x.dim(1), x.dim(2)}, x.storage());
  Graph<float> g;
  const auto probs = softmax(g.value(model.infer(g, g.constant(std::move(batch)))).data());

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  const auto& names = model.class_names();
  std::vector<ClassScore> out;
  out.reserve(order.size());
  for (std::size_t k : order) {
    out.push_back({k < names.size() ? names[k] : std::to_string(k), k, probs[k]});
  }
  return out;
}

std::vector<ClassScore> predict_bytes(const Model& model, std::span<const std::uint8_t> bytes,
                                      const NormalizationPreset& preset, std::size_t image_size) {
  return predict_image(model, decode_image(bytes), preset, image_size);
}

std::vector<ClassScore> predict(const Model& model, const std::filesystem::path& image_path,
                                const NormalizationPreset& preset, std::size_t image_size) {
  return predict_image(model, load_image(image_path), preset, image_size);
}

std::vector<ClassScore> Predictor::predict_bytes(std::span<const std::uint8_t> bytes) const {
  return leaffine::predict_bytes(model, bytes, preset, image_size);
}

std::vector<ClassScore> Predictor::predict(const std::filesystem::path& image_path) const {
  return leaffine::predict(model, image_path, preset, image_size);
}

Predictor load_predictor(const std::filesystem::path& checkpoint) {
  auto ck = load_checkpoint<float>(checkpoint);
  Predictor p{std::move(ck.model), NormalizationPreset::imagenet(), 0};
  p.image_size = p.model.config().image_size;
  if (ck.extra.contains("normalization")) p.preset = normalization_preset_from_json(ck.extra["normalization"]);
  if (ck.extra.contains("image_size")) {
    const auto& v = ck.extra["image_size"];
    if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) throw ConfigError("checkpoint image_size is invalid");
    p.image_size = v.get<std::size_t>();
  }
  return p;
}

nlohmann::json prediction_json(const std::vector<ClassScore>& scores, std::size_t top_k) {
  if (scores.empty()) throw StateError("no class scores to report");
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(top_k, scores.size()); ++i) {
    top.push_back({{"class", scores[i].name}, {"probability", scores[i].probability}});
  }
  return {{"class", scores[0].name}, {"probability", scores[0].probability}, {"top_k", top}};
}

}  // namespace leaffine
