#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "leaffine/model.hpp"
#include "leaffine/optimizer.hpp"

namespace leaffine {

/// Checkpoint layout (all integers little-endian):
///
///   "LFCK" | u32 version (1) | u64 metadata length | metadata (UTF-8 JSON)
///   | u32 tensor count | per tensor: u16 name length, name, u8 dtype
///   (0 = f32, 1 = f64), u8 rank, rank x u32 dims, raw element data
///
/// The metadata holds the model config, class names, group map, freeze state,
/// optimizer hyperparameters and counters, and a free-form "extra" object.
/// Tensors: parameters, norm running statistics, then optimizer moments.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ResNet<T> model;
  std::optional<OptimizerState<T>> optimizer;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ResNet<T>& model, const OptimizerState<T>* optimizer,
                                               const nlohmann::json& extra = nlohmann::json::object());

/// Throws FormatError (with the failing byte offset) on any malformed input.
template <typename T>
Checkpoint<T> parse_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(const ResNet<T>& model, const OptimizerState<T>* optimizer, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace leaffine
