#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "leaffine/augment.hpp"
#include "leaffine/lr_finder.hpp"
#include "leaffine/synthetic.hpp"
#include "leaffine/train.hpp"

namespace leaffine {

/// Where the target images come from: an existing folder-per-class tree, or a
/// synthetic set generated into `root` (default <out_dir>/data/target). Synthetic
/// sets are always drawn with the run seed.
struct DataSource {
  std::filesystem::path root;
  std::optional<SyntheticSpec> synthetic = SyntheticSpec{};
  double valid_fraction = 0.2;
};

/// Source-task training before the head is replaced. The source set is synthetic
/// and generated into `root` (default <out_dir>/data/source).
struct PretrainConfig {
  SyntheticSpec source{4, 200, 64, 0, 8};
  std::filesystem::path root;
  std::size_t epochs = 6;
  double lr = 1e-3;
  std::size_t batch_size = 64;
};

struct LrFinderRun {
  bool enabled = true;
  /// "A" or "B": which phase's freeze state the range test trains under.
  std::string phase = "A";
  LrFinderOptions options;
};

struct RunConfig {
  DataSource data;
  std::string model_preset = "mini-basic";
  /// Weights to start from instead of pretraining; its head is replaced.
  std::filesystem::path init_checkpoint;
  std::optional<PretrainConfig> pretrain = PretrainConfig{};
  std::uint64_t seed = 42;
  std::size_t image_size = 64;
  AugmentConfig augment;
  /// "imagenet" or "dataset".
  std::string normalization = "imagenet";
  Recipe recipe;
  LrFinderRun lr_finder;
  std::size_t top_losses = 9;
  /// Also write gnuplot data files for the LR-finder and loss curves.
  bool gnuplot = false;
  std::filesystem::path out_dir = "leaffine-run";

  /// Checks every value and every referenced input path. Touches nothing on disk.
  void validate() const;

  /// Paths with defaults filled in.
  std::filesystem::path target_root() const;
  std::filesystem::path source_root() const;
  /// Synthetic specs with the run seed applied.
  SyntheticSpec target_spec() const;
  SyntheticSpec source_spec() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormalizationPreset& preset);
NormalizationPreset normalization_preset_from_json(const nlohmann::json& j);

}  // namespace leaffine
