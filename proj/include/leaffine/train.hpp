#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffine/loader.hpp"
#include "leaffine/lr_finder.hpp"
#include "leaffine/model.hpp"
#include "leaffine/optimizer.hpp"

namespace leaffine {

/// One rate for every group, or a discriminative slice across groups.
struct LrSpec {
  bool sliced = false;
  double lr_min = 3e-3;
  double lr_max = 3e-3;

  static LrSpec fixed(double lr) { return {false, lr, lr}; }
  static LrSpec slice(double lr_min, double lr_max) { return {true, lr_min, lr_max}; }

  /// All rates zero: the phase makes no updates at all.
  bool zero() const noexcept { return lr_min == 0.0 && lr_max == 0.0; }
  void validate() const;
  LrSchedule schedule(std::size_t groups, LrDirection direction = LrDirection::early_low) const;

  friend bool operator==(const LrSpec&, const LrSpec&) = default;
};

struct PhaseConfig {
  std::string name = "A";
  std::size_t epochs = 4;
  LrSpec lr = LrSpec::fixed(3e-3);
  std::set<std::size_t> frozen_groups{0, 1};
  std::size_t batch_size = 64;
  bool train_bn = false;
  LrDirection direction = LrDirection::early_low;

  void validate() const;

  /// 4 epochs at 3e-3 with groups 0 and 1 frozen.
  static PhaseConfig head_only();
  /// 3 epochs, slice(1e-5, 1e-4), nothing frozen.
  static PhaseConfig unfrozen();

  friend bool operator==(const PhaseConfig&, const PhaseConfig&) = default;
};

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  /// Plain mean of the epoch's batch losses.
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Without time the "wall_seconds" key is omitted; reading treats it as 0.
nlohmann::json to_json(const EpochRecord& r, bool with_time = true);
EpochRecord epoch_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<EpochRecord>& records, bool with_time = true);
std::vector<EpochRecord> epoch_records_from_json(const nlohmann::json& j);

/// Seconds rendered as H:MM:SS.
std::string format_duration(double seconds);

/// "epoch,train_loss,valid_loss,accuracy,time"; without time the column is dropped.
std::string epochs_csv(const std::vector<EpochRecord>& records, bool with_time = true);

struct TrainData {
  DatasetManifest manifest;
  /// Resize, augmentation and normalization settings; the phase sets the batch size.
  LoaderOptions loader;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains for phase.epochs epochs, validating after each. Epochs (loader and record) are
/// numbered from `first_epoch` so consecutive phases see fresh shuffles. A phase whose rates
/// are all zero performs no updates (not even running-statistics updates) and
/// reports the inference-mode training loss. Throws DivergenceError on a
/// non-finite loss or one above 1e4.
std::vector<EpochRecord> train_phase(Model& model, OptimizerState<float>& state, const TrainData& data,
                                     const PhaseConfig& phase, std::uint64_t seed, std::size_t first_epoch = 0,
                                     const EpochCallback& on_epoch = {});

struct Recipe {
  PhaseConfig phase_a = PhaseConfig::head_only();
  PhaseConfig phase_b = PhaseConfig::unfrozen();
  OptimizerConfig optimizer;
  std::size_t layer_groups = 3;
  /// Re-estimate norm running statistics on the target training images before
  /// phase A (see recalibrate_norms).
  bool recalibrate_norms = true;

  void validate() const;

  friend bool operator==(const Recipe&, const Recipe&) = default;
};

/// Replaces every norm layer's running statistics with the average of its batch
/// statistics over one pass of the un-augmented training split. No parameter is
/// touched and the freeze state is restored afterwards.
void recalibrate_norms(Model& model, const TrainData& data, std::size_t batch_size, std::uint64_t seed);

struct FineTuneResult {
  std::vector<EpochRecord> records;
  OptimizerState<float> optimizer;
  std::filesystem::path checkpoint_a;
  std::filesystem::path checkpoint_b;
};

/// Optional norm recalibration, then phase A and phase B on one optimizer state.
/// With a checkpoint directory, writes phaseA.lfck and phaseB.lfck after the
/// respective phase; their metadata "extra" holds `extra` plus "phase" and the
/// records so far, without wall times so that reruns produce identical files.
FineTuneResult fine_tune(Model& model, const TrainData& data, const Recipe& recipe, std::uint64_t seed,
                         const std::filesystem::path& checkpoint_dir = {},
                         const nlohmann::json& extra = nlohmann::json::object(), const EpochCallback& on_epoch = {});

/// LR range test on a copy of `model` (the argument is not modified), training the
/// groups left unfrozen by `phase` with a fresh optimizer and one rate for all groups.
LrFinderResult find_lr(const Model& model, const TrainData& data, const PhaseConfig& phase,
                       const LrFinderOptions& options, const OptimizerConfig& optimizer, std::uint64_t seed);

}  // namespace leaffine
