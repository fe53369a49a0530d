#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffine/config.hpp"
#include "leaffine/evaluate.hpp"
#include "leaffine/report.hpp"
#include "leaffine/train.hpp"

namespace leaffine {

using LogFn = std::function<void(const std::string&)>;

/// Target data and a model whose head matches it, ready for fine-tuning.
struct PreparedRun {
  TrainData target;
  Model model;
  std::vector<EpochRecord> source_records;
  /// Stored in every checkpoint: the config, normalization preset, image size and
  /// dataset root.
  nlohmann::json extra;
};

/// Generates (synthetic) or scans the target data and splits it with the run seed.
TrainData load_target_data(const RunConfig& config);

/// Target data, then pretraining on the source task (writing source.lfck and
/// source_epochs.csv) or loading the init checkpoint, then a fresh head.
PreparedRun prepare_run(const RunConfig& config, const LogFn& log = {});

/// Range test under the configured phase's freeze state; the model is not changed.
LrFinderResult run_lr_finder(const RunConfig& config, const PreparedRun& run);

struct TrainOutcome {
  FineTuneResult fine_tune;
  std::optional<LrFinderResult> lr_finder;
  ReportBundle report;
};

/// The full recipe: prepare, optional range test, phases A and B with checkpoints,
/// then the report bundle from the final model's validation scores.
TrainOutcome run_training(const RunConfig& config, const LogFn& log = {});

/// One line per epoch: phase, epoch, losses, accuracy and wall time.
std::string format_epoch(const EpochRecord& record);

}  // namespace leaffine
