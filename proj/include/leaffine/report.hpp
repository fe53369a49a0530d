#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffine/evaluate.hpp"
#include "leaffine/lr_finder.hpp"
#include "leaffine/train.hpp"

namespace leaffine {

/// Context echoed into the run summary.
struct ReportContext {
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::filesystem::path> checkpoints;
  /// Also write lr_finder.dat and losses.dat for gnuplot.
  bool gnuplot = false;
};

struct ReportBundle {
  std::filesystem::path epochs_csv;
  std::filesystem::path confusion_csv;
  std::filesystem::path top_losses_csv;
  /// Empty when no range test was run.
  std::filesystem::path lr_finder_csv;
  std::filesystem::path summary;
  std::vector<std::filesystem::path> plot_data;
  /// Accuracy of the last epoch record.
  double final_accuracy = 0.0;
};

/// Writes epochs.csv, confusion.csv, top_losses.csv, lr_finder.csv (when given)
/// and summary.txt into `out_dir`, each through a temporary file and a rename.
/// Only summary.txt carries a timestamp. Throws StateError on empty records or an
/// empty matrix and IoError when the directory cannot be written.
ReportBundle emit_report(const std::vector<EpochRecord>& records, const ConfusionMatrix& confusion,
                         const std::vector<TopLossEntry>& losses, const std::optional<LrFinderResult>& lr_finder,
                         const std::filesystem::path& out_dir, const ReportContext& context = {});

/// Summary text; `timestamp` goes on its own line.
std::string summary_text(const std::vector<EpochRecord>& records, const ConfusionMatrix& confusion,
                         const std::optional<LrFinderResult>& lr_finder, const ReportContext& context,
                         const std::string& timestamp);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace leaffine
