#include "leaffine/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <system_error>

#include "leaffine/error.hpp"
#include "leaffine/io.hpp"

namespace leaffine {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string lr_plot_data(const LrFinderResult& r) {
  std::string out = "# lr loss smoothed_loss\n";
  char line[128];
  for (std::size_t i = 0; i < r.lrs.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g %.6f %.6f\n", r.lrs[i], r.losses[i], r.smoothed[i]);
    out += line;
  }
  return out;
}

std::string loss_plot_data(const std::vector<EpochRecord>& records) {
  std::string out = "# index train_loss valid_loss accuracy\n";
  char line[128];
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu %.6f %.6f %.6f\n", i, records[i].train_loss, records[i].valid_loss,
                  records[i].accuracy);
    out += line;
  }
  return out;
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string summary_text(const std::vector<EpochRecord>& records, const ConfusionMatrix& confusion,
                         const std::optional<LrFinderResult>& lr_finder, const ReportContext& context,
                         const std::string& timestamp) {
  if (records.empty()) throw StateError("report needs at least one epoch record");
  const EpochRecord& last = records.back();
  double total_seconds = 0.0;
  for (const auto& r : records) total_seconds += r.wall_seconds;

  std::string out = "leaffine run summary\n";
  out += "generated: " + timestamp + "\n";
  out += "final accuracy: " + format("%.6f", last.accuracy) + " (phase " + last.phase + ", epoch " +
         std::to_string(last.epoch) + ")\n";
  out += "final valid loss: " + format("%.6f", last.valid_loss) + "\n";
  out += "confusion: " + std::to_string(confusion.trace()) + "/" + std::to_string(confusion.total()) + " correct (" +
         format("%.6f", confusion.accuracy()) + ")\n";
  out += "epochs: " + std::to_string(records.size()) + ", training time " + format_duration(total_seconds) + "\n";
  if (lr_finder && lr_finder->suggestion) {
    out += "lr finder: min/10 " + format("%.3g", lr_finder->suggestion->min_div10) + ", steepest " +
           format("%.3g", lr_finder->suggestion->steepest) + "\n";
  } else if (lr_finder) {
    out += "lr finder: no suggestion\n";
  }
  if (!context.checkpoints.empty()) {
    out += "checkpoints:\n";
    for (const auto& p : context.checkpoints) out += "  " + p.generic_string() + "\n";
  }
  out += "config:\n" + context.config.dump(2) + "\n";
  return out;
}

ReportBundle emit_report(const std::vector<EpochRecord>& records, const ConfusionMatrix& confusion,
                         const std::vector<TopLossEntry>& losses, const std::optional<LrFinderResult>& lr_finder,
                         const std::filesystem::path& out_dir, const ReportContext& context) {
  if (records.empty()) throw StateError("report needs at least one epoch record");
  if (confusion.total() == 0) throw StateError("report needs a non-empty confusion matrix");
  const std::string summary = summary_text(records, confusion, lr_finder, context, utc_timestamp());

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create report directory '" + out_dir.string() + "'");
  }
  ReportBundle b;
  b.epochs_csv = out_dir / "epochs.csv";
  b.confusion_csv = out_dir / "confusion.csv";
  b.top_losses_csv = out_dir / "top_losses.csv";
  b.summary = out_dir / "summary.txt";
  b.final_accuracy = records.back().accuracy;
  write_file_atomic(b.epochs_csv, epochs_csv(records));
  write_file_atomic(b.confusion_csv, confusion.to_csv());
  write_file_atomic(b.top_losses_csv, top_losses_csv(losses));
  if (lr_finder) {
    b.lr_finder_csv = out_dir / "lr_finder.csv";
    write_file_atomic(b.lr_finder_csv, lr_finder_csv(*lr_finder));
  }
  if (context.gnuplot) {
    if (lr_finder) {
      b.plot_data.push_back(out_dir / "lr_finder.dat");
      write_file_atomic(b.plot_data.back(), lr_plot_data(*lr_finder));
    }
    b.plot_data.push_back(out_dir / "losses.dat");
    write_file_atomic(b.plot_data.back(), loss_plot_data(records));
  }
  write_file_atomic(b.summary, summary);
  return b;
}

}  // namespace leaffine
