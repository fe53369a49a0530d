#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace leaffine {

struct LrFinderOptions {
  double lr_start = 1e-7;
  double lr_end = 10.0;
  std::size_t max_iters = 100;
  /// Exponential smoothing factor; 0 disables smoothing.
  double smoothing = 0.98;
  /// Stop once the smoothed loss exceeds this multiple of the best smoothed loss.
  double stop_factor = 4.0;

  void validate() const;
};

enum class LrHeuristic { min_div10, steepest };

struct LrSuggestion {
  double min_div10 = 0.0;
  double steepest = 0.0;
  LrHeuristic chosen = LrHeuristic::min_div10;

  double value() const { return chosen == LrHeuristic::min_div10 ? min_div10 : steepest; }
};

struct LrFinderResult {
  std::vector<double> lrs;
  std::vector<double> losses;
  std::vector<double> smoothed;
  /// Index of the last recorded point when the divergence rule fired.
  std::optional<std::size_t> stop_index;
  /// Present when the recorded curve admits a suggestion.
  std::optional<LrSuggestion> suggestion;

  double lr_start = 0.0;
};

/// lr_i = start * (end / start)^(i / (iters - 1)).
std::vector<double> lr_range_sequence(double lr_start, double lr_end, std::size_t iters);

/// Runs the range test against an arbitrary training step. `train_step(i, lr)`
/// performs one update at `lr` and returns the loss it observed. Stops after
/// max_iters, when the smoothed loss exceeds stop_factor x best, or at the first
/// non-finite loss (which is not recorded). A non-finite loss at iteration 0 is a
/// NumericError.
LrFinderResult lr_range_test(const std::function<double(std::size_t, double)>& train_step,
                             const LrFinderOptions& options = {});

/// Suggests a rate from the smoothed curve: the lr at its minimum divided by 10
/// (default), and the lr of steepest descent in log-lr. Throws NoSignalError with
/// fewer than 10 points or when the minimum sits at the first point.
LrSuggestion suggest_lr(const LrFinderResult& result, LrHeuristic chosen = LrHeuristic::min_div10);

/// "lr,loss,smoothed_loss" CSV.
std::string lr_finder_csv(const LrFinderResult& result);

}  // namespace leaffine
