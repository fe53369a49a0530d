#include "leaffine/lr_finder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "leaffine/error.hpp"

namespace leaffine {

void LrFinderOptions::validate() const {
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw ConfigError("lr range test rates must be positive");
  if (!(lr_start < lr_end)) throw ConfigError("lr range test needs lr_start < lr_end");
  if (max_iters < 10) throw ConfigError("lr range test needs at least 10 iterations");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must lie in [0, 1)");
  if (!(stop_factor > 1.0)) throw ConfigError("stop_factor must exceed 1");
}

std::vector<double> lr_range_sequence(double lr_start, double lr_end, std::size_t iters) {
  std::vector<double> lrs(iters);
  const double ratio = lr_end / lr_start;
  for (std::size_t i = 0; i < iters; ++i) {
    lrs[i] = iters == 1 ? lr_start : lr_start * std::pow(ratio, static_cast<double>(i) / static_cast<double>(iters - 1));
  }
  if (iters > 1) lrs.back() = lr_end;
  return lrs;
}

LrFinderResult lr_range_test(const std::function<double(std::size_t, double)>& train_step,
                             const LrFinderOptions& options) {
  options.validate();
  const std::vector<double> schedule = lr_range_sequence(options.lr_start, options.lr_end, options.max_iters);
  LrFinderResult result;
  result.lr_start = options.lr_start;
  double avg = 0.0;
  double best = 0.0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double loss = train_step(i, schedule[i]);
    if (!std::isfinite(loss)) {
      if (i == 0) throw NumericError("lr range test: non-finite loss at the first iteration");
      result.stop_index = i - 1;
      break;
    }
    avg = options.smoothing * avg + (1.0 - options.smoothing) * loss;
    const double smooth = avg / (1.0 - std::pow(options.smoothing, static_cast<double>(i + 1)));
    result.lrs.push_back(schedule[i]);
    result.losses.push_back(loss);
    result.smoothed.push_back(smooth);
    if (i > 0 && smooth > options.stop_factor * best) {
      result.stop_index = i;
      break;
    }
    if (i == 0 || smooth < best) best = smooth;
  }
  try {
    result.suggestion = suggest_lr(result);
  } catch (const NoSignalError&) {
    result.suggestion.reset();
  }
  return result;
}

LrSuggestion suggest_lr(const LrFinderResult& result, LrHeuristic chosen) {
  const auto& s = result.smoothed;
  const auto& lrs = result.lrs;
  if (s.size() < 10 || lrs.size() != s.size()) {
    throw NoSignalError("lr range test recorded " + std::to_string(s.size()) + " points; at least 10 are needed");
  }
  const auto min_at = static_cast<std::size_t>(std::min_element(s.begin(), s.end()) - s.begin());
  if (min_at == 0) throw NoSignalError("loss never fell below its starting value");

  const double floor = result.lr_start > 0.0 ? result.lr_start : lrs.front();
  LrSuggestion out;
  out.chosen = chosen;
  out.min_div10 = std::max(lrs[min_at] / 10.0, floor);

  // Slope of smoothed loss against log(lr): central differences, one-sided at the ends.
  std::size_t steepest = 0;
  double most_negative = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == s.size() ? i : i + 1;
    const double slope = (s[hi] - s[lo]) / (std::log(lrs[hi]) - std::log(lrs[lo]));
    if (slope < most_negative) {
      most_negative = slope;
      steepest = i;
    }
  }
  out.steepest = lrs[steepest];
  return out;
}

std::string lr_finder_csv(const LrFinderResult& result) {
  std::string out = "lr,loss,smoothed_loss\n";
  char line[128];
  for (std::size_t i = 0; i < result.lrs.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.6f,%.6f\n", result.lrs[i], result.losses[i], result.smoothed[i]);
    out += line;
  }
  return out;
}

}  // namespace leaffine
