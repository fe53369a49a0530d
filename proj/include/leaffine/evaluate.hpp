#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "leaffine/loader.hpp"
#include "leaffine/model.hpp"

namespace leaffine {

/// Per-item inference results over one split, ordered by manifest index.
struct SplitScores {
  std::size_t classes = 0;
  std::vector<std::size_t> items;
  std::vector<int> labels;
  std::vector<int> predicted;
  /// Cross-entropy of each item's true label.
  std::vector<double> losses;
  /// Row-major items x classes softmax probabilities.
  std::vector<double> probs;

  std::size_t size() const noexcept { return items.size(); }
  double probability(std::size_t row, std::size_t cls) const { return probs[row * classes + cls]; }
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Softmax in double precision via log-sum-exp.
std::vector<double> softmax(std::span<const float> logits);

/// Runs the model in inference mode over every item of `split`, without
/// augmentation. Batches are spread over LEAFFINE_THREADS workers (default 1);
/// results do not depend on the worker count. Throws DatasetError on an empty split.
SplitScores score_split(const Model& model, const DatasetManifest& manifest, Split split, LoaderOptions options);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

EvalResult summarize(const SplitScores& scores);

EvalResult evaluate(const Model& model, const DatasetManifest& manifest, Split split, const LoaderOptions& options);

/// Rows are actual classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names);

  std::size_t classes() const noexcept { return class_names.size(); }
  void add(std::size_t actual, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t trace() const;
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t actual) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  /// trace / total; throws StateError when empty.
  double accuracy() const;

  /// Header row and first column carry class names; comma separated.
  std::string to_csv() const;
  /// Accepts comma- or tab-separated tables in the to_csv layout. The corner cell
  /// is free text. Throws FormatError with the byte offset of the offending line.
  static ConfusionMatrix parse(std::string_view text);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(const SplitScores& scores, const std::vector<std::string>& class_names);

ConfusionMatrix confusion_matrix(const Model& model, const DatasetManifest& manifest, Split split,
                                 const LoaderOptions& options);

struct TopLossEntry {
  std::string actual;
  std::string predicted;
  double loss = 0.0;
  /// Softmax mass of the predicted class.
  double probability = 0.0;
  /// Relative to the dataset root.
  std::string path;
  std::size_t item = 0;
};

/// The k items with the largest loss, descending; equal losses keep manifest order.
std::vector<TopLossEntry> top_losses(const SplitScores& scores, const DatasetManifest& manifest, std::size_t k);

/// "actual,predicted,loss,probability,path".
std::string top_losses_csv(const std::vector<TopLossEntry>& entries);

}  // namespace leaffine
