#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "leaffine/augment.hpp"
#include "leaffine/dataset.hpp"

namespace leaffine {

struct LoaderOptions {
  std::size_t batch_size = 64;
  std::size_t image_size = 64;
  AugmentConfig augment;
  NormalizationPreset preset;
  std::uint64_t seed = 0;
  /// Keep decoded, resized images in memory across epochs.
  bool cache = true;
  /// Prepare batches on a helper thread through a two-slot buffer.
  bool prefetch = false;
};

struct Batch {
  Tensor<float> images;             ///< N×3×S×S, normalized
  std::vector<int> labels;          ///< length N
  std::vector<std::size_t> items;   ///< manifest indices, for traceability
};

/// Deterministic batches over one split of a manifest. The training split is
/// reshuffled per epoch from (seed, epoch) and augmented per item from
/// (seed, epoch, item); the validation split keeps manifest order and is only
/// resized and normalized.
class BatchLoader {
 public:
  BatchLoader(const DatasetManifest& manifest, Split split, LoaderOptions options);

  const LoaderOptions& options() const noexcept { return opts_; }
  Split split() const noexcept { return split_; }
  std::size_t size() const noexcept { return members_.size(); }
  std::size_t batch_count() const noexcept;

  /// Manifest indices in visiting order for `epoch`.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  Batch batch(std::size_t epoch, std::size_t index) const;

  /// Calls `fn` on each batch of the epoch in order. Exceptions from either the
  /// producer or `fn` propagate to the caller.
  void for_each_batch(std::size_t epoch, const std::function<void(const Batch&)>& fn) const;

  /// One item after resize and augmentation, before normalization.
  Image prepared_item(std::size_t manifest_index, std::size_t epoch) const;

 private:
  Image resized(std::size_t manifest_index) const;
  Batch assemble(const std::vector<std::size_t>& order, std::size_t begin, std::size_t end, std::size_t epoch) const;

  const DatasetManifest* manifest_;
  Split split_;
  LoaderOptions opts_;
  std::vector<std::size_t> members_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::size_t, std::shared_ptr<const Image>> cache_;
};

/// All batches of one epoch, materialized.
std::vector<Batch> make_batches(const DatasetManifest& manifest, Split split, const LoaderOptions& options,
                                std::size_t epoch = 0);

/// Per-channel mean and std of the resized training images, named "dataset".
NormalizationPreset compute_dataset_preset(const DatasetManifest& manifest, std::size_t image_size);

/// Looks up a preset by name: "imagenet", or "dataset" computed from `manifest`.
NormalizationPreset resolve_preset(const std::string& name, const DatasetManifest* manifest, std::size_t image_size);

}  // namespace leaffine
