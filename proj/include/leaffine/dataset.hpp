#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace leaffine {

enum class Split { train, valid };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetItem {
  std::filesystem::path path;
  int label = 0;
  Split split = Split::train;

  friend bool operator==(const DatasetItem&, const DatasetItem&) = default;
};

/// Folder-per-class inventory: root/<class_name>/<file>.{ppm,png}.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<DatasetItem> items;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> class_counts(Split split) const;
  std::vector<std::size_t> class_counts() const;

  /// "path,label,split" with paths relative to the root.
  std::string to_csv() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// One class per subdirectory in lexicographic order, files sorted by name. Every
/// item starts in the training split.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Stratified split: round(fraction * n) items of each class (at least one, at most
/// n - 1) go to validation, chosen by a per-class shuffle seeded from `seed`.
DatasetManifest split_dataset(DatasetManifest manifest, double valid_fraction, std::uint64_t seed);

}  // namespace leaffine
