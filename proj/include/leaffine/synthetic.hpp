#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "leaffine/dataset.hpp"
#include "leaffine/image.hpp"

namespace leaffine {

/// Procedural leaf images. Class k draws motif (first_motif + k) from a fixed table
/// of kSyntheticMotifs disease patterns, so disjoint motif ranges give unrelated
/// source and target tasks.
struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 200;
  std::size_t image_size = 64;
  std::uint64_t seed = 42;
  std::size_t first_motif = 0;

  void validate() const;
};

inline constexpr std::size_t kSyntheticMotifs = 16;

const std::vector<std::string>& synthetic_motif_names();

/// Renders image `index` of motif `motif`; deterministic in (seed, motif, index).
Image render_synthetic_leaf(std::size_t motif, std::size_t index, std::size_t image_size, std::uint64_t seed);

/// Writes out_dir/<class>/<class>_NNNN.ppm and returns the scanned manifest.
DatasetManifest gen_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace leaffine
