#include "leaffine/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "leaffine/error.hpp"

namespace leaffine {
namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::train ? "train" : "valid"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "valid") return Split::valid;
  throw ConfigError("unknown split '" + text + "' (expected train or valid)");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::class_counts(Split split) const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& it : items) {
    if (it.split == split) ++counts[static_cast<std::size_t>(it.label)];
  }
  return counts;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& it : items) ++counts[static_cast<std::size_t>(it.label)];
  return counts;
}

std::string DatasetManifest::to_csv() const {
  std::string out = "path,label,split\n";
  for (const auto& it : items) {
    out += it.path.lexically_relative(root).generic_string() + "," + std::to_string(it.label) + "," +
           to_string(it.split) + "\n";
  }
  return out;
}

namespace {

bool is_image_file(const fs::directory_entry& e) {
  if (!e.is_regular_file()) return false;
  const std::string name = e.path().filename().string();
  if (name.empty() || name[0] == '.') return false;
  std::string ext = e.path().extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".png";
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError("dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && !name.empty() && name[0] != '.') class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.size() < 2) {
    throw DatasetError("dataset root '" + root.string() + "' has " + std::to_string(class_dirs.size()) +
                       " class directories; at least 2 are needed");
  }
  DatasetManifest m;
  m.root = root;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      if (is_image_file(e)) files.push_back(e.path());
    }
    if (files.empty()) throw DatasetError("class directory '" + class_dirs[k].string() + "' contains no images");
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    m.class_names.push_back(class_dirs[k].filename().string());
    for (auto& f : files) m.items.push_back(DatasetItem{std::move(f), static_cast<int>(k), Split::train});
  }
  return m;
}

DatasetManifest split_dataset(DatasetManifest manifest, double valid_fraction, std::uint64_t seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) throw ConfigError("valid_fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(manifest.class_names.size());
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    by_class[static_cast<std::size_t>(manifest.items[i].label)].push_back(i);
  }
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& members = by_class[k];
    if (members.size() < 2) {
      throw DatasetError("class '" + manifest.class_names[k] + "' needs at least 2 items to split, has " +
                         std::to_string(members.size()));
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    std::shuffle(members.begin(), members.end(), rng);
    auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(members.size())));
    n_valid = std::clamp<std::size_t>(n_valid, 1, members.size() - 1);
    for (std::size_t j = 0; j < members.size(); ++j) {
      manifest.items[members[j]].split = j < n_valid ? Split::valid : Split::train;
    }
  }
  return manifest;
}

}  // namespace leaffine
