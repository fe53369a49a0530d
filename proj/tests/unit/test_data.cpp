#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "leaffine/error.hpp"
#include "leaffine/io.hpp"
#include "leaffine/loader.hpp"
#include "leaffine/synthetic.hpp"
#include "oracles.hpp"

using namespace leaffine;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> published_class_names() {
  std::ifstream in(testing::fixture_dir() / "published_confusion.tsv");
  std::string header;
  std::getline(in, header);
  std::vector<std::string> names;
  std::stringstream ss(header);
  std::string cell;
  std::getline(ss, cell, '\t');
  while (std::getline(ss, cell, '\t')) names.push_back(cell);
  return names;
}

void write_tiny(const fs::path& p, std::uint8_t shade, std::size_t size = 4) {
  Image img(Shape{3, size, size}, static_cast<float>(shade) / 255.0f);
  save_ppm(img, p);
}

// `per_class` distinct flat-colour images per class under root/<name>/.
void make_tree(const fs::path& root, const std::vector<std::string>& names, std::size_t per_class) {
  for (std::size_t k = 0; k < names.size(); ++k) {
    fs::create_directories(root / names[k]);
    for (std::size_t i = 0; i < per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "img_%03zu.ppm", i);
      write_tiny(root / names[k] / file, static_cast<std::uint8_t>((k * 37 + i) % 256));
    }
  }
}

bool same_batch(const Batch& a, const Batch& b) {
  return a.labels == b.labels && a.items == b.items && a.images.shape() == b.images.shape() &&
         std::memcmp(a.images.data().data(), b.images.data().data(), a.images.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("scan discovers class folders in sorted order") {
  const auto names = published_class_names();
  REQUIRE(names.size() == 15);
  testing::TempDir dir("scan");
  make_tree(dir.path(), names, 3);
  // Ignored: hidden entries, other extensions, loose files at the root.
  write_tiny(dir.path() / names[0] / ".hidden.ppm", 1);
  std::ofstream(dir.path() / names[0] / "notes.txt") << "x";
  std::ofstream(dir.path() / "README") << "x";
  fs::create_directories(dir.path() / ".cache");
  write_tiny(dir.path() / names[1] / "UPPER.PPM", 2);

  const auto m = scan_dataset(dir.path());
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(m.class_names == sorted);
  CHECK(m.items.size() == 15 * 3 + 1);
  for (const auto& it : m.items) {
    CHECK(it.split == Split::train);
    CHECK(fs::path(it.path).parent_path().filename().string() == m.class_names[static_cast<std::size_t>(it.label)]);
  }
  CHECK(scan_dataset(dir.path()) == m);
  const auto csv = m.to_csv();
  CHECK(csv.rfind("path,label,split\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(m.items.size() + 1));
}

TEST_CASE("scan rejects unusable trees") {
  testing::TempDir dir("scan-bad");
  CHECK_THROWS_AS(scan_dataset(dir.path() / "missing"), DatasetError);
  make_tree(dir.path(), {"only"}, 2);
  CHECK_THROWS_AS(scan_dataset(dir.path()), DatasetError);
  fs::create_directories(dir.path() / "empty");
  CHECK_THROWS_AS(scan_dataset(dir.path()), DatasetError);
  write_tiny(dir.path() / "empty" / "a.ppm", 3);
  CHECK_NOTHROW(scan_dataset(dir.path()));
}

TEST_CASE("stratified split") {
  testing::TempDir dir("split");
  make_tree(dir.path(), {"a", "b", "c"}, 100);
  const auto m = scan_dataset(dir.path());
  const auto s = split_dataset(m, 0.2, 42);
  CHECK(s.class_counts(Split::valid) == std::vector<std::size_t>{20, 20, 20});
  CHECK(s.class_counts(Split::train) == std::vector<std::size_t>{80, 80, 80});
  CHECK(s.class_counts() == std::vector<std::size_t>{100, 100, 100});
  CHECK(split_dataset(m, 0.2, 42) == s);
  CHECK_FALSE(split_dataset(m, 0.2, 43) == s);
  // Splitting only reassigns membership.
  for (std::size_t i = 0; i < m.items.size(); ++i) CHECK(s.items[i].path == m.items[i].path);

  const auto tiny = split_dataset(m, 0.001, 1);
  CHECK(tiny.class_counts(Split::valid) == std::vector<std::size_t>{1, 1, 1});
  const auto most = split_dataset(m, 0.999, 1);
  CHECK(most.class_counts(Split::train) == std::vector<std::size_t>{1, 1, 1});

  CHECK_THROWS_AS(split_dataset(m, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_dataset(m, 1.0, 1), ConfigError);
  CHECK(parse_split(to_string(Split::valid)) == Split::valid);
  CHECK_THROWS_AS(parse_split("test"), ConfigError);
}

TEST_CASE("batching: sizes, determinism and label coverage") {
  testing::TempDir dir("batch");
  make_tree(dir.path(), {"a", "b"}, 65);
  const auto m = scan_dataset(dir.path());
  REQUIRE(m.items.size() == 130);
  LoaderOptions opt;
  opt.batch_size = 64;
  opt.image_size = 8;
  opt.seed = 5;
  BatchLoader loader(m, Split::train, opt);
  REQUIRE(loader.batch_count() == 3);
  const auto e0 = make_batches(m, Split::train, opt, 0);
  REQUIRE(e0.size() == 3);
  CHECK(e0[0].labels.size() == 64);
  CHECK(e0[1].labels.size() == 64);
  CHECK(e0[2].labels.size() == 2);
  CHECK(e0[2].images.shape() == Shape{2, 3, 8, 8});

  // Every item exactly once; label histogram preserved.
  std::multiset<std::size_t> seen;
  std::size_t ones = 0;
  for (const auto& b : e0) {
    seen.insert(b.items.begin(), b.items.end());
    for (std::size_t i = 0; i < b.items.size(); ++i) {
      CHECK(b.labels[i] == m.items[b.items[i]].label);
      ones += b.labels[i] == 1;
    }
  }
  CHECK(seen.size() == 130);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 130);
  CHECK(ones == 65);

  const auto again = make_batches(m, Split::train, opt, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same_batch(e0[i], again[i]));
  CHECK(loader.epoch_order(1) != loader.epoch_order(0));
  CHECK(same_batch(loader.batch(1, 2), make_batches(m, Split::train, opt, 1)[2]));
  CHECK_THROWS_AS(loader.batch(0, 3), IndexError);

  // Augmentation draws depend on (seed, epoch, item) only.
  opt.augment = AugmentConfig{};
  BatchLoader aug(m, Split::train, opt);
  for (std::size_t idx : {0u, 17u, 129u}) CHECK(aug.prepared_item(idx, 3) == aug.prepared_item(idx, 3));
}

TEST_CASE("validation batches are fixed across epochs") {
  testing::TempDir dir("valid");
  make_tree(dir.path(), {"a", "b"}, 20);
  const auto m = split_dataset(scan_dataset(dir.path()), 0.5, 3);
  LoaderOptions opt;
  opt.batch_size = 7;
  opt.image_size = 6;
  BatchLoader valid(m, Split::valid, opt);
  CHECK(valid.size() == 20);
  CHECK(valid.epoch_order(0) == m.indices(Split::valid));
  for (std::size_t b = 0; b < valid.batch_count(); ++b) CHECK(same_batch(valid.batch(0, b), valid.batch(4, b)));
}

TEST_CASE("prefetching yields the sequential batches") {
  testing::TempDir dir("prefetch");
  make_tree(dir.path(), {"a", "b", "c"}, 11);
  const auto m = scan_dataset(dir.path());
  LoaderOptions opt;
  opt.batch_size = 4;
  opt.image_size = 8;
  opt.augment = AugmentConfig{};
  const auto seq = make_batches(m, Split::train, opt, 2);
  opt.prefetch = true;
  opt.cache = false;
  BatchLoader pf(m, Split::train, opt);
  std::size_t i = 0;
  pf.for_each_batch(2, [&](const Batch& b) {
    REQUIRE(i < seq.size());
    CHECK(same_batch(b, seq[i++]));
  });
  CHECK(i == seq.size());

  // Consumer exceptions propagate and the helper thread shuts down.
  CHECK_THROWS_AS(pf.for_each_batch(0, [](const Batch&) { throw StateError("stop"); }), StateError);
}

TEST_CASE("a corrupt image surfaces a decode error naming its path") {
  testing::TempDir dir("corrupt");
  make_tree(dir.path(), {"a", "b"}, 3);
  write_file_atomic(dir.path() / "b" / "img_001.ppm", std::string_view("P6\n4 4\n255\n"));
  const auto m = scan_dataset(dir.path());
  for (bool prefetch : {false, true}) {
    LoaderOptions opt;
    opt.batch_size = 2;
    opt.image_size = 4;
    opt.prefetch = prefetch;
    BatchLoader loader(m, Split::train, opt);
    try {
      loader.for_each_batch(0, [](const Batch&) {});
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("img_001.ppm") != std::string::npos);
    }
  }
}

TEST_CASE("normalization presets") {
  testing::TempDir dir("preset");
  make_tree(dir.path(), {"a", "b"}, 2);
  const auto m = scan_dataset(dir.path());
  const auto p = compute_dataset_preset(m, 4);
  CHECK(p.name == "dataset");
  // Flat images with shades 0, 1, 37, 38 (/255) in every channel.
  const double mean = (0 + 1 + 37 + 38) / 4.0 / 255.0;
  for (std::size_t c = 0; c < 3; ++c) CHECK(p.mean[c] == doctest::Approx(mean).epsilon(1e-5));
  CHECK(resolve_preset("imagenet", nullptr, 4).mean == NormalizationPreset::imagenet().mean);
  CHECK(resolve_preset("dataset", &m, 4).mean == p.mean);
  CHECK_THROWS_AS(resolve_preset("dataset", nullptr, 4), ConfigError);
  CHECK_THROWS_AS(resolve_preset("cifar", &m, 4), ConfigError);

  LoaderOptions bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(BatchLoader(m, Split::train, bad), ConfigError);
}

TEST_CASE("synthetic generator") {
  testing::TempDir dir("synth");
  SyntheticSpec spec;
  spec.classes = 4;
  spec.per_class = 100;
  spec.image_size = 48;
  spec.seed = 7;
  const auto m = gen_synthetic_dataset(spec, dir.path() / "a");
  REQUIRE(m.items.size() == 400);
  CHECK(m.class_counts() == std::vector<std::size_t>{100, 100, 100, 100});
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "a")) files += e.is_regular_file();
  CHECK(files == 400);
  for (const auto& name : m.class_names) {
    CHECK(std::find(synthetic_motif_names().begin(), synthetic_motif_names().begin() + 4, name) !=
          synthetic_motif_names().begin() + 4);
  }

  // Byte-identical regeneration.
  SyntheticSpec small = spec;
  small.per_class = 5;
  const auto x = gen_synthetic_dataset(small, dir.path() / "x");
  const auto y = gen_synthetic_dataset(small, dir.path() / "y");
  REQUIRE(x.items.size() == y.items.size());
  for (std::size_t i = 0; i < x.items.size(); ++i) CHECK(read_file(x.items[i].path) == read_file(y.items[i].path));
  small.seed = 8;
  const auto z = gen_synthetic_dataset(small, dir.path() / "z");
  CHECK(read_file(z.items[0].path) != read_file(x.items[0].path));

  // Classes are separable by colour and spot statistics alone.
  std::vector<std::vector<double>> tr_x, te_x;
  std::vector<int> tr_y, te_y;
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    const auto f = testing::leaf_features(load_image(m.items[i].path));
    const bool train = (i % 2) == 0;
    (train ? tr_x : te_x).push_back(f);
    (train ? tr_y : te_y).push_back(m.items[i].label);
  }
  const double acc = testing::nearest_centroid_accuracy(tr_x, tr_y, te_x, te_y, 4);
  MESSAGE("nearest-centroid accuracy " << acc);
  CHECK(acc >= 0.8);
}

TEST_CASE("synthetic generator errors") {
  SyntheticSpec s;
  s.classes = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.first_motif = 10;
  s.classes = 8;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.image_size = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  testing::TempDir dir("synth-bad");
  write_file_atomic(dir.path() / "blocker", std::string_view("x"));
  SyntheticSpec ok;
  ok.classes = 2;
  ok.per_class = 4;
  ok.image_size = 8;
  CHECK_THROWS_AS(gen_synthetic_dataset(ok, dir.path() / "blocker" / "out"), IoError);
}

}  // TEST_SUITE
