#include "leaffine/loader.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <random>
#include <thread>

#include "leaffine/error.hpp"

namespace leaffine {

BatchLoader::BatchLoader(const DatasetManifest& manifest, Split split, LoaderOptions options)
    : manifest_(&manifest), split_(split), opts_(std::move(options)), members_(manifest.indices(split)) {
  if (opts_.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (opts_.image_size == 0) throw ConfigError("image_size must be at least 1");
  opts_.augment.validate();
  opts_.preset.validate();
}

std::size_t BatchLoader::batch_count() const noexcept {
  return (members_.size() + opts_.batch_size - 1) / opts_.batch_size;
}

std::vector<std::size_t> BatchLoader::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order = members_;
  if (split_ == Split::train) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts_.seed), static_cast<std::uint32_t>(opts_.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

Image BatchLoader::resized(std::size_t manifest_index) const {
  if (opts_.cache) {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(manifest_index); it != cache_.end()) return *it->second;
  }
  const auto& item = manifest_->items.at(manifest_index);
  Image img = resize_bilinear(load_image(item.path), opts_.image_size, opts_.image_size);
  if (img.dim(0) != 3) throw DecodeError(item.path.string() + ": expected 3 channels", 0);
  if (opts_.cache) {
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(manifest_index, std::make_shared<const Image>(img));
  }
  return img;
}

Image BatchLoader::prepared_item(std::size_t manifest_index, std::size_t epoch) const {
  Image img = resized(manifest_index);
  if (split_ == Split::train && opts_.augment.enabled) {
    auto rng = item_rng(opts_.seed, epoch, manifest_index);
    img = augment(img, opts_.augment, rng);
  }
  return img;
}

Batch BatchLoader::assemble(const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                            std::size_t epoch) const {
  const std::size_t n = end - begin, s = opts_.image_size, per = 3 * s * s;
  Batch b;
  b.images = Tensor<float>(Shape{n, 3, s, s});
  b.labels.reserve(n);
  b.items.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = order[begin + k];
    const Image img = normalize(prepared_item(idx, epoch), opts_.preset);
    std::memcpy(b.images.data().data() + k * per, img.data().data(), per * sizeof(float));
    b.labels.push_back(manifest_->items[idx].label);
    b.items.push_back(idx);
  }
  return b;
}

Batch BatchLoader::batch(std::size_t epoch, std::size_t index) const {
  if (index >= batch_count()) {
    throw IndexError("batch " + std::to_string(index) + " out of range (" + std::to_string(batch_count()) + " batches)");
  }
  const auto order = epoch_order(epoch);
  const std::size_t begin = index * opts_.batch_size;
  return assemble(order, begin, std::min(order.size(), begin + opts_.batch_size), epoch);
}

void BatchLoader::for_each_batch(std::size_t epoch, const std::function<void(const Batch&)>& fn) const {
  const auto order = epoch_order(epoch);
  const std::size_t count = batch_count();
  auto range = [&](std::size_t i) {
    const std::size_t begin = i * opts_.batch_size;
    return std::pair{begin, std::min(order.size(), begin + opts_.batch_size)};
  };
  if (!opts_.prefetch || count < 2) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto [b, e] = range(i);
      fn(assemble(order, b, e, epoch));
    }
    return;
  }

  constexpr std::size_t kCapacity = 2;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Batch> queue;
  std::exception_ptr producer_error;
  bool producer_done = false;
  bool stop = false;

  std::thread producer([&] {
    try {
      for (std::size_t i = 0; i < count; ++i) {
        const auto [b, e] = range(i);
        Batch batch = assemble(order, b, e, epoch);
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || queue.size() < kCapacity; });
        if (stop) return;
        queue.push_back(std::move(batch));
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu);
      producer_error = std::current_exception();
    }
    std::lock_guard lock(mu);
    producer_done = true;
    cv.notify_all();
  });

  auto shutdown = [&] {
    {
      std::lock_guard lock(mu);
      stop = true;
    }
    cv.notify_all();
    producer.join();
  };

  try {
    for (std::size_t i = 0; i < count; ++i) {
      Batch batch;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !queue.empty() || producer_done; });
        if (queue.empty()) break;
        batch = std::move(queue.front());
        queue.pop_front();
        cv.notify_all();
      }
      fn(batch);
    }
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
  if (producer_error) std::rethrow_exception(producer_error);
}

std::vector<Batch> make_batches(const DatasetManifest& manifest, Split split, const LoaderOptions& options,
                                std::size_t epoch) {
  BatchLoader loader(manifest, split, options);
  std::vector<Batch> out;
  out.reserve(loader.batch_count());
  loader.for_each_batch(epoch, [&](const Batch& b) { out.push_back(b); });
  return out;
}

NormalizationPreset compute_dataset_preset(const DatasetManifest& manifest, std::size_t image_size) {
  const auto members = manifest.indices(Split::train);
  if (members.empty()) throw DatasetError("cannot compute dataset statistics: training split is empty");
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  std::size_t count = 0;
  for (std::size_t idx : members) {
    const Image img = resize_bilinear(load_image(manifest.items[idx].path), image_size, image_size);
    const std::size_t plane = image_size * image_size;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img[c * plane + i];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += plane;
  }
  NormalizationPreset p;
  p.name = "dataset";
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = std::max(0.0, sq[c] / static_cast<double>(count) - mean * mean);
    p.mean[c] = static_cast<float>(mean);
    p.std[c] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
  }
  return p;
}

NormalizationPreset resolve_preset(const std::string& name, const DatasetManifest* manifest, std::size_t image_size) {
  if (name == "imagenet") return NormalizationPreset::imagenet();
  if (name == "dataset") {
    if (!manifest) throw ConfigError("the 'dataset' normalization preset needs a dataset");
    return compute_dataset_preset(*manifest, image_size);
  }
  throw ConfigError("unknown normalization preset '" + name + "' (expected imagenet or dataset)");
}

}  // namespace leaffine
