#include "leaffine/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <thread>

#include "leaffine/error.hpp"
#include "leaffine/io.hpp"

namespace leaffine {

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(std::span<const float> logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (float v : logits) peak = std::max(peak, static_cast<double>(v));
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

namespace {

struct BatchScores {
  std::vector<std::size_t> items;
  std::vector<int> labels;
  std::vector<float> logits;
};

BatchScores score_batch(const Model& model, const Batch& batch) {
  Graph<float> g;
  const Var out = model.infer(g, g.constant(batch.images));
  return {batch.items, batch.labels, g.value(out).storage()};
}

}  // namespace

SplitScores score_split(const Model& model, const DatasetManifest& manifest, Split split, LoaderOptions options) {
  options.augment.enabled = false;
  options.prefetch = false;
  const BatchLoader loader(manifest, split, options);
  if (loader.size() == 0) throw DatasetError("split '" + to_string(split) + "' is empty");
  const std::size_t k = model.config().num_classes;
  const std::size_t batches = loader.batch_count();
  std::vector<BatchScores> parts(batches);

  const std::size_t workers = std::min(env_size("LEAFFINE_THREADS", 1), batches);
  if (workers <= 1) {
    for (std::size_t b = 0; b < batches; ++b) parts[b] = score_batch(model, loader.batch(0, b));
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < batches; b += workers) parts[b] = score_batch(model, loader.batch(0, b));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  struct Row {
    std::size_t item;
    int label;
    const float* logits;
  };
  std::vector<Row> rows;
  rows.reserve(loader.size());
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.items.size(); ++i) rows.push_back({p.items[i], p.labels[i], p.logits.data() + i * k});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.item < b.item; });

  SplitScores s;
  s.classes = k;
  s.probs.reserve(rows.size() * k);
  for (const Row& r : rows) {
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= k) {
      throw IndexError("label " + std::to_string(r.label) + " is outside the model's " + std::to_string(k) + " classes");
    }
    const std::span<const float> logits(r.logits, k);
    double peak = -std::numeric_limits<double>::infinity();
    for (float v : logits) peak = std::max(peak, static_cast<double>(v));
    double total = 0.0;
    for (float v : logits) total += std::exp(static_cast<double>(v) - peak);
    const double lse = peak + std::log(total);
    const auto p = softmax(logits);
    s.items.push_back(r.item);
    s.labels.push_back(r.label);
    s.predicted.push_back(static_cast<int>(argmax(p)));
    s.losses.push_back(lse - static_cast<double>(logits[static_cast<std::size_t>(r.label)]));
    s.probs.insert(s.probs.end(), p.begin(), p.end());
  }
  return s;
}

EvalResult summarize(const SplitScores& scores) {
  if (scores.size() == 0) throw DatasetError("cannot summarize an empty split");
  EvalResult r;
  r.total = scores.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    loss += scores.losses[i];
    r.correct += scores.predicted[i] == scores.labels[i];
  }
  r.loss = loss / static_cast<double>(r.total);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

EvalResult evaluate(const Model& model, const DatasetManifest& manifest, Split split, const LoaderOptions& options) {
  return summarize(score_split(model, manifest, split, options));
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names)
    : class_names(std::move(names)), counts(class_names.size(), std::vector<std::uint64_t>(class_names.size(), 0)) {}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted, std::uint64_t n) {
  if (actual >= classes() || predicted >= classes()) {
    throw IndexError("confusion cell (" + std::to_string(actual) + ", " + std::to_string(predicted) + ") outside " +
                     std::to_string(classes()) + " classes");
  }
  counts[actual][predicted] += n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t k = 0; k < classes(); ++k) t += counts[k][k];
  return t;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
  const auto& row = counts.at(actual);
  return std::accumulate(row.begin(), row.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row.at(predicted);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const std::uint64_t n = total();
  if (n == 0) throw StateError("accuracy of an empty confusion matrix");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "actual\\predicted";
  for (const auto& n : class_names) out += "," + n;
  out += "\n";
  for (std::size_t r = 0; r < classes(); ++r) {
    out += class_names[r];
    for (std::uint64_t c : counts[r]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

namespace {

std::vector<std::string> split_cells(std::string_view line, char sep) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(sep, start);
    std::string cell(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    const auto first = cell.find_first_not_of(" \r");
    const auto last = cell.find_last_not_of(" \r");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return cells;
}

}  // namespace

ConfusionMatrix ConfusionMatrix::parse(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) lines.emplace_back(pos, line);
    pos = end + 1;
  }
  if (lines.empty()) throw FormatError("confusion matrix text is empty", 0);
  const char sep = lines[0].second.find('\t') != std::string_view::npos ? '\t' : ',';
  auto header = split_cells(lines[0].second, sep);
  if (header.size() < 3) throw FormatError("confusion matrix header needs at least two class names", lines[0].first);
  ConfusionMatrix cm(std::vector<std::string>(header.begin() + 1, header.end()));
  if (lines.size() != cm.classes() + 1) {
    throw FormatError("confusion matrix has " + std::to_string(lines.size() - 1) + " rows for " +
                          std::to_string(cm.classes()) + " classes",
                      lines.back().first);
  }
  for (std::size_t r = 0; r < cm.classes(); ++r) {
    const auto [at, line] = lines[r + 1];
    const auto cells = split_cells(line, sep);
    if (cells.size() != cm.classes() + 1) throw FormatError("confusion matrix row has the wrong number of cells", at);
    if (cells[0] != cm.class_names[r]) {
      throw FormatError("row '" + cells[0] + "' does not match column '" + cm.class_names[r] + "'", at);
    }
    for (std::size_t c = 0; c < cm.classes(); ++c) {
      const std::string& cell = cells[c + 1];
      if (cell.empty() || cell.find_first_not_of("0123456789") != std::string::npos) {
        throw FormatError("confusion matrix cell '" + cell + "' is not a non-negative integer", at);
      }
      cm.counts[r][c] = std::stoull(cell);
    }
  }
  return cm;
}

ConfusionMatrix confusion_matrix(const SplitScores& scores, const std::vector<std::string>& class_names) {
  if (class_names.size() != scores.classes) {
    throw DimensionError(std::to_string(class_names.size()) + " class names for " + std::to_string(scores.classes) +
                         " model outputs");
  }
  ConfusionMatrix cm(class_names);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cm.add(static_cast<std::size_t>(scores.labels[i]), static_cast<std::size_t>(scores.predicted[i]));
  }
  return cm;
}

ConfusionMatrix confusion_matrix(const Model& model, const DatasetManifest& manifest, Split split,
                                 const LoaderOptions& options) {
  return confusion_matrix(score_split(model, manifest, split, options), manifest.class_names);
}

std::vector<TopLossEntry> top_losses(const SplitScores& scores, const DatasetManifest& manifest, std::size_t k) {
  if (k == 0) throw ConfigError("top_losses needs k >= 1");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores.losses[a] > scores.losses[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<TopLossEntry> out;
  for (std::size_t row : order) {
    const auto& item = manifest.items.at(scores.items[row]);
    const auto pred = static_cast<std::size_t>(scores.predicted[row]);
    const auto rel = manifest.root.empty() ? item.path : item.path.lexically_relative(manifest.root);
    out.push_back({manifest.class_names.at(static_cast<std::size_t>(scores.labels[row])), manifest.class_names.at(pred),
                   scores.losses[row], scores.probability(row, pred), (rel.empty() ? item.path : rel).generic_string(),
                   scores.items[row]});
  }
  return out;
}

std::string top_losses_csv(const std::vector<TopLossEntry>& entries) {
  std::string out = "actual,predicted,loss,probability,path\n";
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", e.loss, e.probability);
    out += e.actual + "," + e.predicted + buf + e.path + "\n";
  }
  return out;
}

}  // namespace leaffine
