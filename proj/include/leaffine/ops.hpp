#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "leaffine/graph.hpp"
#include "leaffine/tensor.hpp"

namespace leaffine {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// N×Cin×H×W input, Cout×Cin×Kh×Kw weight, optional Cout bias.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, std::optional<Var> bias, Conv2dOptions opt = {});

enum class NormMode { training, inference };

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit RunningStats(std::size_t channels = 1)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  NormMode mode = NormMode::training;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of an N×C×H×W tensor.
///
/// Training mode normalizes with the biased batch variance and folds the batch
/// statistics into `stats` (running = (1 - momentum) * running + momentum * batch,
/// using the unbiased variance). Inference mode reads `stats` only.
template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, RunningStats<T>& stats,
                 const BatchNormOptions& opt);

/// Inference-mode batch norm over read-only running statistics.
template <typename T>
Var batch_norm2d_inference(Graph<T>& g, Var x, Var gamma, Var beta, const RunningStats<T>& stats,
                           double eps = 1e-5);

template <typename T>
Var relu(Graph<T>& g, Var x);

struct PoolOptions {
  std::size_t window = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;
};

template <typename T>
Var max_pool2d(Graph<T>& g, Var x, PoolOptions opt = {});

/// N×C×H×W -> N×C.
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);

/// N×F input, K×F weight, K bias -> N×K.
template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias);

template <typename T>
Var residual_add(Graph<T>& g, Var a, Var b);

/// Mean over rows of logsumexp(logits_i) - logits_i[label_i].
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels);

/// Sum of all elements as a scalar.
template <typename T>
Var sum(Graph<T>& g, Var x);

/// Row-wise log-softmax of an N×K array, evaluated in double precision with
/// max subtraction. Shared by evaluation code that needs per-item losses.
template <typename T>
std::vector<double> log_softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols);

}  // namespace leaffine
