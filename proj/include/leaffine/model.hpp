#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leaffine/graph.hpp"
#include "leaffine/ops.hpp"
#include "leaffine/tensor.hpp"

namespace leaffine {

enum class BlockKind { basic, bottleneck };

/// compact: 3x3 stride-1 stem, no max-pool (small inputs).
/// canonical: 7x7 stride-2 stem followed by 3x3 stride-2 max-pool.
enum class StemKind { compact, canonical };

inline constexpr std::size_t kBottleneckExpansion = 4;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr std::size_t kDefaultLayerGroups = 3;

struct ModelConfig {
  BlockKind block = BlockKind::basic;
  std::vector<std::size_t> stage_depths{2, 2, 2};
  /// Output widths for basic blocks; inner widths for bottleneck blocks (output = 4x).
  std::vector<std::size_t> stage_widths{16, 32, 64};
  std::size_t stem_width = 16;
  StemKind stem = StemKind::compact;
  std::size_t input_channels = 3;
  std::size_t num_classes = 4;
  std::size_t image_size = 32;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
  std::size_t feature_width() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// "mini-basic", "mini-bottleneck", "resnet34" or "resnet50".
ModelConfig preset_config(std::string_view preset, std::size_t num_classes, std::size_t image_size);
std::vector<std::string> preset_names();

enum class ParamRole { conv_weight, norm_gamma, norm_beta, head_weight, head_bias };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  ParamRole role = ParamRole::conv_weight;
  bool trainable = true;
  std::size_t group = 0;
};

template <typename T>
struct NormLayer {
  std::string name;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  RunningStats<T> stats;
  /// Runs in inference mode even while training (frozen group, train_bn off).
  bool frozen_stats = false;
};

enum class Mode { train, eval };

/// Residual CNN: stem, stages of residual blocks, global average pool, linear head.
///
/// Parameters live in one registry in forward order; layers refer to them by index,
/// so copies are independent deep copies.
template <typename T>
class ResNet {
 public:
  /// Builds the architecture with He-initialized weights for `seed`, split into the
  /// default three layer groups.
  explicit ResNet(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const noexcept { return config_; }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::vector<NormLayer<T>>& norm_layers() noexcept { return norms_; }
  const std::vector<NormLayer<T>>& norm_layers() const noexcept { return norms_; }

  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;
  std::size_t block_count() const noexcept { return blocks_.size(); }

  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  void set_class_names(std::vector<std::string> names);

  /// Records a forward pass. In Mode::train, trainable parameters require gradients
  /// and live norm layers update their running statistics.
  Var forward(Graph<T>& g, Var x, Mode mode);

  /// Read-only forward pass with running statistics; safe to call concurrently.
  Var infer(Graph<T>& g, Var x) const;

  void init_params(std::uint64_t seed);

  /// Swaps the linear head for a freshly initialized one. The new head joins the last
  /// group and is trainable; every other tensor is left untouched.
  void replace_head(std::size_t num_classes, std::vector<std::string> class_names, std::uint64_t seed);

  /// Partitions parameters into `groups` contiguous layer groups in forward order.
  void assign_layer_groups(std::size_t groups);
  std::size_t group_count() const noexcept { return groups_; }
  /// Number of parameter tensors in each group.
  std::vector<std::size_t> group_sizes() const;

  /// Restores a group map read back from a checkpoint.
  void set_group_map(std::size_t groups, const std::vector<std::size_t>& assignment);

  void set_frozen(const std::set<std::size_t>& frozen_groups, bool train_bn = false);

  /// Weight of the batch statistics in running-statistics updates (default 0.1).
  double norm_momentum() const noexcept { return norm_momentum_; }
  void set_norm_momentum(double momentum);
  const std::set<std::size_t>& frozen_groups() const noexcept { return frozen_; }
  bool train_bn() const noexcept { return train_bn_; }

 private:
  // Position of each parameter in the network: stage -1 is the stem, -2 the head.
  struct Placement {
    int stage = -1;
    int block = -1;
  };

  struct ConvUnit {
    std::size_t weight = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t norm = 0;
  };
  struct Block {
    std::size_t stage = 0;
    std::vector<ConvUnit> body;
    std::optional<ConvUnit> shortcut;
  };

  ConvUnit add_conv_unit(const std::string& prefix, std::size_t in, std::size_t out, std::size_t kernel,
                         std::size_t stride, std::size_t pad, Placement where);
  std::size_t add_param(std::string name, Shape shape, ParamRole role, T fill, Placement where);
  void init_param(std::size_t index, std::uint64_t seed);
  void apply_freeze();

  template <typename Self>
  static Var forward_impl(Self& self, Graph<T>& g, Var x, Mode mode);

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<Placement> placement_;
  std::vector<NormLayer<T>> norms_;
  ConvUnit stem_;
  std::vector<Block> blocks_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
  std::vector<std::string> class_names_;
  std::size_t groups_ = 1;
  std::set<std::size_t> frozen_;
  bool train_bn_ = false;
  double norm_momentum_ = kBatchNormMomentum;
};

using Model = ResNet<float>;

template <typename T>
ResNet<T> build_resnet(const ModelConfig& config, std::uint64_t seed = 0) {
  return ResNet<T>(config, seed);
}

/// FNV-1a hash over names and raw bytes of the selected parameters (all when `groups`
/// is empty), plus running statistics of norm layers in those groups.
template <typename T>
std::uint64_t parameter_hash(const ResNet<T>& model, const std::set<std::size_t>& groups = {});

}  // namespace leaffine
