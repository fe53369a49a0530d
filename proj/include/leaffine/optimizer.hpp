#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "leaffine/model.hpp"
#include "leaffine/tensor.hpp"

namespace leaffine {

enum class UpdateRule { adam, sgd };

/// Which end of the network receives the smallest learning rate.
enum class LrDirection { early_low, early_high };

std::string to_string(UpdateRule rule);
std::string to_string(LrDirection direction);
UpdateRule parse_update_rule(const std::string& text);
LrDirection parse_lr_direction(const std::string& text);

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::adam;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-5;
  /// Decoupled: p <- p * (1 - lr * weight_decay) before the gradient update.
  double weight_decay = 0.01;
  /// Momentum of the SGD rule.
  double momentum = 0.9;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Per-parameter moment buffers, indexed like the model's parameter registry.
/// Buffers stay empty until a parameter is first updated. `updates` counts the
/// steps applied to each parameter and drives Adam's bias correction, so a
/// parameter unfrozen late starts its correction from one.
template <typename T>
struct OptimizerState {
  OptimizerConfig hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::vector<std::uint64_t> updates;

  OptimizerState() = default;
  explicit OptimizerState(OptimizerConfig config) : hyper(config) {}
};

struct LrSchedule {
  std::vector<double> per_group_lrs;
  LrDirection direction = LrDirection::early_low;

  /// Throws ConfigError unless rates are positive and monotone in `direction`.
  void validate() const;
  std::size_t groups() const noexcept { return per_group_lrs.size(); }

  static LrSchedule constant(double lr, std::size_t groups);
};

/// Geometric spread of rates between lr_min and lr_max over `groups` layer groups:
/// lr_i = lr_min * (lr_max / lr_min)^(i / (groups - 1)), reversed for early_high.
/// A single group gets lr_max.
LrSchedule discriminative_lrs(double lr_min, double lr_max, std::size_t groups,
                              LrDirection direction = LrDirection::early_low);

/// Applies one update to every trainable parameter using the rate of its group,
/// then clears all gradients. Frozen parameters are never written.
template <typename T>
void step(std::span<Parameter<T>> params, OptimizerState<T>& state, const LrSchedule& schedule);

template <typename T>
void step(ResNet<T>& model, OptimizerState<T>& state, const LrSchedule& schedule) {
  if (schedule.groups() != model.group_count()) {
    throw ConfigError("schedule has " + std::to_string(schedule.groups()) + " rates for " +
                      std::to_string(model.group_count()) + " layer groups");
  }
  step<T>(std::span<Parameter<T>>(model.parameters()), state, schedule);
}

}  // namespace leaffine
