#include "leaffine/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace leaffine {

std::string to_string(UpdateRule rule) { return rule == UpdateRule::adam ? "adam" : "sgd"; }

std::string to_string(LrDirection direction) {
  return direction == LrDirection::early_low ? "early_low" : "early_high";
}

UpdateRule parse_update_rule(const std::string& text) {
  if (text == "adam") return UpdateRule::adam;
  if (text == "sgd") return UpdateRule::sgd;
  throw ConfigError("unknown optimizer rule '" + text + "' (expected adam or sgd)");
}

LrDirection parse_lr_direction(const std::string& text) {
  if (text == "early_low") return LrDirection::early_low;
  if (text == "early_high") return LrDirection::early_high;
  throw ConfigError("unknown lr direction '" + text + "' (expected early_low or early_high)");
}

void LrSchedule::validate() const {
  if (per_group_lrs.empty()) throw ConfigError("learning-rate schedule is empty");
  for (double lr : per_group_lrs) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be positive and finite");
  }
  for (std::size_t i = 1; i < per_group_lrs.size(); ++i) {
    const bool ok = direction == LrDirection::early_low ? per_group_lrs[i] >= per_group_lrs[i - 1]
                                                        : per_group_lrs[i] <= per_group_lrs[i - 1];
    if (!ok) throw ConfigError("learning rates are not monotone in direction " + to_string(direction));
  }
}

LrSchedule LrSchedule::constant(double lr, std::size_t groups) {
  LrSchedule s{std::vector<double>(groups, lr), LrDirection::early_low};
  s.validate();
  return s;
}

LrSchedule discriminative_lrs(double lr_min, double lr_max, std::size_t groups, LrDirection direction) {
  if (!(lr_min > 0.0) || !(lr_max > 0.0)) throw ConfigError("learning rates must be positive");
  if (lr_min > lr_max) throw ConfigError("lr_min must not exceed lr_max");
  if (groups == 0) throw ConfigError("need at least one layer group");
  LrSchedule s;
  s.direction = direction;
  if (groups == 1) {
    s.per_group_lrs = {lr_max};
    return s;
  }
  const double ratio = lr_max / lr_min;
  s.per_group_lrs.resize(groups);
  for (std::size_t i = 0; i < groups; ++i) {
    s.per_group_lrs[i] = lr_min * std::pow(ratio, static_cast<double>(i) / static_cast<double>(groups - 1));
  }
  s.per_group_lrs.front() = lr_min;
  s.per_group_lrs.back() = lr_max;
  if (direction == LrDirection::early_high) std::reverse(s.per_group_lrs.begin(), s.per_group_lrs.end());
  return s;
}

template <typename T>
void step(std::span<Parameter<T>> params, OptimizerState<T>& state, const LrSchedule& schedule) {
  const auto& h = state.hyper;
  for (const auto& p : params) {
    if (p.trainable && !p.value.has_grad()) throw StateError("trainable parameter '" + p.name + "' has no gradient");
    if (p.group >= schedule.groups()) {
      throw ConfigError("parameter '" + p.name + "' is in group " + std::to_string(p.group) + " but the schedule has " +
                        std::to_string(schedule.groups()) + " rates");
    }
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    state.updates.resize(params.size(), 0);
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) {
      p.value.clear_grad();
      continue;
    }
    const double lr = schedule.per_group_lrs[p.group];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.shape() != p.value.shape()) m = Tensor<T>(p.value.shape());
    const std::uint64_t t = ++state.updates[i];
    auto values = p.value.data();
    auto grads = p.value.grad();
    const double decay = 1.0 - lr * h.weight_decay;
    if (h.rule == UpdateRule::adam) {
      if (v.shape() != p.value.shape()) v = Tensor<T>(p.value.shape());
      const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double g = grads[k];
        const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * g;
        const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double update = (mk / c1) / (std::sqrt(vk / c2) + h.eps);
        values[k] = static_cast<T>(values[k] * decay - lr * update);
      }
    } else {
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double buf = h.momentum * m[k] + grads[k];
        m[k] = static_cast<T>(buf);
        values[k] = static_cast<T>(values[k] * decay - lr * buf);
      }
    }
    p.value.clear_grad();
  }
}

template void step<float>(std::span<Parameter<float>>, OptimizerState<float>&, const LrSchedule&);
template void step<double>(std::span<Parameter<double>>, OptimizerState<double>&, const LrSchedule&);

}  // namespace leaffine
