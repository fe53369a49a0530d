#include "leaffine/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <type_traits>

namespace leaffine {

void ModelConfig::validate() const {
  if (stage_depths.empty()) throw ConfigError("model needs at least one stage");
  if (stage_depths.size() != stage_widths.size()) {
    throw ConfigError("stage_depths and stage_widths differ in length (" + std::to_string(stage_depths.size()) +
                      " vs " + std::to_string(stage_widths.size()) + ")");
  }
  for (std::size_t i = 0; i < stage_depths.size(); ++i) {
    if (stage_depths[i] == 0 || stage_widths[i] == 0) {
      throw ConfigError("stage " + std::to_string(i) + " has zero depth or width");
    }
  }
  if (stem_width == 0 || input_channels == 0 || image_size == 0) {
    throw ConfigError("stem_width, input_channels and image_size must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  const std::size_t divisor = std::size_t{1} << (stage_depths.size() + 1);
  if (image_size % divisor != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by " +
                      std::to_string(divisor));
  }
}

std::size_t ModelConfig::feature_width() const {
  const std::size_t w = stage_widths.back();
  return block == BlockKind::bottleneck ? w * kBottleneckExpansion : w;
}

ModelConfig preset_config(std::string_view preset, std::size_t num_classes, std::size_t image_size) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.image_size = image_size;
  if (preset == "mini-basic" || preset == "mini-bottleneck") {
    c.block = preset == "mini-basic" ? BlockKind::basic : BlockKind::bottleneck;
    c.stage_depths = {2, 2, 2};
    c.stage_widths = {16, 32, 64};
    c.stem_width = 16;
    c.stem = StemKind::compact;
  } else if (preset == "resnet34" || preset == "resnet50") {
    c.block = preset == "resnet34" ? BlockKind::basic : BlockKind::bottleneck;
    c.stage_depths = {3, 4, 6, 3};
    c.stage_widths = {64, 128, 256, 512};
    c.stem_width = 64;
    c.stem = StemKind::canonical;
  } else {
    throw ConfigError("unknown model preset '" + std::string(preset) + "'");
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"mini-basic", "mini-bottleneck", "resnet34", "resnet50"}; }

template <typename T>
ResNet<T>::ResNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  if (c.stem == StemKind::compact) {
    stem_ = add_conv_unit("stem", c.input_channels, c.stem_width, 3, 1, 1, {-1, -1});
  } else {
    stem_ = add_conv_unit("stem", c.input_channels, c.stem_width, 7, 2, 3, {-1, -1});
  }
  std::size_t in = c.stem_width;
  for (std::size_t s = 0; s < c.stage_depths.size(); ++s) {
    const std::size_t width = c.stage_widths[s];
    const std::size_t out = c.block == BlockKind::bottleneck ? width * kBottleneckExpansion : width;
    for (std::size_t b = 0; b < c.stage_depths[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const Placement where{static_cast<int>(s), static_cast<int>(blocks_.size())};
      Block block;
      block.stage = s;
      if (c.block == BlockKind::basic) {
        block.body.push_back(add_conv_unit(prefix + ".unit1", in, width, 3, stride, 1, where));
        block.body.push_back(add_conv_unit(prefix + ".unit2", width, width, 3, 1, 1, where));
      } else {
        block.body.push_back(add_conv_unit(prefix + ".unit1", in, width, 1, 1, 0, where));
        block.body.push_back(add_conv_unit(prefix + ".unit2", width, width, 3, stride, 1, where));
        block.body.push_back(add_conv_unit(prefix + ".unit3", width, out, 1, 1, 0, where));
      }
      if (stride != 1 || in != out) {
        block.shortcut = add_conv_unit(prefix + ".shortcut", in, out, 1, stride, 0, where);
      }
      blocks_.push_back(std::move(block));
      in = out;
    }
  }
  head_weight_ = add_param("head.weight", Shape{c.num_classes, in}, ParamRole::head_weight, T(0), {-2, -1});
  head_bias_ = add_param("head.bias", Shape{c.num_classes}, ParamRole::head_bias, T(0), {-2, -1});
  for (std::size_t k = 0; k < c.num_classes; ++k) class_names_.push_back("class_" + std::to_string(k));
  init_params(seed);
  assign_layer_groups(kDefaultLayerGroups);
}

template <typename T>
typename ResNet<T>::ConvUnit ResNet<T>::add_conv_unit(const std::string& prefix, std::size_t in, std::size_t out,
                                                      std::size_t kernel, std::size_t stride, std::size_t pad,
                                                      Placement where) {
  ConvUnit u;
  u.weight = add_param(prefix + ".conv.weight", Shape{out, in, kernel, kernel}, ParamRole::conv_weight, T(0), where);
  u.stride = stride;
  u.pad = pad;
  NormLayer<T> norm;
  norm.name = prefix + ".norm";
  norm.gamma = add_param(norm.name + ".gamma", Shape{out}, ParamRole::norm_gamma, T(1), where);
  norm.beta = add_param(norm.name + ".beta", Shape{out}, ParamRole::norm_beta, T(0), where);
  norm.stats = RunningStats<T>(out);
  u.norm = norms_.size();
  norms_.push_back(std::move(norm));
  return u;
}

template <typename T>
std::size_t ResNet<T>::add_param(std::string name, Shape shape, ParamRole role, T fill, Placement where) {
  Parameter<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(std::move(shape), fill);
  p.role = role;
  params_.push_back(std::move(p));
  placement_.push_back(where);
  return params_.size() - 1;
}

template <typename T>
Parameter<T>& ResNet<T>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& ResNet<T>::parameter(std::string_view name) const {
  return const_cast<ResNet&>(*this).parameter(name);
}

template <typename T>
std::size_t ResNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ResNet<T>::set_class_names(std::vector<std::string> names) {
  if (names.size() != config_.num_classes) {
    throw ConfigError(std::to_string(names.size()) + " class names for " + std::to_string(config_.num_classes) +
                      " classes");
  }
  class_names_ = std::move(names);
}

template <typename T>
void ResNet<T>::init_param(std::size_t index, std::uint64_t seed) {
  Parameter<T>& p = params_[index];
  switch (p.role) {
    case ParamRole::norm_gamma:
      std::fill(p.value.storage().begin(), p.value.storage().end(), T(1));
      return;
    case ParamRole::norm_beta:
    case ParamRole::head_bias:
      std::fill(p.value.storage().begin(), p.value.storage().end(), T(0));
      return;
    case ParamRole::conv_weight:
    case ParamRole::head_weight:
      break;
  }
  // He normal: std = sqrt(2 / fan_in); one stream per (seed, tensor name).
  const auto& s = p.value.shape();
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
  std::uint64_t name_hash = 1469598103934665603ULL;
  for (unsigned char ch : p.name) name_hash = (name_hash ^ ch) * 1099511628211ULL;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(name_hash), static_cast<std::uint32_t>(name_hash >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : p.value.storage()) v = static_cast<T>(normal(rng));
}

template <typename T>
void ResNet<T>::init_params(std::uint64_t seed) {
  for (std::size_t i = 0; i < params_.size(); ++i) init_param(i, seed);
  for (auto& n : norms_) n.stats = RunningStats<T>(n.stats.mean.size());
}

template <typename T>
void ResNet<T>::replace_head(std::size_t num_classes, std::vector<std::string> class_names, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("replacement head needs at least 2 classes");
  if (class_names.size() != num_classes) {
    throw ConfigError(std::to_string(class_names.size()) + " class names for a " + std::to_string(num_classes) +
                      "-class head");
  }
  const std::size_t features = config_.feature_width();
  config_.num_classes = num_classes;
  params_[head_weight_].value = Tensor<T>(Shape{num_classes, features});
  params_[head_bias_].value = Tensor<T>(Shape{num_classes});
  for (std::size_t i : {head_weight_, head_bias_}) {
    init_param(i, seed);
    params_[i].group = groups_ - 1;
    params_[i].trainable = true;
  }
  class_names_ = std::move(class_names);
}

template <typename T>
void ResNet<T>::assign_layer_groups(std::size_t groups) {
  if (groups == 0) throw ConfigError("layer group count must be at least 1");
  if (groups > params_.size()) {
    throw ConfigError("cannot split " + std::to_string(params_.size()) + " parameter tensors into " +
                      std::to_string(groups) + " groups");
  }
  std::vector<std::size_t> assignment(params_.size(), 0);
  if (groups > 1) {
    const std::size_t chunks = groups - 1;
    const std::size_t stages = config_.stage_depths.size();
    // Unit of each backbone tensor: stages when they suffice, else blocks, else tensors.
    // The stem always shares the first unit.
    std::vector<std::size_t> unit(params_.size(), 0);
    std::size_t units = 0;
    const std::size_t backbone = params_.size() - 2;
    if (chunks <= stages) {
      units = stages;
      for (std::size_t i = 0; i < backbone; ++i) unit[i] = static_cast<std::size_t>(std::max(placement_[i].stage, 0));
    } else if (chunks <= blocks_.size()) {
      units = blocks_.size();
      for (std::size_t i = 0; i < backbone; ++i) unit[i] = static_cast<std::size_t>(std::max(placement_[i].block, 0));
    } else if (chunks <= backbone) {
      units = backbone;
      for (std::size_t i = 0; i < backbone; ++i) unit[i] = i;
    } else {
      throw ConfigError("cannot split " + std::to_string(backbone) + " backbone tensors into " +
                        std::to_string(chunks) + " groups");
    }
    // Even split of units into chunks; earlier chunks take the remainder.
    std::vector<std::size_t> chunk_of(units);
    const std::size_t base = units / chunks, extra = units % chunks;
    std::size_t u = 0;
    for (std::size_t ch = 0; ch < chunks; ++ch) {
      const std::size_t len = base + (ch < extra ? 1 : 0);
      for (std::size_t k = 0; k < len; ++k) chunk_of[u++] = ch;
    }
    for (std::size_t i = 0; i < backbone; ++i) assignment[i] = chunk_of[unit[i]];
    assignment[head_weight_] = groups - 1;
    assignment[head_bias_] = groups - 1;
  }
  set_group_map(groups, assignment);
}

template <typename T>
void ResNet<T>::set_group_map(std::size_t groups, const std::vector<std::size_t>& assignment) {
  if (groups == 0 || assignment.size() != params_.size()) {
    throw ConfigError("group map does not match the parameter registry");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (assignment[i] >= groups) throw ConfigError("group id out of range for '" + params_[i].name + "'");
    if (i > 0 && assignment[i] < assignment[i - 1]) throw ConfigError("layer groups must be contiguous");
    params_[i].group = assignment[i];
  }
  groups_ = groups;
  std::set<std::size_t> kept;
  for (auto gid : frozen_) {
    if (gid < groups_) kept.insert(gid);
  }
  frozen_ = std::move(kept);
  apply_freeze();
}

template <typename T>
std::vector<std::size_t> ResNet<T>::group_sizes() const {
  std::vector<std::size_t> sizes(groups_, 0);
  for (const auto& p : params_) ++sizes[p.group];
  return sizes;
}

template <typename T>
void ResNet<T>::set_norm_momentum(double momentum) {
  if (!(momentum > 0.0 && momentum <= 1.0)) throw ConfigError("norm momentum must lie in (0, 1]");
  norm_momentum_ = momentum;
}

template <typename T>
void ResNet<T>::set_frozen(const std::set<std::size_t>& frozen_groups, bool train_bn) {
  for (auto gid : frozen_groups) {
    if (gid >= groups_) {
      throw ConfigError("cannot freeze group " + std::to_string(gid) + ": model has " + std::to_string(groups_) +
                        " groups");
    }
  }
  frozen_ = frozen_groups;
  train_bn_ = train_bn;
  apply_freeze();
}

template <typename T>
void ResNet<T>::apply_freeze() {
  for (auto& p : params_) {
    const bool frozen = frozen_.count(p.group) > 0;
    const bool norm = p.role == ParamRole::norm_gamma || p.role == ParamRole::norm_beta;
    p.trainable = !frozen || (norm && train_bn_);
  }
  for (auto& n : norms_) n.frozen_stats = frozen_.count(params_[n.gamma].group) > 0 && !train_bn_;
}

template <typename T>
template <typename Self>
Var ResNet<T>::forward_impl(Self& self, Graph<T>& g, Var x, Mode mode) {
  constexpr bool kMutable = !std::is_const_v<Self>;
  const Shape& xs = g.shape(x);
  if (xs.size() != 4 || xs[1] != self.config_.input_channels) {
    throw DimensionError("model expects N x " + std::to_string(self.config_.input_channels) +
                         " x H x W input, got " + to_string(xs));
  }
  auto bind = [&](std::size_t index) {
    auto& p = self.params_[index];
    if constexpr (kMutable) {
      return g.parameter(p.value, mode == Mode::train && p.trainable);
    } else {
      return g.constant(p.value);
    }
  };
  auto conv_unit = [&](const ConvUnit& u, Var in) {
    Var y = conv2d(g, in, bind(u.weight), std::nullopt, Conv2dOptions{u.stride, u.pad});
    auto& norm = self.norms_[u.norm];
    Var gamma = bind(norm.gamma);
    Var beta = bind(norm.beta);
    if constexpr (kMutable) {
      if (mode == Mode::train && !norm.frozen_stats) {
        return batch_norm2d(g, y, gamma, beta, norm.stats,
                            BatchNormOptions{NormMode::training, self.norm_momentum_, kBatchNormEps});
      }
    }
    return batch_norm2d_inference(g, y, gamma, beta, norm.stats, kBatchNormEps);
  };

  Var h = relu(g, conv_unit(self.stem_, x));
  if (self.config_.stem == StemKind::canonical) h = max_pool2d(g, h, PoolOptions{3, 2, 1});
  for (const Block& block : self.blocks_) {
    Var y = h;
    for (std::size_t i = 0; i < block.body.size(); ++i) {
      y = conv_unit(block.body[i], y);
      if (i + 1 < block.body.size()) y = relu(g, y);
    }
    Var skip = block.shortcut ? conv_unit(*block.shortcut, h) : h;
    h = relu(g, residual_add(g, y, skip));
  }
  Var pooled = global_avg_pool(g, h);
  return linear(g, pooled, bind(self.head_weight_), bind(self.head_bias_));
}

template <typename T>
Var ResNet<T>::forward(Graph<T>& g, Var x, Mode mode) {
  return forward_impl(*this, g, x, mode);
}

template <typename T>
Var ResNet<T>::infer(Graph<T>& g, Var x) const {
  return forward_impl(*this, g, x, Mode::eval);
}

template <typename T>
std::uint64_t parameter_hash(const ResNet<T>& model, const std::set<std::size_t>& groups) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  };
  auto selected = [&](std::size_t group) { return groups.empty() || groups.count(group) > 0; };
  const auto& params = model.parameters();
  for (const auto& p : params) {
    if (!selected(p.group)) continue;
    mix(p.name.data(), p.name.size());
    mix(p.value.data().data(), p.value.size() * sizeof(T));
  }
  for (const auto& n : model.norm_layers()) {
    if (!selected(params[n.gamma].group)) continue;
    mix(n.name.data(), n.name.size());
    mix(n.stats.mean.data().data(), n.stats.mean.size() * sizeof(T));
    mix(n.stats.var.data().data(), n.stats.var.size() * sizeof(T));
  }
  return h;
}

template class ResNet<float>;
template class ResNet<double>;
template std::uint64_t parameter_hash<float>(const ResNet<float>&, const std::set<std::size_t>&);
template std::uint64_t parameter_hash<double>(const ResNet<double>&, const std::set<std::size_t>&);

}  // namespace leaffine
