#include <doctest.h>

#include <cmath>
#include <random>

#include "leaffine/gradcheck.hpp"
#include "leaffine/model.hpp"
#include "leaffine/optimizer.hpp"
#include "oracles.hpp"

using namespace leaffine;

namespace {

// Parameter count written out from the architecture table: convs carry no bias,
// every conv is followed by a norm with gamma and beta, projection shortcuts appear
// where the spatial size or the width changes.
std::size_t shape_sum(const ModelConfig& c) {
  const bool bottleneck = c.block == BlockKind::bottleneck;
  const std::size_t k = c.stem == StemKind::canonical ? 7 : 3;
  std::size_t total = k * k * c.input_channels * c.stem_width + 2 * c.stem_width;
  std::size_t in = c.stem_width;
  for (std::size_t s = 0; s < c.stage_depths.size(); ++s) {
    const std::size_t w = c.stage_widths[s];
    const std::size_t out = bottleneck ? 4 * w : w;
    for (std::size_t b = 0; b < c.stage_depths[s]; ++b) {
      const bool downsample = b == 0 && s > 0;
      if (bottleneck) {
        total += in * w + 2 * w;          // 1x1 reduce
        total += 9 * w * w + 2 * w;       // 3x3
        total += w * out + 2 * out;       // 1x1 expand
      } else {
        total += 9 * in * w + 2 * w;
        total += 9 * w * w + 2 * w;
      }
      if (downsample || in != out) total += in * out + 2 * out;
      in = out;
    }
  }
  return total + in * c.num_classes + c.num_classes;
}

Tensor<float> random_batch(std::size_t n, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tensor_cast<float>(testing::random_tensor({n, 3, s, s}, rng));
}

Tensor<float> eval_logits(const Model& m, const Tensor<float>& x) {
  Graph<float> g;
  return g.value(m.infer(g, g.constant(x)));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("mini-basic shape contract") {
  Model m(preset_config("mini-basic", 4, 32), 1);
  const auto x = random_batch(2, 32, 3);
  CHECK(eval_logits(m, x).shape() == Shape{2, 4});
  Graph<float> g;
  CHECK(g.shape(m.forward(g, g.input(x), Mode::train)) == Shape{2, 4});
}

TEST_CASE("full presets match the canonical architecture tables") {
  const Model r34(preset_config("resnet34", 1000, 224), 0);
  CHECK(r34.block_count() == 16);
  CHECK(r34.parameter_count() == shape_sum(r34.config()));
  CHECK(r34.parameter_count() == 21797672);

  const Model r50(preset_config("resnet50", 1000, 224), 0);
  CHECK(r50.block_count() == 16);
  CHECK(r50.parameter_count() == shape_sum(r50.config()));
  CHECK(r50.parameter_count() == 25557032);

  for (const char* name : {"mini-basic", "mini-bottleneck"}) {
    const Model m(preset_config(name, 8, 64), 0);
    CHECK(m.block_count() == 6);
    CHECK(m.parameter_count() == shape_sum(m.config()));
  }
  CHECK_THROWS_AS(preset_config("resnet18", 10, 64), ConfigError);
}

TEST_CASE("forward shape contract across presets and batch sizes") {
  for (const auto& name : preset_names()) {
    const bool full = name.rfind("resnet", 0) == 0;
    const std::size_t size = full ? 64 : 32;
    const Model m(preset_config(name, 5, size), 2);
    for (std::size_t n : {1, 2, 64}) {
      INFO(name << " batch " << n);
      CHECK(eval_logits(m, random_batch(n, size, n)).shape() == Shape{n, 5});
    }
  }
  const Model r50(preset_config("resnet50", 15, 224), 2);
  CHECK(eval_logits(r50, random_batch(1, 224, 9)).shape() == Shape{1, 15});
}

TEST_CASE("config validation") {
  ModelConfig c = preset_config("mini-basic", 4, 32);
  c.image_size = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.image_size = 32;
  c.num_classes = 1;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
  c = preset_config("mini-basic", 4, 32);
  c.stage_widths.pop_back();
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
}

TEST_CASE("initialization is deterministic and He-scaled") {
  const Model a(preset_config("mini-basic", 4, 32), 7), b(preset_config("mini-basic", 4, 32), 7);
  const Model other(preset_config("mini-basic", 4, 32), 8);
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].name == b.parameters()[i].name);
    CHECK(a.parameters()[i].value == b.parameters()[i].value);
  }
  CHECK(parameter_hash(a) == parameter_hash(b));
  CHECK(parameter_hash(a) != parameter_hash(other));

  for (const auto& p : a.parameters()) {
    if (p.role == ParamRole::norm_gamma) {
      for (float v : p.value.data()) CHECK(v == 1.0f);
    }
    if (p.role == ParamRole::norm_beta || p.role == ParamRole::head_bias) {
      for (float v : p.value.data()) CHECK(v == 0.0f);
    }
  }
  for (const auto& n : a.norm_layers()) {
    for (float v : n.stats.mean.data()) CHECK(v == 0.0f);
    for (float v : n.stats.var.data()) CHECK(v == 1.0f);
  }

  const Model r34(preset_config("resnet34", 10, 64), 3);
  const auto& w = r34.parameter("stage1.block1.unit1.conv.weight").value;
  REQUIRE(w.shape() == Shape{64, 64, 3, 3});
  double s = 0.0, ss = 0.0;
  for (float v : w.data()) {
    s += v;
    ss += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  CHECK(std::abs(sd - std::sqrt(2.0 / 576.0)) < 0.1 * std::sqrt(2.0 / 576.0));
}

TEST_CASE("head replacement keeps the backbone bytes") {
  Model m(preset_config("mini-basic", 4, 32), 1);
  const auto x = random_batch(2, 32, 4);
  const auto before = parameter_hash(m, {0, 1});
  m.set_frozen({0, 1});
  std::vector<std::string> names;
  for (int i = 0; i < 15; ++i) names.push_back("c" + std::to_string(i));
  m.replace_head(15, names, 99);
  CHECK(parameter_hash(m, {0, 1}) == before);
  CHECK(m.parameter("head.weight").value.shape() == Shape{15, m.config().feature_width()});
  CHECK(m.parameter("head.weight").group == m.group_count() - 1);
  CHECK(m.parameter("head.weight").trainable);
  CHECK(m.class_names() == names);
  CHECK(eval_logits(m, x).shape() == Shape{2, 15});
  CHECK_THROWS_AS(m.replace_head(1, {"x"}, 1), ConfigError);
  CHECK_THROWS_AS(m.replace_head(3, {"a", "b"}, 1), ConfigError);
}

TEST_CASE("layer groups") {
  Model m(preset_config("mini-basic", 4, 32), 1);
  const std::size_t tensors = m.parameters().size();
  for (std::size_t g = 1; g <= 4; ++g) {
    m.assign_layer_groups(g);
    const auto sizes = m.group_sizes();
    REQUIRE(sizes.size() == g);
    std::size_t total = 0;
    for (auto s : sizes) {
      CHECK(s > 0);
      total += s;
    }
    CHECK(total == tensors);
    // Contiguous in forward order.
    for (std::size_t i = 1; i < tensors; ++i) CHECK(m.parameters()[i].group >= m.parameters()[i - 1].group);
  }
  m.assign_layer_groups(1);
  for (const auto& p : m.parameters()) CHECK(p.group == 0);
  m.assign_layer_groups(3);
  CHECK(m.parameter("stem.conv.weight").group == 0);
  CHECK(m.parameter("stage2.block1.unit2.conv.weight").group == 0);
  CHECK(m.parameter("stage3.block0.unit1.conv.weight").group == 1);
  CHECK(m.parameter("head.weight").group == 2);
  CHECK(m.parameter("head.bias").group == 2);
  m.assign_layer_groups(8);
  CHECK(m.group_count() == 8);
  CHECK_THROWS_AS(m.assign_layer_groups(0), ConfigError);
  CHECK_THROWS_AS(m.assign_layer_groups(tensors + 1), ConfigError);
}

TEST_CASE("freezing marks parameters and survives optimizer steps") {
  Model m(preset_config("mini-basic", 4, 32), 1);
  m.set_frozen({0, 1});
  for (const auto& p : m.parameters()) CHECK(p.trainable == (p.group == 2));
  const auto frozen_hash = parameter_hash(m, {0, 1});
  const auto head_hash = parameter_hash(m, {2});

  OptimizerState<float> state;
  const auto schedule = LrSchedule::constant(1e-2, 3);
  std::vector<int> labels{0, 1, 2, 3};
  for (int it = 0; it < 10; ++it) {
    Graph<float> g;
    Var loss = softmax_cross_entropy(g, m.forward(g, g.input(random_batch(4, 32, 100 + it)), Mode::train),
                                     std::span<const int>(labels));
    g.backward(loss);
    step(m, state, schedule);
  }
  CHECK(parameter_hash(m, {0, 1}) == frozen_hash);
  CHECK(parameter_hash(m, {2}) != head_hash);

  m.set_frozen({});
  for (const auto& p : m.parameters()) CHECK(p.trainable);
  CHECK_THROWS_AS(m.set_frozen({3}), ConfigError);
}

TEST_CASE("train_bn keeps frozen norm layers live") {
  Model m(preset_config("mini-basic", 4, 32), 1);
  m.set_frozen({0, 1}, true);
  std::size_t trainable_gamma = 0;
  for (const auto& p : m.parameters()) {
    if (p.role == ParamRole::norm_gamma && p.group < 2) trainable_gamma += p.trainable ? 1 : 0;
    if (p.role == ParamRole::conv_weight) CHECK_FALSE(p.trainable);
  }
  CHECK(trainable_gamma > 0);
  for (const auto& n : m.norm_layers()) CHECK_FALSE(n.frozen_stats);

  m.set_frozen({0, 1}, false);
  for (const auto& n : m.norm_layers()) CHECK(n.frozen_stats);
  const auto stats_hash = parameter_hash(m, {0, 1});
  Graph<float> g;
  m.forward(g, g.input(random_batch(4, 32, 5)), Mode::train);
  CHECK(parameter_hash(m, {0, 1}) == stats_hash);
}

TEST_CASE("zeroed residual branches reduce blocks to their skip path") {
  Model m(preset_config("mini-basic", 4, 32), 3);
  // Give the running statistics non-trivial values first.
  for (int i = 0; i < 3; ++i) {
    Graph<float> g;
    m.forward(g, g.input(random_batch(4, 32, 20 + i)), Mode::train);
  }
  for (auto& p : m.parameters()) {
    if (p.name.find(".unit2.norm.") != std::string::npos) std::fill(p.value.data().begin(), p.value.data().end(), 0.0f);
  }
  const auto x = random_batch(2, 32, 6);
  const auto logits = eval_logits(m, x);

  Graph<float> g;
  auto norm = [&](Var v, const std::string& name) {
    const NormLayer<float>* layer = nullptr;
    for (const auto& n : m.norm_layers()) {
      if (n.name == name) layer = &n;
    }
    REQUIRE(layer != nullptr);
    return batch_norm2d_inference(g, v, g.constant(m.parameter(name + ".gamma").value),
                                  g.constant(m.parameter(name + ".beta").value), layer->stats);
  };
  auto param = [&](const std::string& name) { return g.constant(m.parameter(name).value); };
  Var h = relu(g, norm(conv2d(g, g.constant(x), param("stem.conv.weight"), std::nullopt, {1, 1}), "stem.norm"));
  for (int stage = 1; stage <= 3; ++stage) {
    for (int block = 0; block < 2; ++block) {
      const std::string prefix = "stage" + std::to_string(stage) + ".block" + std::to_string(block);
      if (block == 0 && stage > 1) {
        h = norm(conv2d(g, h, param(prefix + ".shortcut.conv.weight"), std::nullopt, {2, 0}), prefix + ".shortcut.norm");
      }
      h = relu(g, h);
    }
  }
  Var out = linear(g, global_avg_pool(g, h), param("head.weight"), param("head.bias"));
  REQUIRE(g.shape(out) == logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(g.value(out)[i] == doctest::Approx(logits[i]).epsilon(1e-5));
}

TEST_CASE("whole-network gradients agree with finite differences in 64-bit mode") {
  ModelConfig c = preset_config("mini-basic", 3, 16);
  c.stage_widths = {4, 6, 8};
  c.stem_width = 4;
  c.stage_depths = {1, 1, 1};
  ResNet<double> m(c, 5);
  std::mt19937_64 rng(7);
  const auto x = testing::random_tensor({3, 3, 16, 16}, rng);
  std::vector<int> labels{0, 2, 1};
  for (const char* name : {"stage2.block0.shortcut.conv.weight", "stage3.block0.unit2.norm.gamma", "head.weight"}) {
    INFO(name);
    auto& target = m.parameter(name).value;
    std::function<Var(Graph<double>&)> f = [&](Graph<double>& g) {
      return softmax_cross_entropy(g, m.forward(g, g.input(x), Mode::train), std::span<const int>(labels));
    };
    CHECK(finite_diff_report<double>(f, target, 1e-5).max_rel_error <= 1e-5);
    for (auto& p : m.parameters()) p.value.clear_grad();
  }
}

}  // TEST_SUITE
