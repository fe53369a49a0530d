#include "leaffine/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <type_traits>

#include "leaffine/error.hpp"
#include "leaffine/io.hpp"
#include "leaffine/model.hpp"

namespace leaffine {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object, keeping defaults for absent keys and
// rejecting keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  bool get(const char* key, T& out) {
    const json* v = find(key);
    if (!v) return false;
    out = as<T>(*v, where_ + "." + key);
    return true;
  }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }

  const std::string& where() const { return where_; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where_ + "." + key + "'");
    }
  }

  template <typename T>
  static T as(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(where + " must be a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (!v.is_string()) throw ConfigError(where + " must be a path string");
      return std::filesystem::path(v.get<std::string>());
    } else {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      return v.get<std::string>();
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_synthetic(const json& j, const std::string& where, SyntheticSpec& s) {
  Fields f(j, where);
  f.get("classes", s.classes);
  f.get("per_class", s.per_class);
  f.get("image_size", s.image_size);
  f.get("first_motif", s.first_motif);
  f.finish();
}

json synthetic_to_config(const SyntheticSpec& s) {
  return {{"classes", s.classes}, {"per_class", s.per_class}, {"image_size", s.image_size}, {"first_motif", s.first_motif}};
}

LrSpec read_lr(const json& v, const std::string& where) {
  if (v.is_number()) return LrSpec::fixed(v.get<double>());
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return LrSpec::slice(v[0].get<double>(), v[1].get<double>());
  }
  throw ConfigError(where + " must be a number or a [min, max] pair");
}

json lr_to_json(const LrSpec& lr) {
  if (lr.sliced) return json::array({lr.lr_min, lr.lr_max});
  return lr.lr_max;
}

void read_phase(const json& j, const std::string& where, PhaseConfig& p) {
  Fields f(j, where);
  f.get("epochs", p.epochs);
  if (const json* v = f.find("lr")) p.lr = read_lr(*v, where + ".lr");
  if (const json* v = f.find("frozen_groups")) {
    if (!v->is_array()) throw ConfigError(where + ".frozen_groups must be an array");
    p.frozen_groups.clear();
    for (const auto& g : *v) p.frozen_groups.insert(Fields::as<std::size_t>(g, where + ".frozen_groups[]"));
  }
  f.get("batch_size", p.batch_size);
  f.get("train_bn", p.train_bn);
  std::string direction;
  if (f.get("direction", direction)) p.direction = parse_lr_direction(direction);
  f.finish();
}

json phase_to_json(const PhaseConfig& p) {
  return {{"epochs", p.epochs},
          {"lr", lr_to_json(p.lr)},
          {"frozen_groups", json(std::vector<std::size_t>(p.frozen_groups.begin(), p.frozen_groups.end()))},
          {"batch_size", p.batch_size},
          {"train_bn", p.train_bn},
          {"direction", to_string(p.direction)}};
}

void read_augment(const json& j, AugmentConfig& a) {
  Fields f(j, "augment");
  f.get("enabled", a.enabled);
  f.get("hflip_prob", a.hflip_prob);
  f.get("max_rotate_deg", a.max_rotate_deg);
  f.get("warp_magnitude", a.warp_magnitude);
  f.get("zoom_min", a.zoom_min);
  f.get("zoom_max", a.zoom_max);
  f.finish();
}

void read_optimizer(const json& j, OptimizerConfig& o) {
  Fields f(j, "optimizer");
  std::string rule;
  if (f.get("rule", rule)) o.rule = parse_update_rule(rule);
  f.get("beta1", o.beta1);
  f.get("beta2", o.beta2);
  f.get("eps", o.eps);
  f.get("weight_decay", o.weight_decay);
  f.get("momentum", o.momentum);
  f.finish();
}

void validate_optimizer(const OptimizerConfig& o) {
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw ConfigError("optimizer eps must be positive");
  if (!(o.weight_decay >= 0.0)) throw ConfigError("optimizer weight_decay must be non-negative");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError("optimizer momentum must lie in [0, 1)");
}

}  // namespace

std::filesystem::path RunConfig::target_root() const {
  return data.root.empty() ? out_dir / "data" / "target" : data.root;
}

std::filesystem::path RunConfig::source_root() const {
  if (pretrain && !pretrain->root.empty()) return pretrain->root;
  return out_dir / "data" / "source";
}

SyntheticSpec RunConfig::target_spec() const {
  SyntheticSpec s = data.synthetic.value_or(SyntheticSpec{});
  s.seed = seed;
  return s;
}

SyntheticSpec RunConfig::source_spec() const {
  SyntheticSpec s = pretrain ? pretrain->source : PretrainConfig{}.source;
  s.seed = seed;
  return s;
}

void RunConfig::validate() const {
  namespace fs = std::filesystem;
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (fs::exists(out_dir) && !fs::is_directory(out_dir)) {
    throw ConfigError("out_dir '" + out_dir.string() + "' exists and is not a directory");
  }
  if (!(data.valid_fraction > 0.0 && data.valid_fraction < 1.0)) {
    throw ConfigError("data.valid_fraction must lie in (0, 1)");
  }
  if (data.synthetic) {
    target_spec().validate();
  } else {
    if (data.root.empty()) throw ConfigError("data needs a root directory or a synthetic spec");
    if (!fs::is_directory(data.root)) throw ConfigError("data.root '" + data.root.string() + "' is not a directory");
  }
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), model_preset) == names.end()) {
    throw ConfigError("unknown model preset '" + model_preset + "'");
  }
  preset_config(model_preset, 2, image_size);
  if (!init_checkpoint.empty()) {
    if (pretrain) throw ConfigError("model.init_checkpoint and pretrain are mutually exclusive");
    if (!fs::is_regular_file(init_checkpoint)) {
      throw ConfigError("model.init_checkpoint '" + init_checkpoint.string() + "' is not a file");
    }
  }
  if (pretrain) {
    source_spec().validate();
    if (pretrain->epochs == 0) throw ConfigError("pretrain.epochs must be positive");
    if (pretrain->batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
    if (!(pretrain->lr > 0.0) || !std::isfinite(pretrain->lr)) throw ConfigError("pretrain.lr must be positive");
  }
  augment.validate();
  if (normalization != "imagenet" && normalization != "dataset") {
    throw ConfigError("normalization must be 'imagenet' or 'dataset'");
  }
  recipe.validate();
  validate_optimizer(recipe.optimizer);
  lr_finder.options.validate();
  if (lr_finder.phase != "A" && lr_finder.phase != "B") throw ConfigError("lr_finder.phase must be 'A' or 'B'");
  if (top_losses == 0) throw ConfigError("top_losses must be positive");
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Fields f(j, "config");
  if (const json* d = f.find("data")) {
    Fields df(*d, "data");
    df.get("root", c.data.root);
    if (const json* s = df.find("synthetic")) {
      if (s->is_null()) {
        c.data.synthetic.reset();
      } else {
        SyntheticSpec spec;
        read_synthetic(*s, "data.synthetic", spec);
        c.data.synthetic = spec;
      }
    } else if (!c.data.root.empty()) {
      c.data.synthetic.reset();
    }
    df.get("valid_fraction", c.data.valid_fraction);
    df.finish();
  }
  if (const json* m = f.find("model")) {
    Fields mf(*m, "model");
    mf.get("preset", c.model_preset);
    mf.get("init_checkpoint", c.init_checkpoint);
    mf.finish();
    if (!c.init_checkpoint.empty() && !f.has("pretrain")) c.pretrain.reset();
  }
  if (const json* p = f.find("pretrain")) {
    if (p->is_null()) {
      c.pretrain.reset();
    } else {
      PretrainConfig pc;
      Fields pf(*p, "pretrain");
      if (const json* s = pf.find("source")) read_synthetic(*s, "pretrain.source", pc.source);
      pf.get("root", pc.root);
      pf.get("epochs", pc.epochs);
      pf.get("lr", pc.lr);
      pf.get("batch_size", pc.batch_size);
      pf.finish();
      c.pretrain = pc;
    }
  }
  f.get("seed", c.seed);
  f.get("image_size", c.image_size);
  if (const json* a = f.find("augment")) read_augment(*a, c.augment);
  f.get("normalization", c.normalization);
  f.get("layer_groups", c.recipe.layer_groups);
  f.get("recalibrate_norms", c.recipe.recalibrate_norms);
  if (const json* o = f.find("optimizer")) read_optimizer(*o, c.recipe.optimizer);
  if (const json* p = f.find("phase_a")) read_phase(*p, "phase_a", c.recipe.phase_a);
  if (const json* p = f.find("phase_b")) read_phase(*p, "phase_b", c.recipe.phase_b);
  if (const json* l = f.find("lr_finder")) {
    Fields lf(*l, "lr_finder");
    lf.get("enabled", c.lr_finder.enabled);
    lf.get("phase", c.lr_finder.phase);
    lf.get("lr_start", c.lr_finder.options.lr_start);
    lf.get("lr_end", c.lr_finder.options.lr_end);
    lf.get("max_iters", c.lr_finder.options.max_iters);
    lf.get("smoothing", c.lr_finder.options.smoothing);
    lf.get("stop_factor", c.lr_finder.options.stop_factor);
    lf.finish();
  }
  f.get("top_losses", c.top_losses);
  f.get("gnuplot", c.gnuplot);
  f.get("out_dir", c.out_dir);
  f.finish();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  json data = {{"root", c.data.root.generic_string()},
               {"synthetic", c.data.synthetic ? synthetic_to_config(*c.data.synthetic) : json(nullptr)},
               {"valid_fraction", c.data.valid_fraction}};
  json pretrain = nullptr;
  if (c.pretrain) {
    pretrain = {{"source", synthetic_to_config(c.pretrain->source)},
                {"root", c.pretrain->root.generic_string()},
                {"epochs", c.pretrain->epochs},
                {"lr", c.pretrain->lr},
                {"batch_size", c.pretrain->batch_size}};
  }
  const auto& a = c.augment;
  const auto& o = c.recipe.optimizer;
  const auto& l = c.lr_finder;
  return {{"data", data},
          {"model", {{"preset", c.model_preset}, {"init_checkpoint", c.init_checkpoint.generic_string()}}},
          {"pretrain", pretrain},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"augment",
           {{"enabled", a.enabled},
            {"hflip_prob", a.hflip_prob},
            {"max_rotate_deg", a.max_rotate_deg},
            {"warp_magnitude", a.warp_magnitude},
            {"zoom_min", a.zoom_min},
            {"zoom_max", a.zoom_max}}},
          {"normalization", c.normalization},
          {"layer_groups", c.recipe.layer_groups},
          {"recalibrate_norms", c.recipe.recalibrate_norms},
          {"optimizer",
           {{"rule", to_string(o.rule)},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"momentum", o.momentum}}},
          {"phase_a", phase_to_json(c.recipe.phase_a)},
          {"phase_b", phase_to_json(c.recipe.phase_b)},
          {"lr_finder",
           {{"enabled", l.enabled},
            {"phase", l.phase},
            {"lr_start", l.options.lr_start},
            {"lr_end", l.options.lr_end},
            {"max_iters", l.options.max_iters},
            {"smoothing", l.options.smoothing},
            {"stop_factor", l.options.stop_factor}}},
          {"top_losses", c.top_losses},
          {"gnuplot", c.gnuplot},
          {"out_dir", c.out_dir.generic_string()}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config '" + path.string() + "' does not exist");
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const SyntheticSpec& s) {
  json j = synthetic_to_config(s);
  j["seed"] = s.seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  Fields f(j, "synthetic");
  f.get("classes", s.classes);
  f.get("per_class", s.per_class);
  f.get("image_size", s.image_size);
  f.get("first_motif", s.first_motif);
  f.get("seed", s.seed);
  f.finish();
  return s;
}

nlohmann::json to_json(const NormalizationPreset& p) {
  return {{"name", p.name}, {"mean", p.mean}, {"std", p.std}};
}

NormalizationPreset normalization_preset_from_json(const nlohmann::json& j) {
  try {
    NormalizationPreset p;
    p.name = j.at("name").get<std::string>();
    p.mean = j.at("mean").get<std::array<float, 3>>();
    p.std = j.at("std").get<std::array<float, 3>>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("normalization preset: ") + e.what());
  }
}

}  // namespace leaffine
