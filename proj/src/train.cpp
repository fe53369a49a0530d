#include "leaffine/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "leaffine/checkpoint.hpp"
#include "leaffine/error.hpp"
#include "leaffine/evaluate.hpp"
#include "leaffine/ops.hpp"

namespace leaffine {

namespace {

constexpr double kDivergenceLimit = 1e4;

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

LoaderOptions phase_loader(const TrainData& data, const PhaseConfig& phase, std::uint64_t seed) {
  LoaderOptions opts = data.loader;
  opts.batch_size = phase.batch_size;
  opts.seed = seed;
  return opts;
}

// One forward/backward/step on a batch; returns the batch loss.
double train_batch(Model& model, OptimizerState<float>& state, const LrSchedule& schedule, const Batch& batch) {
  Graph<float> g;
  const Var logits = model.forward(g, g.input(batch.images), Mode::train);
  const Var loss = softmax_cross_entropy(g, logits, std::span<const int>(batch.labels));
  const double value = static_cast<double>(g.value(loss)[0]);
  if (!std::isfinite(value) || value > kDivergenceLimit) return value;
  g.backward(loss);
  step(model, state, schedule);
  return value;
}

}  // namespace

void LrSpec::validate() const {
  if (!(lr_min >= 0.0) || !(lr_max >= 0.0) || !std::isfinite(lr_min) || !std::isfinite(lr_max)) {
    throw ConfigError("learning rates must be finite and non-negative");
  }
  if (lr_min > lr_max) throw ConfigError("lr slice needs lr_min <= lr_max");
  if (!sliced && lr_min != lr_max) throw ConfigError("a fixed learning rate has a single value");
  if (lr_min == 0.0 && lr_max != 0.0) throw ConfigError("a geometric lr slice cannot start at zero");
}

LrSchedule LrSpec::schedule(std::size_t groups, LrDirection direction) const {
  validate();
  if (zero()) return LrSchedule{std::vector<double>(groups, 0.0), direction};
  if (!sliced) return LrSchedule::constant(lr_max, groups);
  return discriminative_lrs(lr_min, lr_max, groups, direction);
}

void PhaseConfig::validate() const {
  if (epochs == 0) throw ConfigError("phase " + name + ": epochs must be positive");
  if (batch_size == 0) throw ConfigError("phase " + name + ": batch_size must be positive");
  lr.validate();
}

PhaseConfig PhaseConfig::head_only() { return PhaseConfig{}; }

PhaseConfig PhaseConfig::unfrozen() {
  PhaseConfig p;
  p.name = "B";
  p.epochs = 3;
  p.lr = LrSpec::slice(1e-5, 1e-4);
  p.frozen_groups.clear();
  return p;
}

nlohmann::json to_json(const EpochRecord& r, bool with_time) {
  nlohmann::json j = {{"phase", r.phase},
                      {"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"valid_loss", r.valid_loss},
                      {"accuracy", r.accuracy}};
  if (with_time) j["wall_seconds"] = r.wall_seconds;
  return j;
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  try {
    EpochRecord r;
    r.phase = j.at("phase").get<std::string>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.valid_loss = j.at("valid_loss").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("epoch record: ") + e.what());
  }
}

nlohmann::json to_json(const std::vector<EpochRecord>& records, bool with_time) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : records) out.push_back(to_json(r, with_time));
  return out;
}

std::vector<EpochRecord> epoch_records_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("epoch records must be a JSON array");
  std::vector<EpochRecord> out;
  for (const auto& e : j) out.push_back(epoch_record_from_json(e));
  return out;
}

std::string format_duration(double seconds) {
  const auto total = static_cast<long long>(std::llround(std::max(0.0, seconds)));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld:%02lld:%02lld", total / 3600, (total / 60) % 60, total % 60);
  return buf;
}

std::string epochs_csv(const std::vector<EpochRecord>& records, bool with_time) {
  std::string out = with_time ? "epoch,train_loss,valid_loss,accuracy,time\n" : "epoch,train_loss,valid_loss,accuracy\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f", r.epoch, r.train_loss, r.valid_loss, r.accuracy);
    out += buf;
    if (with_time) out += "," + format_duration(r.wall_seconds);
    out += "\n";
  }
  return out;
}

std::vector<EpochRecord> train_phase(Model& model, OptimizerState<float>& state, const TrainData& data,
                                     const PhaseConfig& phase, std::uint64_t seed, std::size_t first_epoch,
                                     const EpochCallback& on_epoch) {
  phase.validate();
  const LrSchedule schedule = phase.lr.schedule(model.group_count(), phase.direction);
  if (!phase.lr.zero()) schedule.validate();
  model.set_frozen(phase.frozen_groups, phase.train_bn);

  const LoaderOptions opts = phase_loader(data, phase, seed);
  const BatchLoader train(data.manifest, Split::train, opts);
  if (train.size() == 0) throw DatasetError("training split is empty");

  std::vector<EpochRecord> records;
  for (std::size_t e = 0; e < phase.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t loader_epoch = first_epoch + e;
    EpochRecord rec;
    rec.phase = phase.name;
    rec.epoch = loader_epoch;
    if (phase.lr.zero()) {
      rec.train_loss = evaluate(model, data.manifest, Split::train, opts).loss;
    } else {
      double sum = 0.0;
      std::size_t iteration = 0;
      train.for_each_batch(loader_epoch, [&](const Batch& batch) {
        const double loss = train_batch(model, state, schedule, batch);
        if (!std::isfinite(loss) || loss > kDivergenceLimit) throw DivergenceError(e, iteration, loss);
        sum += loss;
        ++iteration;
      });
      rec.train_loss = sum / static_cast<double>(iteration);
    }
    const EvalResult valid = evaluate(model, data.manifest, Split::valid, opts);
    rec.valid_loss = valid.loss;
    rec.accuracy = valid.accuracy;
    rec.wall_seconds = elapsed(start);
    records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return records;
}

void Recipe::validate() const {
  if (layer_groups == 0) throw ConfigError("layer_groups must be positive");
  phase_a.validate();
  phase_b.validate();
  for (const auto* p : {&phase_a, &phase_b}) {
    for (std::size_t g : p->frozen_groups) {
      if (g >= layer_groups) {
        throw ConfigError("phase " + p->name + " freezes group " + std::to_string(g) + " of " +
                          std::to_string(layer_groups));
      }
    }
  }
}

void recalibrate_norms(Model& model, const TrainData& data, std::size_t batch_size, std::uint64_t seed) {
  LoaderOptions opts = data.loader;
  opts.batch_size = batch_size;
  opts.seed = seed;
  opts.augment.enabled = false;
  const BatchLoader train(data.manifest, Split::train, opts);
  if (train.size() == 0) throw DatasetError("training split is empty");
  const auto frozen = model.frozen_groups();
  const bool train_bn = model.train_bn();
  const double momentum = model.norm_momentum();
  model.set_frozen({}, false);
  try {
    // Momentum 1/(k+1) on batch k keeps the running value equal to the mean so far.
    for (std::size_t b = 0; b < train.batch_count(); ++b) {
      model.set_norm_momentum(1.0 / static_cast<double>(b + 1));
      Graph<float> g;
      model.forward(g, g.constant(train.batch(0, b).images), Mode::train);
    }
  } catch (...) {
    model.set_norm_momentum(momentum);
    model.set_frozen(frozen, train_bn);
    throw;
  }
  model.set_norm_momentum(momentum);
  model.set_frozen(frozen, train_bn);
}

FineTuneResult fine_tune(Model& model, const TrainData& data, const Recipe& recipe, std::uint64_t seed,
                         const std::filesystem::path& checkpoint_dir, const nlohmann::json& extra,
                         const EpochCallback& on_epoch) {
  recipe.validate();
  if (model.group_count() != recipe.layer_groups) model.assign_layer_groups(recipe.layer_groups);
  FineTuneResult result;
  result.optimizer = OptimizerState<float>(recipe.optimizer);

  auto checkpoint = [&](const std::string& phase, const char* file) -> std::filesystem::path {
    if (checkpoint_dir.empty()) return {};
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["phase"] = phase;
    meta["records"] = to_json(result.records, false);
    const auto path = checkpoint_dir / file;
    save_checkpoint(model, &result.optimizer, path, meta);
    return path;
  };

  if (recipe.recalibrate_norms) recalibrate_norms(model, data, recipe.phase_a.batch_size, seed);
  auto a = train_phase(model, result.optimizer, data, recipe.phase_a, seed, 0, on_epoch);
  result.records.insert(result.records.end(), a.begin(), a.end());
  result.checkpoint_a = checkpoint(recipe.phase_a.name, "phaseA.lfck");

  auto b = train_phase(model, result.optimizer, data, recipe.phase_b, seed, recipe.phase_a.epochs, on_epoch);
  result.records.insert(result.records.end(), b.begin(), b.end());
  result.checkpoint_b = checkpoint(recipe.phase_b.name, "phaseB.lfck");
  return result;
}

LrFinderResult find_lr(const Model& model, const TrainData& data, const PhaseConfig& phase,
                       const LrFinderOptions& options, const OptimizerConfig& optimizer, std::uint64_t seed) {
  options.validate();
  phase.validate();
  Model probe = model;
  probe.set_frozen(phase.frozen_groups, phase.train_bn);
  OptimizerState<float> state(optimizer);
  const BatchLoader train(data.manifest, Split::train, phase_loader(data, phase, seed));
  if (train.size() == 0) throw DatasetError("training split is empty");
  const std::size_t per_epoch = train.batch_count();
  return lr_range_test(
      [&](std::size_t i, double lr) {
        const Batch batch = train.batch(i / per_epoch, i % per_epoch);
        return train_batch(probe, state, LrSchedule::constant(lr, probe.group_count()), batch);
      },
      options);
}

}  // namespace leaffine
