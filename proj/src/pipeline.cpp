#include "leaffine/pipeline.hpp"

#include <cstdio>

#include "leaffine/checkpoint.hpp"
#include "leaffine/dataset.hpp"
#include "leaffine/error.hpp"
#include "leaffine/io.hpp"
#include "leaffine/synthetic.hpp"

namespace leaffine {

namespace {

void say(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %3zu  train %.6f  valid %.6f  accuracy %.6f  %s", r.phase.c_str(), r.epoch,
                r.train_loss, r.valid_loss, r.accuracy, format_duration(r.wall_seconds).c_str());
  return buf;
}

TrainData load_target_data(const RunConfig& c) {
  DatasetManifest manifest =
      c.data.synthetic ? gen_synthetic_dataset(c.target_spec(), c.target_root()) : scan_dataset(c.target_root());
  TrainData data{split_dataset(std::move(manifest), c.data.valid_fraction, c.seed), {}};
  data.loader.image_size = c.image_size;
  data.loader.augment = c.augment;
  data.loader.seed = c.seed;
  data.loader.preset = resolve_preset(c.normalization, &data.manifest, c.image_size);
  return data;
}

PreparedRun prepare_run(const RunConfig& c, const LogFn& log) {
  c.validate();
  PreparedRun run{load_target_data(c), Model(preset_config(c.model_preset, 2, c.image_size), c.seed), {}, {}};
  const auto& target = run.target.manifest;
  say(log, "target: " + std::to_string(target.items.size()) + " images in " +
               std::to_string(target.class_names.size()) + " classes under " + target.root.generic_string());

  if (c.pretrain) {
    const auto& p = *c.pretrain;
    TrainData source{split_dataset(gen_synthetic_dataset(c.source_spec(), c.source_root()), c.data.valid_fraction, c.seed),
                     run.target.loader};
    Model model(preset_config(c.model_preset, source.manifest.class_names.size(), c.image_size), c.seed);
    model.set_class_names(source.manifest.class_names);
    model.assign_layer_groups(c.recipe.layer_groups);
    OptimizerState<float> state(c.recipe.optimizer);
    PhaseConfig phase;
    phase.name = "source";
    phase.epochs = p.epochs;
    phase.lr = LrSpec::fixed(p.lr);
    phase.frozen_groups.clear();
    phase.batch_size = p.batch_size;
    say(log, "pretraining on " + std::to_string(source.manifest.class_names.size()) + " source classes");
    run.source_records =
        train_phase(model, state, source, phase, c.seed, 0, [&](const EpochRecord& r) { say(log, format_epoch(r)); });
    std::filesystem::create_directories(c.out_dir);
    save_checkpoint(model, &state, c.out_dir / "source.lfck",
                    nlohmann::json{{"phase", "source"}, {"records", to_json(run.source_records, false)}});
    write_file_atomic(c.out_dir / "source_epochs.csv", epochs_csv(run.source_records, false));
    run.model = std::move(model);
  } else if (!c.init_checkpoint.empty()) {
    run.model = load_checkpoint<float>(c.init_checkpoint).model;
    if (run.model.config().image_size != c.image_size) {
      say(log, "note: init checkpoint was configured for " + std::to_string(run.model.config().image_size) + " px");
    }
    run.model.assign_layer_groups(c.recipe.layer_groups);
  } else {
    run.model.assign_layer_groups(c.recipe.layer_groups);
  }

  run.model.replace_head(target.class_names.size(), target.class_names, c.seed + 1);
  run.extra = {{"config", to_json(c)},
               {"normalization", to_json(run.target.loader.preset)},
               {"image_size", c.image_size},
               {"data_root", c.target_root().generic_string()}};
  return run;
}

LrFinderResult run_lr_finder(const RunConfig& c, const PreparedRun& run) {
  const PhaseConfig& phase = c.lr_finder.phase == "B" ? c.recipe.phase_b : c.recipe.phase_a;
  LrFinderResult r = find_lr(run.model, run.target, phase, c.lr_finder.options, c.recipe.optimizer, c.seed);
  try {
    r.suggestion = suggest_lr(r);
  } catch (const NoSignalError&) {
    r.suggestion.reset();
  }
  return r;
}

TrainOutcome run_training(const RunConfig& c, const LogFn& log) {
  PreparedRun run = prepare_run(c, log);
  TrainOutcome out;
  std::filesystem::create_directories(c.out_dir);
  if (c.lr_finder.enabled) {
    say(log, "lr range test (phase " + c.lr_finder.phase + " freeze state)");
    out.lr_finder = run_lr_finder(c, run);
  }
  say(log, "fine-tuning");
  out.fine_tune = fine_tune(run.model, run.target, c.recipe, c.seed, c.out_dir, run.extra,
                            [&](const EpochRecord& r) { say(log, format_epoch(r)); });

  const SplitScores scores = score_split(run.model, run.target.manifest, Split::valid, run.target.loader);
  const ConfusionMatrix cm = confusion_matrix(scores, run.target.manifest.class_names);
  const auto losses = top_losses(scores, run.target.manifest, c.top_losses);
  ReportContext context{to_json(c), {out.fine_tune.checkpoint_a, out.fine_tune.checkpoint_b}, c.gnuplot};
  out.report = emit_report(out.fine_tune.records, cm, losses, out.lr_finder, c.out_dir, context);
  return out;
}

}  // namespace leaffine
