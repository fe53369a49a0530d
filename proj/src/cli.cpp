#include "leaffine/cli.hpp"

#include <cstdio>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "leaffine/checkpoint.hpp"
#include "leaffine/config.hpp"
#include "leaffine/error.hpp"
#include "leaffine/io.hpp"
#include "leaffine/pipeline.hpp"
#include "leaffine/predict.hpp"
#include "leaffine/report.hpp"
#include "leaffine/service.hpp"
#include "leaffine/synthetic.hpp"

namespace leaffine {

namespace {

namespace fs = std::filesystem;

// Flags shared by train and lr-find; each overrides the config file.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string preset;
  std::string init;
  bool gnuplot = false;
  bool no_lr_finder = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "JSON run config (defaults apply when omitted)");
    cmd->add_option("--seed", seed, "Seed for every random choice");
    cmd->add_option("-o,--out", out, "Output directory");
    cmd->add_option("--data", data, "Folder-per-class dataset root (replaces the synthetic set)");
    cmd->add_option("--preset", preset, "Model preset");
    cmd->add_option("--init", init, "Start from this checkpoint instead of pretraining");
    cmd->add_flag("--gnuplot", gnuplot, "Also write gnuplot data files");
    cmd->add_flag("--no-lr-finder", no_lr_finder, "Skip the LR range test");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.seed = *seed;
    if (!out.empty()) c.out_dir = out;
    if (!data.empty()) {
      c.data.root = data;
      c.data.synthetic.reset();
    }
    if (!preset.empty()) c.model_preset = preset;
    if (!init.empty()) {
      c.init_checkpoint = init;
      c.pretrain.reset();
    }
    if (gnuplot) c.gnuplot = true;
    if (no_lr_finder) c.lr_finder.enabled = false;
    c.validate();
    return c;
  }
};

struct SavedRun {
  Checkpoint<float> checkpoint;
  RunConfig config;
  NormalizationPreset preset;
  std::size_t image_size = 0;
  fs::path data_root;
};

SavedRun load_saved_run(const fs::path& path) {
  SavedRun s{load_checkpoint<float>(path), {}, {}, 0, {}};
  const auto& extra = s.checkpoint.extra;
  if (!extra.contains("config")) throw ConfigError("checkpoint '" + path.string() + "' carries no run config");
  s.config = run_config_from_json(extra["config"]);
  s.preset = extra.contains("normalization") ? normalization_preset_from_json(extra["normalization"])
                                              : NormalizationPreset::imagenet();
  s.image_size = extra.value("image_size", s.config.image_size);
  s.data_root = extra.value("data_root", s.config.target_root().generic_string());
  return s;
}

TrainData saved_data(const SavedRun& s, const std::string& data_override) {
  const fs::path root = data_override.empty() ? s.data_root : fs::path(data_override);
  if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root.string() + "' is not a directory");
  TrainData data{split_dataset(scan_dataset(root), s.config.data.valid_fraction, s.config.seed), {}};
  data.loader.image_size = s.image_size;
  data.loader.preset = s.preset;
  data.loader.seed = s.config.seed;
  data.loader.augment.enabled = false;
  if (data.manifest.class_names != s.checkpoint.model.class_names()) {
    throw ConfigError("dataset classes under '" + root.string() + "' do not match the checkpoint's");
  }
  return data;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " '" + path + "' is not a file");
}

void print_scores(std::ostream& out, const std::vector<ClassScore>& scores, std::size_t top) {
  char buf[32];
  for (std::size_t i = 0; i < std::min(top, scores.size()); ++i) {
    std::snprintf(buf, sizeof buf, " %.6f", scores[i].probability);
    out << scores[i].name << buf << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer-learning leaf disease classifier", "leaffine"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic folder-per-class dataset");
  std::string gen_out;
  SyntheticSpec gen_spec;
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", gen_spec.classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", gen_spec.per_class, "Images per class")->capture_default_str();
  gen->add_option("--image-size", gen_spec.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--first-motif", gen_spec.first_motif, "First motif of the table")->capture_default_str();
  gen->add_option("--seed", gen_spec.seed, "Seed")->capture_default_str();

  // lr-find and train
  auto* lrf = app.add_subcommand("lr-find", "Run the LR range test for a config");
  RunFlags lrf_flags;
  lrf_flags.attach(lrf);
  auto* train = app.add_subcommand("train", "Pretrain, fine-tune in two phases and write the report");
  RunFlags train_flags;
  train_flags.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string eval_model, eval_data, eval_out, eval_split = "valid";
  std::size_t eval_top = 9;
  eval->add_option("-m,--model", eval_model, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset root (default: the one recorded in the checkpoint)");
  eval->add_option("--split", eval_split, "train or valid")->capture_default_str();
  eval->add_option("-o,--out", eval_out, "Write confusion.csv and top_losses.csv here");
  eval->add_option("--top-losses", eval_top, "Rows in top_losses.csv")->capture_default_str();

  // predict
  auto* pred = app.add_subcommand("predict", "Classify one image");
  std::string pred_model, pred_image;
  std::size_t pred_top = 5;
  bool pred_json = false;
  pred->add_option("-m,--model", pred_model, "Checkpoint")->required();
  pred->add_option("-i,--image", pred_image, "PPM or PNG image")->required();
  pred->add_option("--top", pred_top, "Classes to print")->capture_default_str();
  pred->add_flag("--json", pred_json, "Print the service's JSON response instead");

  // report
  auto* rep = app.add_subcommand("report", "Rebuild the report bundle from a checkpoint");
  std::string rep_model, rep_data, rep_out;
  bool rep_gnuplot = false;
  rep->add_option("-m,--model", rep_model, "Checkpoint written by train")->required();
  rep->add_option("--data", rep_data, "Dataset root (default: the one recorded in the checkpoint)");
  rep->add_option("-o,--out", rep_out, "Output directory")->required();
  rep->add_flag("--gnuplot", rep_gnuplot, "Also write gnuplot data files");

  // serve
  auto* srv = app.add_subcommand("serve", "Serve predictions over HTTP");
  std::string srv_model;
  ServiceOptions srv_opts;
  std::size_t srv_max_mb = 8;
  srv->add_option("-m,--model", srv_model, "Checkpoint")->required();
  srv->add_option("--host", srv_opts.host, "Bind address")->capture_default_str();
  srv->add_option("--port", srv_opts.port, "Port (0 picks a free one)")->capture_default_str();
  srv->add_option("--max-body-mb", srv_max_mb, "Request size limit in MiB")->capture_default_str();
  srv->add_option("--top", srv_opts.top_k, "Default top_k entries")->capture_default_str();
  srv->add_option("--threads", srv_opts.threads, "Worker threads")->capture_default_str();

  std::vector<std::string> argv_storage{"leaffine"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = e.get_name();
    err << "leaffine: usage error: " << msg << "\n";
    return kExitUsage;
  }

  auto log = [&err](const std::string& line) { err << line << std::endl; };
  try {
    if (gen->parsed()) {
      gen_spec.validate();
      const auto manifest = gen_synthetic_dataset(gen_spec, gen_out);
      write_file_atomic(fs::path(gen_out) / "manifest.csv", manifest.to_csv());
      out << "wrote " << manifest.items.size() << " images in " << manifest.class_names.size() << " classes to "
          << gen_out << "\n";
    } else if (lrf->parsed()) {
      const RunConfig c = lrf_flags.resolve();
      const PreparedRun run = prepare_run(c, log);
      const LrFinderResult r = run_lr_finder(c, run);
      fs::create_directories(c.out_dir);
      write_file_atomic(c.out_dir / "lr_finder.csv", lr_finder_csv(r));
      out << "points " << r.lrs.size() << "\n";
      if (r.stop_index) out << "stopped at " << *r.stop_index << "\n";
      if (r.suggestion) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "suggested lr %.3g (steepest %.3g)\n", r.suggestion->min_div10,
                      r.suggestion->steepest);
        out << buf;
      } else {
        out << "no suggestion\n";
      }
    } else if (train->parsed()) {
      const RunConfig c = train_flags.resolve();
      const TrainOutcome o = run_training(c, log);
      char buf[64];
      std::snprintf(buf, sizeof buf, "final accuracy %.6f\n", o.report.final_accuracy);
      out << buf << "summary " << o.report.summary.generic_string() << "\n";
    } else if (eval->parsed()) {
      require_file(eval_model, "model");
      const Split split = parse_split(eval_split);
      if (eval_top == 0) throw ConfigError("--top-losses must be positive");
      const SavedRun saved = load_saved_run(eval_model);
      const TrainData data = saved_data(saved, eval_data);
      const SplitScores scores = score_split(saved.checkpoint.model, data.manifest, split, data.loader);
      const EvalResult r = summarize(scores);
      char buf[128];
      std::snprintf(buf, sizeof buf, "loss %.6f\naccuracy %.6f\ncorrect %zu/%zu\n", r.loss, r.accuracy, r.correct,
                    r.total);
      out << buf;
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_file_atomic(fs::path(eval_out) / "confusion.csv", confusion_matrix(scores, data.manifest.class_names).to_csv());
        write_file_atomic(fs::path(eval_out) / "top_losses.csv",
                          top_losses_csv(top_losses(scores, data.manifest, eval_top)));
      }
    } else if (pred->parsed()) {
      require_file(pred_model, "model");
      require_file(pred_image, "image");
      if (pred_top == 0) throw ConfigError("--top must be positive");
      const Predictor p = load_predictor(pred_model);
      const auto scores = p.predict(pred_image);
      if (pred_json) {
        out << prediction_json(scores, pred_top).dump() << "\n";
      } else {
        print_scores(out, scores, pred_top);
      }
    } else if (rep->parsed()) {
      require_file(rep_model, "model");
      const SavedRun saved = load_saved_run(rep_model);
      if (!saved.checkpoint.extra.contains("records")) throw ConfigError("checkpoint carries no epoch records");
      const auto records = epoch_records_from_json(saved.checkpoint.extra["records"]);
      const TrainData data = saved_data(saved, rep_data);
      const SplitScores scores = score_split(saved.checkpoint.model, data.manifest, Split::valid, data.loader);
      const auto cm = confusion_matrix(scores, data.manifest.class_names);
      const auto losses = top_losses(scores, data.manifest, saved.config.top_losses);
      ReportContext ctx{saved.checkpoint.extra["config"], {fs::path(rep_model)}, rep_gnuplot};
      const ReportBundle b = emit_report(records, cm, losses, std::nullopt, rep_out, ctx);
      out << "summary " << b.summary.generic_string() << "\n";
    } else if (srv->parsed()) {
      require_file(srv_model, "model");
      if (srv_max_mb == 0) throw ConfigError("--max-body-mb must be positive");
      srv_opts.max_body = srv_max_mb << 20;
      const Predictor p = load_predictor(srv_model);
      PredictionServer server(p, srv_opts);
      const int port = server.bind();
      out << "serving on http://" << srv_opts.host << ":" << port << std::endl;
      server.run();
    }
  } catch (const ConfigError& e) {
    err << "leaffine: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "leaffine: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace leaffine
