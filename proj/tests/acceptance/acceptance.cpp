// One PASS/FAIL line per acceptance criterion; exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "leaffine/checkpoint.hpp"
#include "leaffine/cli.hpp"
#include "leaffine/config.hpp"
#include "leaffine/error.hpp"
#include "leaffine/evaluate.hpp"
#include "leaffine/io.hpp"
#include "leaffine/lr_finder.hpp"
#include "leaffine/optimizer.hpp"
#include "leaffine/pipeline.hpp"
#include "leaffine/service.hpp"
#include "leaffine/synthetic.hpp"
#include "oracles.hpp"

using namespace leaffine;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

std::string drop_time_column(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  return code;
}

// Shared by the end-to-end, checkpoint and service checks.
struct DeskRun {
  bool done = false;
  RunConfig config;
  PreparedRun prepared{TrainData{}, Model(preset_config("mini-basic", 2, 64)), {}, {}};
  std::vector<EpochRecord> records;
  std::vector<std::uint64_t> backbone_hashes;
  std::uint64_t backbone_before = 0;
  double seconds = 0.0;
};

Outcome gradient_suite() {
  const auto checks = testing::gradient_suite(20240611, 20);
  double worst = 0.0;
  std::string worst_op;
  bool block = false;
  bool ok = true;
  for (const auto& c : checks) {
    if (c.op == "residual_block") block = true;
    if (c.shapes < 20) ok = false;
    if (c.max_error > worst) {
      worst = c.max_error;
      worst_op = c.op;
    }
  }
  ok = ok && block && worst <= 1e-5;
  return {ok, std::to_string(checks.size()) + " ops x >=20 shapes, max rel err " + fmt("%.2e", worst) + " (" +
                  worst_op + ") <= 1e-5"};
}

Outcome metric_fixture() {
  const ConfusionMatrix cm = ConfusionMatrix::parse(slurp(testing::fixture_dir() / "published_confusion.tsv"));
  const double acc = cm.accuracy();
  const bool ok =
      cm.trace() == 4112 && cm.total() == 4134 && std::abs(acc - 0.99468) <= 1e-4 && std::abs(acc - 0.9944) <= 0.003;
  return {ok, "trace " + std::to_string(cm.trace()) + ", total " + std::to_string(cm.total()) + ", accuracy " +
                  fmt("%.5f", acc) + " (published 0.9944)"};
}

Outcome discriminative_schedule() {
  const auto s = discriminative_lrs(1e-5, 1e-4, 3);
  const std::vector<double> expected{1e-5, 3.1622776601683795e-05, 1e-4};
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(s.per_group_lrs[i] - expected[i]) / expected[i]);
  bool props = true;
  for (std::size_t g = 1; g <= 8; ++g) {
    for (auto dir : {LrDirection::early_low, LrDirection::early_high}) {
      const auto lrs = discriminative_lrs(1e-5, 1e-4, g, dir).per_group_lrs;
      if (lrs.size() != g) props = false;
      if (g == 1) {
        props = props && lrs[0] == 1e-4;
        continue;
      }
      const double ratio = std::pow(10.0, 1.0 / static_cast<double>(g - 1));
      for (std::size_t i = 1; i < g; ++i) {
        const double r = dir == LrDirection::early_low ? lrs[i] / lrs[i - 1] : lrs[i - 1] / lrs[i];
        props = props && std::abs(r - ratio) / ratio <= 1e-12;
      }
      const double lo = dir == LrDirection::early_low ? lrs.front() : lrs.back();
      const double hi = dir == LrDirection::early_low ? lrs.back() : lrs.front();
      props = props && std::abs(lo - 1e-5) <= 1e-17 && std::abs(hi - 1e-4) <= 1e-16;
    }
  }
  return {worst <= 1e-12 && props, "[" + fmt("%.5g", s.per_group_lrs[0]) + ", " + fmt("%.5g", s.per_group_lrs[1]) +
                                       ", " + fmt("%.5g", s.per_group_lrs[2]) + "], max rel err " + fmt("%.1e", worst) +
                                       "; ratio/direction hold for G=1..8: " + (props ? "yes" : "no")};
}

Outcome lr_finder_checks() {
  const auto lrs = lr_range_sequence(1e-7, 10.0, 100);
  const bool endpoints = lrs.front() == 1e-7 && lrs.back() == 10.0;

  std::vector<double> series{1.0, 0.5, 0.4, 1.7};
  series.resize(30, 2.0);
  LrFinderOptions raw;
  raw.smoothing = 0.0;
  raw.max_iters = 30;
  const auto r = lr_range_test([&](std::size_t i, double) { return series[i]; }, raw);
  const bool stop = r.stop_index && *r.stop_index == 3;
  // Exactly 4x the best loss must not stop the test.
  std::vector<double> under{1.0, 0.5, 0.4, 1.6};
  under.resize(30, 0.3);
  const auto u = lr_range_test([&](std::size_t i, double) { return under[i]; }, raw);
  const bool no_early_stop = !u.stop_index.has_value();

  const double lambda = 4.0;
  std::vector<Parameter<double>> ps{{"w", Tensor<double>::scalar(3.0), ParamRole::head_bias, true, 0}};
  OptimizerConfig c;
  c.rule = UpdateRule::sgd;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  OptimizerState<double> state(c);
  const auto bowl = lr_range_test([&](std::size_t, double lr) {
    const double w = ps[0].value[0];
    ps[0].value.ensure_grad()[0] = lambda * w;
    step<double>(ps, state, LrSchedule::constant(lr, 1));
    return 0.5 * lambda * w * w;
  });
  const double suggestion = bowl.suggestion ? bowl.suggestion->value() : INFINITY;
  const bool stable = suggestion < 2.0 / lambda;
  return {endpoints && stop && no_early_stop && stable,
          std::string("endpoints exact: ") + (endpoints ? "yes" : "no") + "; 4x rule stops at index " +
              (r.stop_index ? std::to_string(*r.stop_index) : "none") + " (exactly 4x does not stop: " +
              (no_early_stop ? "yes" : "no") + "); bowl suggestion " + fmt("%.3g", suggestion) + " < 2/lambda = 0.5"};
}

void desk_run(DeskRun& d, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  d.config = RunConfig{};
  d.config.seed = 42;
  d.config.out_dir = out_dir;
  d.config.lr_finder.enabled = false;
  d.prepared = prepare_run(d.config, [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); });
  Recipe recipe = d.config.recipe;
  // Recalibrate here so the freeze check sees the state phase A starts from.
  recalibrate_norms(d.prepared.model, d.prepared.target, recipe.phase_a.batch_size, d.config.seed);
  recipe.recalibrate_norms = false;
  d.backbone_before = parameter_hash(d.prepared.model, {0, 1});
  const auto result = fine_tune(d.prepared.model, d.prepared.target, recipe, d.config.seed, out_dir, d.prepared.extra,
                                [&](const EpochRecord& r) {
                                  std::fprintf(stderr, "  %s\n", format_epoch(r).c_str());
                                  if (r.phase == "A") d.backbone_hashes.push_back(parameter_hash(d.prepared.model, {0, 1}));
                                });
  d.records = result.records;
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  d.done = true;
}

Outcome freeze_contract(const DeskRun& d) {
  std::size_t same = 0;
  for (auto h : d.backbone_hashes) same += h == d.backbone_before;
  return {d.backbone_hashes.size() == 4 && same == 4,
          std::to_string(same) + "/" + std::to_string(d.backbone_hashes.size()) +
              " phase-A epochs with unchanged groups 0-1 (parameters and running statistics)"};
}

Outcome end_to_end(const DeskRun& d) {
  double a_final = 0.0;
  for (const auto& r : d.records) {
    if (r.phase == "A") a_final = r.accuracy;
  }
  const double b_final = d.records.back().accuracy;
  const bool ok = d.records.size() == 7 && b_final >= 0.90 && b_final >= a_final - 0.01 && d.seconds <= 900.0;
  return {ok, "8x200 @64px seed 42: phase A final " + fmt("%.4f", a_final) + ", phase B final " + fmt("%.4f", b_final) +
                  " (>= 0.90, >= A - 0.01), " + fmt("%.0f", d.seconds) + " s (<= 900 s)"};
}

Outcome checkpoint_round_trip(const DeskRun& d) {
  const fs::path path = d.config.out_dir / "phaseB.lfck";
  const auto bytes = read_file(path);
  const auto loaded = parse_checkpoint<float>(bytes);
  const auto again = serialize_checkpoint(loaded.model, loaded.optimizer ? &*loaded.optimizer : nullptr, loaded.extra);
  const bool identical = again == bytes;

  const LoaderOptions opts = d.prepared.target.loader;
  const BatchLoader valid(d.prepared.target.manifest, Split::valid, opts);
  const Batch batch = valid.batch(0, 0);
  Graph<float> g1, g2;
  const auto& a = g1.value(d.prepared.model.infer(g1, g1.constant(batch.images)));
  const auto& b = g2.value(loaded.model.infer(g2, g2.constant(batch.images)));
  const bool same_logits =
      a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
  return {identical && same_logits, std::to_string(bytes.size()) + " bytes, save->load->save identical: " +
                                        (identical ? "yes" : "no") + "; " + std::to_string(batch.labels.size()) +
                                        " validation logits bit-identical: " + (same_logits ? "yes" : "no")};
}

Outcome determinism(const fs::path& dir) {
  nlohmann::json cfg = {
      {"data", {{"synthetic", {{"classes", 4}, {"per_class", 40}, {"image_size", 32}}}}},
      {"pretrain",
       {{"source", {{"classes", 2}, {"per_class", 40}, {"image_size", 32}, {"first_motif", 8}}},
        {"epochs", 1},
        {"batch_size", 32}}},
      {"image_size", 32},
      {"phase_a", {{"epochs", 2}, {"batch_size", 32}}},
      {"phase_b", {{"epochs", 1}, {"batch_size", 32}}},
      {"lr_finder", {{"max_iters", 20}}},
      {"seed", 7},
      {"out_dir", (dir / "run").generic_string()}};
  fs::create_directories(dir);
  write_file_atomic(dir / "run.json", cfg.dump(2));
  const std::vector<std::string> files{"source.lfck", "phaseA.lfck", "phaseB.lfck", "confusion.csv", "top_losses.csv",
                                       "lr_finder.csv"};
  std::vector<std::vector<std::string>> runs;
  for (int i = 0; i < 2; ++i) {
    fs::remove_all(dir / "run");
    if (cli({"train", "--config", (dir / "run.json").string()}) != kExitOk) return {false, "train subcommand failed"};
    std::vector<std::string> got{drop_time_column(slurp(dir / "run" / "epochs.csv"))};
    for (const auto& f : files) got.push_back(slurp(dir / "run" / f));
    runs.push_back(std::move(got));
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < runs[0].size(); ++i) same += runs[0][i] == runs[1][i];
  return {same == runs[0].size(), std::to_string(same) + "/" + std::to_string(runs[0].size()) +
                                      " artifacts bit-identical across two runs (epochs.csv without time, "
                                      "3 checkpoints, 3 report CSVs)"};
}

Outcome overfit(const fs::path& dir) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 10;
  spec.image_size = 32;
  spec.seed = 21;
  TrainData d{split_dataset(gen_synthetic_dataset(spec, dir), 0.2, 21), {}};
  d.loader.image_size = 32;
  d.loader.augment.enabled = false;
  const auto counts = d.manifest.class_counts(Split::train);
  Model m(preset_config("mini-basic", 2, 32), 3);
  m.set_class_names(d.manifest.class_names);
  m.assign_layer_groups(3);
  OptimizerState<float> st;
  PhaseConfig p;
  p.name = "fit";
  p.epochs = 1;
  p.lr = LrSpec::fixed(1e-2);
  p.frozen_groups.clear();
  p.batch_size = 16;
  std::size_t reached = 0;
  double acc = 0.0;
  for (std::size_t e = 0; e < 30 && reached == 0; ++e) {
    train_phase(m, st, d, p, 2, e);
    acc = evaluate(m, d.manifest, Split::train, d.loader).accuracy;
    if (acc == 1.0) reached = e + 1;
  }
  return {counts == std::vector<std::size_t>{8, 8} && reached > 0,
          "2 classes x 8 training images: " +
              (reached ? "accuracy 1.0 after " + std::to_string(reached) + " epochs" : "accuracy " + fmt("%.3f", acc)) +
              " (limit 30)"};
}

Outcome service(const DeskRun& d) {
  const fs::path model = d.config.out_dir / "phaseB.lfck";
  const Predictor predictor = load_predictor(model);
  const auto before = parameter_hash(predictor.model);
  ServiceOptions opts;
  opts.port = 0;
  PredictionServer server(predictor, opts);
  const int port = server.bind();
  std::thread worker([&] { server.run(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  const auto health = client.Get("/healthz");
  const bool healthy = health && health->status == 200 && health->body == "ok";
  const auto valid = d.prepared.target.manifest.indices(Split::valid);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& path = d.prepared.target.manifest.items[valid[i * valid.size() / 10]].path;
    const auto bytes = read_file(path);
    const auto res = client.Post("/predict?top=3", std::string(bytes.begin(), bytes.end()), "image/x-portable-pixmap");
    std::string out;
    const int code = cli({"predict", "--model", model.string(), "--image", path.string(), "--top", "3", "--json"}, &out);
    if (res && res->status == 200 && code == kExitOk && res->body + "\n" == out) ++matches;
  }
  const auto bad = client.Post("/predict", std::string("definitely not a leaf"), "image/png");
  const bool rejected = bad && bad->status == 400 && nlohmann::json::parse(bad->body).value("error", "") == "decode";
  server.stop();
  worker.join();
  const bool untouched = parameter_hash(predictor.model) == before;
  return {healthy && matches == 10 && rejected && untouched,
          std::to_string(matches) + "/10 responses equal CLI predict; /healthz " +
              (health ? std::to_string(health->status) : "none") + "; malformed body " +
              (bad ? std::to_string(bad->status) : "none") + "; model unchanged: " + (untouched ? "yes" : "no")};
}

}  // namespace

int main() {
  testing::TempDir work("acceptance");
  DeskRun desk;

  report(1, "gradient oracle suite", [] {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = gradient_suite();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.pass = o.pass && secs < 60.0;
    o.detail += ", " + fmt("%.1f", secs) + " s < 60 s";
    return o;
  });
  report(2, "metric fidelity fixture", metric_fixture);
  report(3, "discriminative schedule", discriminative_schedule);
  report(6, "lr finder", lr_finder_checks);
  report(9, "overfit capacity", [&] { return overfit(work.path() / "overfit"); });
  report(5, "end-to-end desk run", [&] {
    desk_run(desk, work.path() / "desk");
    return end_to_end(desk);
  });
  report(4, "freeze contract", [&] {
    if (!desk.done) return Outcome{false, "desk run did not complete"};
    return freeze_contract(desk);
  });
  report(8, "checkpoint round trip", [&] {
    if (!desk.done) return Outcome{false, "desk run did not complete"};
    return checkpoint_round_trip(desk);
  });
  report(10, "service consistency", [&] {
    if (!desk.done) return Outcome{false, "desk run did not complete"};
    return service(desk);
  });
  report(7, "determinism", [&] { return determinism(work.path() / "determinism"); });

  std::printf("%s: %d of 10 criteria failed\n", failures == 0 ? "ALL PASS" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}
