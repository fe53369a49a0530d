#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "leaffine/cli.hpp"
#include "leaffine/config.hpp"
#include "leaffine/error.hpp"
#include "leaffine/io.hpp"
#include "leaffine/report.hpp"
#include "leaffine/service.hpp"
#include "oracles.hpp"

using namespace leaffine;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

// A run small enough for a unit test: 3 target classes, 2 source classes, 16 px.
nlohmann::json tiny_config(const fs::path& out_dir) {
  return {{"data", {{"synthetic", {{"classes", 3}, {"per_class", 12}, {"image_size", 16}}}}},
          {"pretrain",
           {{"source", {{"classes", 2}, {"per_class", 12}, {"image_size", 16}, {"first_motif", 8}}},
            {"epochs", 1},
            {"batch_size", 16}}},
          {"image_size", 16},
          {"phase_a", {{"epochs", 2}, {"batch_size", 16}}},
          {"phase_b", {{"epochs", 1}, {"batch_size", 16}}},
          {"lr_finder", {{"max_iters", 12}}},
          {"top_losses", 4},
          {"out_dir", out_dir.generic_string()}};
}

fs::path write_config(const fs::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2));
  return path;
}

std::vector<EpochRecord> two_records(double final_accuracy) {
  return {{"A", 0, 1.0, 0.9, 0.5, 2.0}, {"B", 1, 0.5, 0.4, final_accuracy, 3.0}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run config defaults and json round trip") {
  const RunConfig c;
  CHECK(c.recipe == Recipe{});
  CHECK(c.recipe.phase_a.epochs == 4);
  CHECK(c.recipe.phase_a.lr == LrSpec::fixed(3e-3));
  CHECK(c.recipe.phase_b.lr == LrSpec::slice(1e-5, 1e-4));
  CHECK(c.recipe.phase_a.batch_size == 64);
  CHECK(c.data.synthetic.has_value());
  CHECK(c.target_spec().classes == 8);
  CHECK(c.target_spec().per_class == 200);
  CHECK(c.source_spec().classes == 4);
  CHECK(c.source_spec().seed == c.seed);
  CHECK(c.model_preset == "mini-basic");

  const RunConfig parsed = run_config_from_json(to_json(c));
  CHECK(to_json(parsed) == to_json(c));
  CHECK(parsed.recipe == c.recipe);

  const RunConfig custom = run_config_from_json(
      {{"phase_b", {{"lr", {2e-5, 2e-4}}, {"frozen_groups", {0}}, {"direction", "early_high"}}},
       {"optimizer", {{"rule", "sgd"}}},
       {"seed", 5}});
  CHECK(custom.recipe.phase_b.lr == LrSpec::slice(2e-5, 2e-4));
  CHECK(custom.recipe.phase_b.frozen_groups == std::set<std::size_t>{0});
  CHECK(custom.recipe.phase_b.direction == LrDirection::early_high);
  CHECK(custom.recipe.optimizer.rule == UpdateRule::sgd);
  CHECK(custom.target_spec().seed == 5);
  CHECK(to_json(run_config_from_json(to_json(custom))) == to_json(custom));
}

TEST_CASE("run config rejects bad input") {
  using nlohmann::json;
  CHECK_THROWS_AS(run_config_from_json(json{{"sede", 4}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"phase_a", {{"epoch", 4}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"seed", "4"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"phase_a", {{"lr", {1e-3}}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"optimizer", {{"rule", "lion"}}}}), ConfigError);

  testing::TempDir dir("config");
  auto invalid = [&](const json& j) {
    RunConfig c = run_config_from_json(j);
    if (!j.contains("out_dir")) c.out_dir = dir.path() / "out";
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  invalid({{"data", {{"root", (dir.path() / "missing").generic_string()}}}});
  invalid({{"model", {{"preset", "resnet9"}}}});
  invalid({{"model", {{"init_checkpoint", (dir.path() / "none.lfck").generic_string()}}}});
  invalid({{"phase_a", {{"epochs", 0}}}});
  invalid({{"phase_b", {{"lr", {1e-4, 1e-5}}}}});
  invalid({{"phase_a", {{"frozen_groups", {0, 5}}}}});
  invalid({{"data", {{"valid_fraction", 1.0}}}});
  invalid({{"data", {{"synthetic", {{"classes", 40}}}}}});
  invalid({{"normalization", "coco"}});
  invalid({{"lr_finder", {{"phase", "C"}}}});
  invalid({{"augment", {{"hflip_prob", 2.0}}}});
  invalid({{"pretrain", {{"epochs", 0}}}});
  invalid({{"top_losses", 0}});
  write_file_atomic(dir.path() / "file", std::string_view("x"));
  invalid({{"out_dir", (dir.path() / "file").generic_string()}});

  // A root without a synthetic block means real data.
  const RunConfig real = run_config_from_json({{"data", {{"root", dir.path().generic_string()}}}});
  CHECK_FALSE(real.data.synthetic.has_value());
  CHECK(real.target_root() == dir.path());

  CHECK_THROWS_AS(load_run_config(dir.path() / "absent.json"), ConfigError);
  write_file_atomic(dir.path() / "broken.json", std::string_view("{\"seed\": "));
  CHECK_THROWS_AS(load_run_config(dir.path() / "broken.json"), ConfigError);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"train", "--no-such-flag"}).code == kExitUsage);
  CHECK(cli({"predict", "--image", "x.ppm"}).code == kExitUsage);
  CHECK(cli({"serve", "--model", "/nonexistent/model.lfck"}).code == kExitUsage);
  const CliRun r = cli({"eval"});
  CHECK(r.code == kExitUsage);
  CHECK(lines_of(r.err).size() == 1);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("config errors leave no output behind") {
  testing::TempDir dir("noside");
  const fs::path out = dir.path() / "run";
  auto j = tiny_config(out);
  j["phase_b"]["lr"] = {1e-4, 1e-5};
  const auto path = write_config(dir.path() / "run.json", j);
  const CliRun r = cli({"train", "--config", path.string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("config error") != std::string::npos);
  CHECK_FALSE(fs::exists(out));

  const CliRun missing = cli({"train", "--out", out.string(), "--data", (dir.path() / "nothing").string()});
  CHECK(missing.code == kExitUsage);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("gen-data writes a scannable tree and manifest") {
  testing::TempDir dir("gen");
  const fs::path out = dir.path() / "leaves";
  const CliRun r = cli({"gen-data", "--out", out.string(), "--classes", "3", "--per-class", "5", "--image-size", "12",
                        "--seed", "9"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("15 images in 3 classes") != std::string::npos);
  CHECK(scan_dataset(out).items.size() == 15);
  CHECK(lines_of(slurp(out / "manifest.csv")).size() == 16);
  CHECK(cli({"gen-data", "--out", out.string(), "--classes", "1"}).code == kExitUsage);
}

TEST_CASE("emit_report writes the bundle") {
  testing::TempDir dir("report");
  ConfusionMatrix cm({"healthy", "blight"});
  cm.add(0, 0, 7);
  cm.add(1, 1, 5);
  const auto records = two_records(1.0);
  const std::vector<TopLossEntry> losses{{"blight", "blight", 0.5, 0.6, "blight/x.ppm", 3}};
  LrFinderResult lr;
  lr.lrs = lr_range_sequence(1e-7, 10.0, 12);
  lr.losses.assign(12, 1.0);
  lr.smoothed.assign(12, 1.0);
  const ReportContext ctx{{{"seed", 1}}, {"phaseA.lfck", "phaseB.lfck"}, true};
  const ReportBundle b = emit_report(records, cm, losses, lr, dir.path() / "out", ctx);

  const auto epochs = lines_of(slurp(b.epochs_csv));
  CHECK(epochs[0] == "epoch,train_loss,valid_loss,accuracy,time");
  CHECK(epochs[2] == "1,0.500000,0.400000,1.000000,0:00:03");
  CHECK(slurp(b.confusion_csv) == "actual\\predicted,healthy,blight\nhealthy,7,0\nblight,0,5\n");
  CHECK(lines_of(slurp(b.top_losses_csv))[1] == "blight,blight,0.500000,0.600000,blight/x.ppm");
  CHECK(lines_of(slurp(b.lr_finder_csv)).size() == 13);
  CHECK(b.plot_data.size() == 2);
  for (const auto& p : b.plot_data) CHECK(fs::exists(p));
  const std::string summary = slurp(b.summary);
  CHECK(summary.find("final accuracy: 1.000000") != std::string::npos);
  CHECK(summary.find("confusion: 12/12 correct (1.000000)") != std::string::npos);
  CHECK(summary.find("phaseB.lfck") != std::string::npos);
  CHECK(b.final_accuracy == records.back().accuracy);
  for (const auto& e : fs::directory_iterator(dir.path() / "out")) CHECK(e.path().extension() != ".tmp");

  // Identical inputs give identical CSV bytes.
  const auto first = slurp(b.epochs_csv) + slurp(b.confusion_csv) + slurp(b.top_losses_csv) + slurp(b.lr_finder_csv);
  const ReportBundle again = emit_report(records, cm, losses, lr, dir.path() / "out", ctx);
  CHECK(slurp(again.epochs_csv) + slurp(again.confusion_csv) + slurp(again.top_losses_csv) +
            slurp(again.lr_finder_csv) ==
        first);

  CHECK_THROWS_AS(emit_report(records, cm, losses, lr, dir.path() / "out" / "epochs.csv" / "sub", ctx), IoError);
  CHECK_THROWS_AS(emit_report({}, cm, losses, lr, dir.path() / "x", ctx), StateError);
  CHECK_THROWS_AS(emit_report(records, ConfusionMatrix({"a", "b"}), losses, lr, dir.path() / "x", ctx), StateError);
}

TEST_CASE("train, predict, eval and report through the command line") {
  testing::TempDir dir("cli-train");
  const fs::path out = dir.path() / "run";
  const auto config = write_config(dir.path() / "run.json", tiny_config(out));
  const CliRun t = cli({"train", "--config", config.string(), "--gnuplot"});
  REQUIRE_MESSAGE(t.code == kExitOk, t.err);
  for (const char* f : {"epochs.csv", "confusion.csv", "top_losses.csv", "lr_finder.csv", "summary.txt", "phaseA.lfck",
                        "phaseB.lfck", "source.lfck", "source_epochs.csv", "lr_finder.dat", "losses.dat"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }

  // Summary accuracy equals the last record and the matrix trace / total.
  const auto epochs = lines_of(slurp(out / "epochs.csv"));
  REQUIRE(epochs.size() == 4);
  const std::string last_acc = epochs.back().substr(0, epochs.back().rfind(',')).substr(
      epochs.back().substr(0, epochs.back().rfind(',')).rfind(',') + 1);
  const ConfusionMatrix cm = ConfusionMatrix::parse(slurp(out / "confusion.csv"));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", cm.accuracy());
  CHECK(last_acc == buf);
  CHECK(slurp(out / "summary.txt").find("final accuracy: " + last_acc) != std::string::npos);

  // LR column follows the geometric schedule from 1e-7.
  const auto lr_lines = lines_of(slurp(out / "lr_finder.csv"));
  CHECK(lr_lines[0] == "lr,loss,smoothed_loss");
  REQUIRE(lr_lines.size() >= 2);
  for (std::size_t i = 1; i < lr_lines.size(); ++i) {
    const double lr = std::stod(lr_lines[i].substr(0, lr_lines[i].find(',')));
    const double expected = 1e-7 * std::pow(1e8, static_cast<double>(i - 1) / 11.0);
    CHECK(lr == doctest::Approx(expected).epsilon(1e-12));
  }

  const fs::path image = out / "data" / "target" / "Pepper_bell_healthy" / "Pepper_bell_healthy_0003.ppm";
  const CliRun p = cli({"predict", "--model", (out / "phaseB.lfck").string(), "--image", image.string(), "--top", "3"});
  REQUIRE(p.code == kExitOk);
  const auto plines = lines_of(p.out);
  REQUIRE(plines.size() == 3);
  double prev = 2.0;
  for (const auto& l : plines) {
    const double prob = std::stod(l.substr(l.rfind(' ') + 1));
    CHECK(prob <= prev);
    prev = prob;
  }
  const CliRun pj =
      cli({"predict", "--model", (out / "phaseB.lfck").string(), "--image", image.string(), "--top", "2", "--json"});
  REQUIRE(pj.code == kExitOk);
  const auto j = nlohmann::json::parse(pj.out);
  CHECK(j["top_k"].size() == 2);
  CHECK(plines[0].rfind(j["class"].get<std::string>() + " ", 0) == 0);

  const CliRun e = cli({"eval", "--model", (out / "phaseB.lfck").string(), "--out", (dir.path() / "eval").string()});
  REQUIRE(e.code == kExitOk);
  CHECK(slurp(dir.path() / "eval" / "confusion.csv") == slurp(out / "confusion.csv"));
  CHECK(e.out.find("correct " + std::to_string(cm.trace()) + "/" + std::to_string(cm.total())) != std::string::npos);

  const CliRun rep = cli({"report", "--model", (out / "phaseB.lfck").string(), "--out", (dir.path() / "rep").string()});
  REQUIRE(rep.code == kExitOk);
  CHECK(slurp(dir.path() / "rep" / "confusion.csv") == slurp(out / "confusion.csv"));
  CHECK(slurp(dir.path() / "rep" / "top_losses.csv") == slurp(out / "top_losses.csv"));
  const auto rep_epochs = lines_of(slurp(dir.path() / "rep" / "epochs.csv"));
  REQUIRE(rep_epochs.size() == epochs.size());
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    CHECK(rep_epochs[i].substr(0, rep_epochs[i].rfind(',')) == epochs[i].substr(0, epochs[i].rfind(',')));
  }

  const fs::path junk = dir.path() / "junk.ppm";
  write_file_atomic(junk, std::string_view("P6\n2 2\n255\nxx"));
  const CliRun bad = cli({"predict", "--model", (out / "phaseB.lfck").string(), "--image", junk.string()});
  CHECK(bad.code == kExitFailure);
  CHECK(lines_of(bad.err).size() == 1);

  // lr-find alone writes the same range test.
  const CliRun lf = cli({"lr-find", "--config", config.string(), "--out", (dir.path() / "lr").string()});
  REQUIRE(lf.code == kExitOk);
  CHECK(slurp(dir.path() / "lr" / "lr_finder.csv") == slurp(out / "lr_finder.csv"));
}

TEST_CASE("prediction service") {
  testing::TempDir dir("serve");
  const fs::path out = dir.path() / "run";
  auto cfg = tiny_config(out);
  cfg["lr_finder"]["enabled"] = false;
  cfg["pretrain"] = nullptr;
  const auto config = write_config(dir.path() / "run.json", cfg);
  REQUIRE(cli({"train", "--config", config.string()}).code == kExitOk);
  const fs::path model = out / "phaseB.lfck";
  const Predictor predictor = load_predictor(model);
  const auto before = parameter_hash(predictor.model);

  ServiceOptions opts;
  opts.port = 0;
  opts.max_body = 4096;
  PredictionServer server(predictor, opts);
  const int port = server.bind();
  std::thread worker([&] { server.run(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->body == "ok");

  const auto manifest = scan_dataset(out / "data" / "target");
  for (std::size_t i = 0; i < manifest.items.size(); i += 7) {
    const auto bytes = read_file(manifest.items[i].path);
    auto res = client.Post("/predict?top=3", std::string(bytes.begin(), bytes.end()), "image/x-portable-pixmap");
    REQUIRE(res);
    CHECK(res->status == 200);
    const CliRun p = cli({"predict", "--model", model.string(), "--image", manifest.items[i].path.string(), "--top",
                          "3", "--json"});
    CHECK(res->body + "\n" == p.out);
  }
  auto garbage = client.Post("/predict", std::string("not an image at all"), "image/png");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  CHECK(nlohmann::json::parse(garbage->body)["error"] == "decode");
  auto wrong_type = client.Post("/predict", std::string("x"), "text/plain");
  REQUIRE(wrong_type);
  CHECK(wrong_type->status == 415);
  auto big = client.Post("/predict", std::string(5000, 'x'), "image/png");
  REQUIRE(big);
  CHECK(big->status == 413);
  auto bad_top = client.Post("/predict?top=0", std::string("x"), "image/png");
  REQUIRE(bad_top);
  CHECK(bad_top->status == 400);

  server.stop();
  worker.join();
  CHECK(parameter_hash(predictor.model) == before);

  const HttpReply direct = handle_predict(predictor, "junk", "application/octet-stream", 5, 100);
  CHECK(direct.status == 400);
  CHECK(handle_predict(predictor, "junk", "image/png; charset=binary", 5, 2).status == 413);
}

}  // TEST_SUITE
