#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include <qospred/qospred.hpp>

#include "test_util.hpp"

using namespace qospred;

namespace {

RunConfig tiny_config(const qtest::TempDir& dir, std::uint64_t seed = 42) {
  auto files = write_synthetic_files(make_synthetic_corpus(150, 0.02, 11), dir / "data");
  RunConfig c;
  c.paths.user_table = files.user_table;
  c.paths.service_table = files.service_table;
  c.paths.matrix = files.matrix;
  c.paths.workdir = dir / "work";
  c.density = 0.3;
  c.encoder.num_layers = 1;
  c.encoder.hidden_dim = 16;
  c.encoder.num_heads = 2;
  c.encoder.block_size = 64;
  c.fusion.top_k = 1;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-3;
  c.mc.passes = 3;
  c.seed = seed;
  c.propagate_seed();
  return c;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

int run_cli(const std::string& args, const qtest::TempDir& dir) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string(QOSPRED_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Prepare, WritesSplitsAndIsIdempotent) {
  qtest::TempDir dir;
  auto c = tiny_config(dir);
  auto manifest = cmd_prepare(c);
  EXPECT_EQ(manifest["counts"]["train"].get<std::size_t>(), 45u);
  EXPECT_EQ(manifest["counts"]["validation"].get<std::size_t>(), 30u);
  EXPECT_EQ(manifest["counts"]["test"].get<std::size_t>(), 75u);
  std::map<std::string, std::string> first;
  for (auto f : {kTrainSplit, kValidSplit, kTestSplit, kManifest}) first[std::string(f)] = qtest::read_file(c.workdir_file(f));
  EXPECT_EQ(count_lines(first["train.jsonl"]), 45u);
  cmd_prepare(c);
  for (const auto& [f, text] : first) EXPECT_EQ(qtest::read_file(c.workdir_file(f)), text) << f;
}

TEST(Prepare, MissingMatrixIsNamed) {
  qtest::TempDir dir;
  auto c = tiny_config(dir);
  c.paths.matrix = dir / "nope.txt";
  try {
    cmd_prepare(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope.txt"), std::string::npos);
  }
}

TEST(Pipeline, TrainCalibrateEvaluatePredict) {
  qtest::TempDir dir;
  auto c = tiny_config(dir);
  cmd_prepare(c);
  auto trained = cmd_train(c);
  auto log = qtest::read_file(c.workdir_file("train_log.csv"));
  EXPECT_EQ(count_lines(log), 1u + 3u);
  EXPECT_TRUE(std::filesystem::exists(trained.checkpoint));

  auto cal = cmd_calibrate(c, trained.checkpoint);
  EXPECT_LT(qtest::rel_err(cal.state.tau() * cal.state.tau(), cal.mean_normalized_sq_residual), 1e-6);
  EXPECT_LE(cal.nll_after, cal.nll_before + 1e-12);
  EXPECT_EQ(load_calibration(c.default_calibration()).log_tau, cal.state.log_tau);

  auto r1 = cmd_evaluate(c, trained.checkpoint, c.default_calibration());
  std::map<std::string, std::string> files;
  for (auto f : {"metrics.json", "buckets.csv", "coverage.csv", "topk.csv", "scatter.csv"})
    files[f] = qtest::read_file(c.workdir_file("report") / f);
  auto r2 = cmd_evaluate(c, trained.checkpoint, c.default_calibration());
  EXPECT_EQ(r1.mae, r2.mae);
  for (const auto& [f, text] : files) EXPECT_EQ(qtest::read_file(c.workdir_file("report") / f), text) << f;
  EXPECT_TRUE(r1.calibrated);
  EXPECT_EQ(r1.n, 75u);

  auto test = read_examples_jsonl(c.workdir_file(kTestSplit));
  write_examples_jsonl(dir / "one.jsonl", std::span(test).first(1));
  auto preds = cmd_predict(c, trained.checkpoint, c.default_calibration(), dir / "one.jsonl", dir / "out.jsonl");
  ASSERT_EQ(preds.size(), 1u);
  auto line = qtest::read_file(dir / "out.jsonl");
  EXPECT_EQ(count_lines(line), 1u);
  auto j = nlohmann::json::parse(line);
  for (const char* key : {"mu", "var", "var_cal"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_NEAR(j["var_cal"].get<double>(), j["var"].get<double>() * cal.state.tau() * cal.state.tau(), 1e-12);
}

TEST(Pipeline, SeedControlsTrainingLog) {
  qtest::TempDir dir;
  auto log_for = [&](std::uint64_t seed, const char* sub) {
    auto c = tiny_config(dir, seed);
    c.paths.workdir = dir / sub;
    c.train.epochs = 2;
    cmd_prepare(c);
    cmd_train(c);
    return qtest::read_file(c.workdir_file("train_log.csv"));
  };
  auto a = log_for(42, "a"), b = log_for(42, "b"), d = log_for(7, "d");
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
}

TEST(Pipeline, SftHeadRecordedInMetrics) {
  qtest::TempDir dir;
  auto c = tiny_config(dir);
  c.head = HeadKind::sft;
  c.train.epochs = 1;
  cmd_prepare(c);
  auto trained = cmd_train(c);
  cmd_evaluate(c, trained.checkpoint);
  auto metrics = nlohmann::json::parse(qtest::read_file(c.workdir_file("report") / "metrics.json"));
  EXPECT_EQ(metrics["head"], "sft");
  EXPECT_EQ(metrics["calibrated"], false);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.paths.workdir = "/tmp/w";
  c.metric = Metric::tp;
  c.density = 0.1;
  c.head = HeadKind::sft;
  c.encoder.block_size = 256;
  c.train.learning_rate = 5e-5;
  c.train.linear_decay = true;
  c.mc.passes = 30;
  c.schedule.step_epochs = 2;
  c.seed = 9;
  auto back = run_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(run_config_from_json(to_json(c))).dump());
  EXPECT_EQ(back.metric, Metric::tp);
  EXPECT_EQ(back.encoder.block_size, 256);
  EXPECT_EQ(back.mc.passes, 30);
  EXPECT_TRUE(back.train.linear_decay);
  EXPECT_EQ(back.train.seed, 9u);
  EXPECT_EQ(back.encoder.seed, 9u);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"metric": "latency"})")), Error);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"batch_size": "big"}})")), Error);
}

TEST(Config, EnvironmentOverrides) {
  RunConfig c;
  ::setenv("QOSPRED_SEED", "123", 1);
  ::setenv("QOSPRED_WORKDIR", "/tmp/elsewhere", 1);
  apply_environment(c);
  ::unsetenv("QOSPRED_SEED");
  ::unsetenv("QOSPRED_WORKDIR");
  EXPECT_EQ(c.seed, 123u);
  EXPECT_EQ(c.mc.seed, 123u);
  EXPECT_EQ(c.paths.workdir, "/tmp/elsewhere");
  ::setenv("QOSPRED_SEED", "abc", 1);
  EXPECT_THROW(apply_environment(c), Error);
  ::unsetenv("QOSPRED_SEED");
}

TEST(Sweep, PointNamesAndWorkdirs) {
  RunConfig base;
  base.paths.workdir = "/tmp/sweep";
  SweepGrid grid{{64, 128}, {1e-5}, {10, 20}};
  auto pts = sweep_points(base, grid);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_EQ(pts[0].name, "block64_lr1e-05_T10");
  EXPECT_EQ(pts[3].config.encoder.block_size, 128);
  EXPECT_EQ(pts[3].config.mc.passes, 20);
  EXPECT_EQ(pts[3].config.paths.workdir, std::filesystem::path("/tmp/sweep") / pts[3].name);
}

TEST(Cli, ExitCodes) {
  qtest::TempDir dir;
  auto c = tiny_config(dir);
  c.train.epochs = 1;
  qtest::write_file(dir / "run.json", to_json(c).dump(2));
  const std::string cfg = "--config \"" + (dir / "run.json").string() + "\"";
  EXPECT_EQ(run_cli("prepare " + cfg, dir), 0) << qtest::read_file(dir / "cli.log");
  EXPECT_EQ(run_cli("train " + cfg, dir), 0) << qtest::read_file(dir / "cli.log");
  EXPECT_EQ(run_cli("evaluate --sft " + cfg, dir), 0) << qtest::read_file(dir / "cli.log");
  EXPECT_NE(run_cli("evaluate " + cfg + " --checkpoint \"" + (dir / "missing.bin").string() + "\"", dir), 0);
  EXPECT_NE(qtest::read_file(dir / "cli.log").find("missing.bin"), std::string::npos);
  EXPECT_NE(run_cli("train --metric latency", dir), 0);
  EXPECT_NE(run_cli("", dir), 0);
}

TEST(Cli, SynthWritesLoadableTables) {
  qtest::TempDir dir;
  EXPECT_EQ(run_cli("synth --records 40 --out \"" + (dir / "syn").string() + "\"", dir), 0);
  auto meta = load_metadata(dir / "syn" / "userlist.txt", dir / "syn" / "wslist.txt");
  EXPECT_EQ(meta.users.size(), 32u);
  EXPECT_EQ(meta.services.size(), 48u);
  auto m = load_qos_matrix(dir / "syn" / "rtMatrix.txt", Metric::rt);
  EXPECT_EQ(m.records.size(), 40u);
  EXPECT_EQ(m.dropped_missing, 32u * 48u - 40u);
}
