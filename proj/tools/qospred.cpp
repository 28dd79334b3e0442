// qospred command-line tool: synth | prepare | train | calibrate | evaluate | predict | report | sweep.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include <qospred/qospred.hpp>

namespace {

struct Overrides {
  std::string config;
  std::string metric;
  std::optional<double> density;
  std::optional<std::uint64_t> seed;
  std::optional<double> missing_marker;
  bool sft = false;
};

qospred::RunConfig resolve(const Overrides& o) {
  qospred::RunConfig c = o.config.empty() ? qospred::RunConfig{} : qospred::load_run_config(o.config);
  qospred::apply_environment(c);
  if (!o.metric.empty()) c.metric = qospred::parse_metric(o.metric);
  if (o.density) c.density = *o.density;
  if (o.missing_marker) c.missing_marker = *o.missing_marker;
  if (o.sft) c.head = qospred::HeadKind::sft;
  if (o.seed) {
    c.seed = *o.seed;
    c.propagate_seed();
  }
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--metric", o.metric, "rt or tp")->check(CLI::IsMember({"rt", "tp"}));
  cmd->add_option("--density", o.density, "training density in (0, 1)");
  cmd->add_option("--seed", o.seed, "seed for every module");
  cmd->add_option("--missing-marker", o.missing_marker, "matrix value meaning 'not observed'");
  cmd->add_flag("--sft", o.sft, "use the last-layer first-token head");
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QoS prediction with uncertainty from a transformer over templated metadata"};
  app.require_subcommand(1);

  Overrides o;
  std::string checkpoint, calibration, input, output, dump, out_dir;
  bool uncalibrated = false;

  std::string synth_dir = "synthetic";
  std::size_t synth_records = 512;
  double synth_noise = 0.02;
  auto* synth = app.add_subcommand("synth", "write a small synthetic dataset in the raw table layout");
  add_common(synth, o);
  synth->add_option("--out", synth_dir, "output directory");
  synth->add_option("--records", synth_records, "number of observed cells");
  synth->add_option("--noise", synth_noise, "target noise standard deviation");

  auto* prepare = app.add_subcommand("prepare", "split the QoS matrix and write JSONL examples");
  add_common(prepare, o);

  auto* train = app.add_subcommand("train", "train on the prepared split");
  add_common(train, o);
  train->add_option("--checkpoint", checkpoint, "output checkpoint (default: workdir/checkpoint.bin)");

  auto* calibrate = app.add_subcommand("calibrate", "fit the variance temperature on the validation split");
  add_common(calibrate, o);
  calibrate->add_option("--checkpoint", checkpoint, "trained checkpoint");
  calibrate->add_option("--calibration", calibration, "output file (default: workdir/calibration.json)");

  auto* evaluate = app.add_subcommand("evaluate", "predict the test split and write the report");
  add_common(evaluate, o);
  evaluate->add_option("--checkpoint", checkpoint, "trained checkpoint");
  evaluate->add_option("--calibration", calibration, "calibration file");
  evaluate->add_flag("--uncalibrated", uncalibrated, "report raw variances even if a calibration is given");

  auto* predict = app.add_subcommand("predict", "predict arbitrary JSONL examples");
  add_common(predict, o);
  predict->add_option("--checkpoint", checkpoint, "trained checkpoint");
  predict->add_option("--calibration", calibration, "calibration file");
  predict->add_option("--input", input, "JSONL examples")->required();
  predict->add_option("--output", output, "prediction dump")->required();

  auto* report = app.add_subcommand("report", "rebuild report files from a prediction dump");
  add_common(report, o);
  report->add_option("--dump", dump, "prediction dump (default: workdir/predictions_test.jsonl)");
  report->add_option("--out", out_dir, "output directory (default: workdir/report)");
  report->add_flag("--uncalibrated", uncalibrated, "use raw variances");

  auto* sweep = app.add_subcommand("sweep", "run the pipeline over block size, learning rate and MC passes");
  add_common(sweep, o);
  qospred::SweepGrid grid;
  sweep->add_option("--block-sizes", grid.block_sizes);
  sweep->add_option("--lrs", grid.learning_rates);
  sweep->add_option("--passes", grid.passes);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve(o);
    auto ckpt = [&] { return checkpoint.empty() ? config.default_checkpoint() : std::filesystem::path(checkpoint); };
    if (*synth) {
      auto corpus = qospred::make_synthetic_corpus(synth_records, synth_noise, config.seed);
      auto files = qospred::write_synthetic_files(corpus, synth_dir, config.missing_marker);
      std::cout << files.user_table.string() << '\n' << files.service_table.string() << '\n' << files.matrix.string() << '\n';
    } else if (*prepare) {
      std::cout << qospred::cmd_prepare(config).dump(2) << '\n';
    } else if (*train) {
      auto out = qospred::cmd_train(config, opt_path(checkpoint));
      std::cout << out.checkpoint.string() << '\n';
    } else if (*calibrate) {
      auto out = qospred::cmd_calibrate(config, ckpt(), opt_path(calibration));
      std::cout << qospred::to_json(out.state).dump(2) << '\n';
    } else if (*evaluate) {
      auto r = qospred::cmd_evaluate(config, ckpt(), opt_path(calibration), !uncalibrated);
      std::cout << qospred::metrics_json(r).dump(2) << '\n';
    } else if (*predict) {
      auto preds = qospred::cmd_predict(config, ckpt(), opt_path(calibration), input, output);
      std::cout << preds.size() << " predictions written to " << output << '\n';
    } else if (*report) {
      auto r = qospred::cmd_report(config, dump.empty() ? config.workdir_file("predictions_test.jsonl") : std::filesystem::path(dump),
                                   out_dir.empty() ? config.workdir_file("report") : std::filesystem::path(out_dir), !uncalibrated,
                                   std::string(qospred::to_string(config.head)));
      std::cout << qospred::metrics_json(r).dump(2) << '\n';
    } else if (*sweep) {
      for (const auto& [name, r] : qospred::cmd_sweep(config, grid))
        std::cout << name << ' ' << qospred::format_number(r.mae) << ' ' << qospred::format_number(r.rmse) << '\n';
    }
  } catch (const qospred::Error& e) {
    std::cerr << "qospred: error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "qospred: error: cli_runner: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
