#pragma once

// The prepare -> train -> calibrate -> evaluate -> predict -> report workflow
// behind the command-line tool. Each command reads and writes files inside
// the run's workdir and is deterministic for a fixed configuration.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "corpus.hpp"
#include "eval_suite.hpp"
#include "mc_uncertainty.hpp"
#include "model.hpp"
#include "templater.hpp"
#include "trainer.hpp"

namespace qospred {

inline void log_line(const std::string& msg) { std::cerr << "qospred: " << msg << '\n'; }

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cli_runner", "cannot create '" + dir.string() + "': " + ec.message());
}

inline void require_file(const std::filesystem::path& path, std::string_view what) {
  if (path.empty() || !std::filesystem::exists(path))
    throw Error(ErrorKind::io, "cli_runner", std::string(what) + " not found: '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cli_runner", "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace detail

inline constexpr std::string_view kTrainSplit = "train.jsonl";
inline constexpr std::string_view kValidSplit = "valid.jsonl";
inline constexpr std::string_view kTestSplit = "test.jsonl";
inline constexpr std::string_view kManifest = "manifest.json";

struct PreparedData {
  DatasetSplit split;
  nlohmann::ordered_json manifest;
};

// In-memory part of `prepare`: split the observed records and describe the
// result.
inline PreparedData prepare_splits(std::vector<QoSRecord> records, const RunConfig& config,
                                   std::size_t dropped_missing = 0) {
  PreparedData out;
  out.split = split_by_density(std::move(records), config.density, config.validation_fraction, config.seed);
  out.manifest = split_manifest(out.split, config.metric, dropped_missing);
  return out;
}

inline nlohmann::ordered_json cmd_prepare(const RunConfig& config) {
  detail::require_file(config.paths.user_table, "user table");
  detail::require_file(config.paths.service_table, "service table");
  detail::require_file(config.paths.matrix, "QoS matrix");
  auto meta = load_metadata(config.paths.user_table, config.paths.service_table);
  if (meta.coordinate_warnings > 0)
    log_line("warning: " + std::to_string(meta.coordinate_warnings) + " metadata rows had unusable coordinates");
  auto matrix = load_qos_matrix(config.paths.matrix, config.metric, config.missing_marker);
  log_line("loaded " + std::to_string(matrix.records.size()) + " observations, dropped " +
           std::to_string(matrix.dropped_missing) + " missing cells");
  if (matrix.records.empty()) {
    log_line("warning: matrix contains no observed cells");
    throw Error(ErrorKind::input, "cli_runner", "nothing to split: '" + config.paths.matrix.string() + "' has no observations");
  }
  auto prepared = prepare_splits(std::move(matrix.records), config, matrix.dropped_missing);
  detail::ensure_dir(config.paths.workdir);
  write_examples_jsonl(config.workdir_file(kTrainSplit), build_examples(prepared.split.train, meta.users, meta.services));
  write_examples_jsonl(config.workdir_file(kValidSplit),
                       build_examples(prepared.split.validation, meta.users, meta.services));
  write_examples_jsonl(config.workdir_file(kTestSplit), build_examples(prepared.split.test, meta.users, meta.services));
  detail::write_json(config.workdir_file(kManifest), prepared.manifest);
  return prepared.manifest;
}

struct TrainOutcome {
  TrainResult result;
  std::filesystem::path checkpoint;
};

inline QosModel make_model(const RunConfig& config, std::span<const FeatureExample> train_set) {
  std::vector<std::string> features;
  features.reserve(train_set.size());
  for (const auto& e : train_set) features.push_back(e.feature);
  auto tokenizer = Tokenizer::build(features, config.vocab_max_size, config.vocab_min_count);
  return QosModel(std::move(tokenizer), config.encoder, config.head, config.fusion);
}

inline void write_step_log(const std::filesystem::path& path, std::span<const StepLog> steps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cli_runner", "cannot write '" + path.string() + "'");
  out << "epoch,step,total,nll,mae,grad_norm,clipped_norm\n";
  for (const auto& s : steps)
    out << s.epoch << ',' << s.step << ',' << format_number(s.loss.total) << ',' << format_number(s.loss.nll) << ','
        << format_number(s.loss.mae) << ',' << format_number(s.grad_norm) << ',' << format_number(s.clipped_norm)
        << '\n';
}

inline TrainOutcome cmd_train(const RunConfig& config, std::optional<std::filesystem::path> checkpoint = std::nullopt) {
  const auto train_path = config.workdir_file(kTrainSplit);
  const auto valid_path = config.workdir_file(kValidSplit);
  detail::require_file(train_path, "training split");
  auto train_set = read_examples_jsonl(train_path);
  std::vector<FeatureExample> valid_set;
  if (std::filesystem::exists(valid_path)) valid_set = read_examples_jsonl(valid_path);

  auto model = make_model(config, train_set);
  log_line("training " + std::string(to_string(config.head)) + " model on " + std::to_string(train_set.size()) +
           " examples, vocabulary " + std::to_string(model.tokenizer().vocab_size()));
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& l) {
    log_line("epoch " + std::to_string(l.epoch) + " total " + format_number(l.train_total) + " mae " +
             format_number(l.train_mae) + " valid_mae " + format_number(l.valid_mae));
  };
  if (config.checkpoint_every > 0)
    hooks.after_epoch = [&](int epoch, const TrainableSet&, QosModel& m) {
      if ((epoch + 1) % config.checkpoint_every == 0)
        m.save(config.workdir_file("checkpoint_epoch" + std::to_string(epoch) + ".bin"));
    };
  TrainOutcome out;
  out.result = train(train_set, valid_set, model, config.train, config.schedule, hooks);
  out.checkpoint = checkpoint.value_or(config.default_checkpoint());
  model.save(out.checkpoint);
  write_train_log(config.workdir_file("train_log.csv"), out.result.epochs);
  write_step_log(config.workdir_file("train_steps.csv"), out.result.steps);
  return out;
}

inline std::vector<PredictionRecord> predict_examples(const QosModel& model, std::span<const FeatureExample> examples,
                                                      const MCConfig& mc, const CalibrationState& calib) {
  std::vector<PredictionRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    auto p = mc_predict(model, model.sequence(e.feature), mc, calib);
    out.push_back({e.user_id, e.service_id, p.mu, p.var, p.var_cal, e.target});
  }
  return out;
}

struct CalibrationOutcome {
  CalibrationState state;
  double nll_before = 0.0;
  double nll_after = 0.0;
  double mean_normalized_sq_residual = 0.0;
};

inline CalibrationOutcome cmd_calibrate(const RunConfig& config, const std::filesystem::path& checkpoint,
                                        std::optional<std::filesystem::path> output = std::nullopt) {
  detail::require_file(checkpoint, "checkpoint");
  const auto valid_path = config.workdir_file(kValidSplit);
  detail::require_file(valid_path, "validation split");
  auto model = QosModel::load(checkpoint);
  auto valid = read_examples_jsonl(valid_path);
  auto preds = predict_examples(model, valid, config.mc, CalibrationState{});
  write_predictions_jsonl(config.workdir_file("predictions_valid.jsonl"), preds);

  std::vector<MeanVar> mv;
  std::vector<double> y;
  CalibrationOutcome out;
  for (const auto& p : preds) {
    mv.push_back({p.mu, p.var});
    y.push_back(p.target);
    out.mean_normalized_sq_residual += (p.target - p.mu) * (p.target - p.mu) / p.var;
  }
  out.mean_normalized_sq_residual /= static_cast<double>(preds.size());
  out.state = calibrate_temperature(mv, y, "validation");
  out.nll_before = temperature_nll(mv, y, 0.0).first;
  out.nll_after = out.state.fit_nll;
  save_calibration(output.value_or(config.default_calibration()), out.state);
  log_line("calibrated log_tau " + format_number(out.state.log_tau) + " (NLL " + format_number(out.nll_before) +
           " -> " + format_number(out.nll_after) + ")");
  return out;
}

inline EvalReport cmd_report(const RunConfig& config, const std::filesystem::path& dump,
                             const std::filesystem::path& out_dir, bool use_calibrated = true,
                             const std::string& head = "fusion") {
  auto preds = read_predictions_jsonl(dump);
  ReportOptions options;
  options.use_calibrated = use_calibrated;
  auto report = evaluate_predictions(preds, options);
  report.density = config.density;
  report.metric = std::string(to_string(config.metric));
  report.head = head;
  export_report(report, out_dir);
  return report;
}

// Without a calibration file the raw variance is used and the report says so.
inline EvalReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint,
                               std::optional<std::filesystem::path> calibration = std::nullopt,
                               bool use_calibrated = true) {
  detail::require_file(checkpoint, "checkpoint");
  const auto test_path = config.workdir_file(kTestSplit);
  detail::require_file(test_path, "test split");
  auto model = QosModel::load(checkpoint);
  CalibrationState calib;
  bool calibrated = false;
  if (calibration) {
    detail::require_file(*calibration, "calibration file");
    calib = load_calibration(*calibration);
    calibrated = use_calibrated;
  }
  auto test = read_examples_jsonl(test_path);
  auto preds = predict_examples(model, test, config.mc, calib);
  const auto dump = config.workdir_file("predictions_test.jsonl");
  write_predictions_jsonl(dump, preds);
  auto report = cmd_report(config, dump, config.workdir_file("report"), calibrated,
                           std::string(to_string(model.head().kind())));
  log_line("test MAE " + format_number(report.mae) + " RMSE " + format_number(report.rmse) + " over " +
           std::to_string(report.n) + " examples");
  return report;
}

inline std::vector<PredictionRecord> cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                                                 std::optional<std::filesystem::path> calibration,
                                                 const std::filesystem::path& input,
                                                 const std::filesystem::path& output) {
  detail::require_file(checkpoint, "checkpoint");
  detail::require_file(input, "input examples");
  auto model = QosModel::load(checkpoint);
  CalibrationState calib;
  if (calibration) {
    detail::require_file(*calibration, "calibration file");
    calib = load_calibration(*calibration);
  }
  auto examples = read_examples_jsonl(input);
  auto preds = predict_examples(model, examples, config.mc, calib);
  write_predictions_jsonl(output, preds);
  return preds;
}

struct SweepGrid {
  std::vector<int> block_sizes{64, 128, 256};
  std::vector<double> learning_rates{1e-5, 2e-5, 5e-5};
  std::vector<int> passes{10, 20, 30};
};

struct SweepPoint {
  RunConfig config;
  std::string name;
};

// One configuration per grid point, each in its own workdir under the base.
inline std::vector<SweepPoint> sweep_points(const RunConfig& base, const SweepGrid& grid) {
  std::vector<SweepPoint> out;
  for (int block : grid.block_sizes)
    for (double lr : grid.learning_rates)
      for (int t : grid.passes) {
        SweepPoint p{base, "block" + std::to_string(block) + "_lr" + format_number(lr) + "_T" + std::to_string(t)};
        p.config.encoder.block_size = block;
        p.config.train.learning_rate = lr;
        p.config.mc.passes = t;
        p.config.paths.workdir = base.paths.workdir / p.name;
        out.push_back(std::move(p));
      }
  return out;
}

// Full prepare/train/calibrate/evaluate pipeline for every point, serially.
inline std::vector<std::pair<std::string, EvalReport>> cmd_sweep(const RunConfig& base, const SweepGrid& grid) {
  std::vector<std::pair<std::string, EvalReport>> out;
  for (const auto& point : sweep_points(base, grid)) {
    log_line("sweep point " + point.name);
    cmd_prepare(point.config);
    auto trained = cmd_train(point.config);
    cmd_calibrate(point.config, trained.checkpoint);
    out.emplace_back(point.name, cmd_evaluate(point.config, trained.checkpoint, point.config.default_calibration()));
  }
  return out;
}

}  // namespace qospred
