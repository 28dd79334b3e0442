#pragma once

// Single JSON run configuration. Every field has a default; the training
// hyperparameters default to the reference settings (T=20 MC passes,
// dropout 0.1, block 128, batch 128, lr 2e-5, clip 1.0, seed 42).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "fusion_head.hpp"
#include "mc_uncertainty.hpp"
#include "trainer.hpp"

namespace qospred {

struct RunPaths {
  std::filesystem::path user_table;
  std::filesystem::path service_table;
  std::filesystem::path matrix;
  std::filesystem::path workdir = "qospred_run";
};

struct RunConfig {
  RunPaths paths;
  Metric metric = Metric::rt;
  double density = 0.05;
  double validation_fraction = 0.2;
  double missing_marker = -1.0;
  HeadKind head = HeadKind::fusion;
  EncoderConfig encoder;
  FusionConfig fusion;
  MCConfig mc;
  TrainConfig train;
  UnfreezeSchedule schedule;
  std::size_t vocab_max_size = 30000;
  std::size_t vocab_min_count = 1;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::uint64_t seed = 42;

  RunConfig() { encoder.num_layers = 4; }

  // Copies the run seed into every module that draws random numbers.
  void propagate_seed() {
    encoder.seed = seed;
    mc.seed = seed;
    train.seed = seed;
  }

  std::filesystem::path workdir_file(std::string_view name) const { return paths.workdir / name; }
  std::filesystem::path default_checkpoint() const { return workdir_file("checkpoint.bin"); }
  std::filesystem::path default_calibration() const { return workdir_file("calibration.json"); }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["paths"] = {{"user_table", c.paths.user_table.string()},
                {"service_table", c.paths.service_table.string()},
                {"matrix", c.paths.matrix.string()},
                {"workdir", c.paths.workdir.string()}};
  j["metric"] = to_string(c.metric);
  j["density"] = c.density;
  j["validation_fraction"] = c.validation_fraction;
  j["missing_marker"] = c.missing_marker;
  j["head"] = to_string(c.head);
  j["encoder"] = nlohmann::json(c.encoder);
  j["fusion"] = nlohmann::json(c.fusion);
  j["mc"] = nlohmann::json(c.mc);
  j["train"] = nlohmann::json(c.train);
  j["schedule"] = nlohmann::json(c.schedule);
  j["vocab"] = {{"max_size", c.vocab_max_size}, {"min_count", c.vocab_min_count}};
  j["checkpoint_every"] = c.checkpoint_every;
  j["seed"] = c.seed;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.user_table = p.value("user_table", std::string());
      c.paths.service_table = p.value("service_table", std::string());
      c.paths.matrix = p.value("matrix", std::string());
      c.paths.workdir = p.value("workdir", c.paths.workdir.string());
    }
    if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
    c.density = j.value("density", c.density);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.missing_marker = j.value("missing_marker", c.missing_marker);
    if (j.contains("head")) c.head = parse_head_kind(j.at("head").get<std::string>());
    if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
    if (j.contains("fusion")) from_json(j.at("fusion"), c.fusion);
    if (j.contains("mc")) from_json(j.at("mc"), c.mc);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("schedule")) from_json(j.at("schedule"), c.schedule);
    if (j.contains("vocab")) {
      c.vocab_max_size = j.at("vocab").value("max_size", c.vocab_max_size);
      c.vocab_min_count = j.at("vocab").value("min_count", c.vocab_min_count);
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "cli_runner", std::string("invalid run configuration: ") + e.what());
  }
  c.propagate_seed();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cli_runner", "cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "cli_runner", path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// QOSPRED_SEED and QOSPRED_WORKDIR override the file values.
inline void apply_environment(RunConfig& c) {
  if (const char* seed = std::getenv("QOSPRED_SEED"); seed && *seed) {
    try {
      c.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "cli_runner", std::string("QOSPRED_SEED is not an integer: ") + seed);
    }
    c.propagate_seed();
  }
  if (const char* dir = std::getenv("QOSPRED_WORKDIR"); dir && *dir) c.paths.workdir = dir;
}

}  // namespace qospred
