#pragma once

// Monte-Carlo-Dropout sampling and aggregation, post-hoc temperature scaling
// of the predicted variance, and Gaussian predictive intervals.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "encoder.hpp"
#include "error.hpp"
#include "fusion_head.hpp"
#include "rng.hpp"

namespace qospred {

inline constexpr double kLogTauFloor = -6.0;

struct MCConfig {
  int passes = 20;
  std::uint64_t seed = 42;

  void validate() const {
    if (passes < 1) throw Error(ErrorKind::config, "mc_uncertainty", "MC passes must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const MCConfig& c) { j = nlohmann::json{{"passes", c.passes}, {"seed", c.seed}}; }
inline void from_json(const nlohmann::json& j, MCConfig& c) {
  c.passes = j.value("passes", c.passes);
  c.seed = j.value("seed", c.seed);
}

struct CalibrationState {
  double log_tau = 0.0;
  std::string fitted_on;
  double fit_nll = 0.0;

  double tau() const { return std::exp(log_tau); }
  double scale() const { return std::exp(2.0 * log_tau); }
};

inline nlohmann::ordered_json to_json(const CalibrationState& c) {
  nlohmann::ordered_json j;
  j["log_tau"] = c.log_tau;
  j["fitted_on"] = c.fitted_on;
  j["fit_nll"] = c.fit_nll;
  return j;
}

inline CalibrationState calibration_from_json(const nlohmann::json& j) {
  CalibrationState c;
  c.log_tau = j.at("log_tau").get<double>();
  c.fitted_on = j.value("fitted_on", std::string());
  c.fit_nll = j.value("fit_nll", 0.0);
  if (!std::isfinite(c.log_tau)) throw Error(ErrorKind::schema, "mc_uncertainty", "log_tau must be finite");
  return c;
}

inline void save_calibration(const std::filesystem::path& path, const CalibrationState& c) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "mc_uncertainty", "cannot write '" + path.string() + "'");
  out << to_json(c).dump(2) << '\n';
}

inline CalibrationState load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "mc_uncertainty", "cannot open '" + path.string() + "'");
  try {
    return calibration_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "mc_uncertainty", path.string() + ": " + e.what());
  }
}

struct UncertainPrediction {
  double mu = 0.0;
  double var = 0.0;
  double var_cal = 0.0;
  std::vector<double> sample_mus;

  // Spread of the sampled means; reported for diagnostics only and not
  // folded into var_cal.
  double sample_std() const {
    if (sample_mus.size() < 2) return 0.0;
    double s = 0.0;
    for (double m : sample_mus) s += (m - mu) * (m - mu);
    return std::sqrt(s / static_cast<double>(sample_mus.size()));
  }
};

// mu = mean of sampled means, var = mean of sampled variances,
// var_cal = exp(2 log_tau) var.
inline UncertainPrediction aggregate_samples(std::span<const GaussianPrediction> samples, const CalibrationState& calib) {
  if (samples.empty()) throw Error(ErrorKind::config, "mc_uncertainty", "MC passes must be >= 1");
  UncertainPrediction out;
  out.sample_mus.reserve(samples.size());
  double mu_sum = 0.0;
  double var_sum = 0.0;
  for (const auto& s : samples) {
    out.sample_mus.push_back(s.mu);
    mu_sum += s.mu;
    var_sum += s.var();
  }
  const auto t = static_cast<double>(samples.size());
  out.mu = mu_sum / t;
  out.var = var_sum / t;
  out.var_cal = calib.scale() * out.var;
  return out;
}

template <typename M>
concept StochasticPredictor = requires(const M& m, const TokenSequence& seq, EncodeMode mode, std::uint64_t stream) {
  { m.predict(seq, mode, stream) } -> std::convertible_to<GaussianPrediction>;
};

// Pass t draws dropout masks from a stream derived from (seed, input, t), so
// results do not depend on evaluation order or concurrency.
template <StochasticPredictor M>
UncertainPrediction mc_predict(const M& model, const TokenSequence& input, const MCConfig& mc,
                               const CalibrationState& calib) {
  mc.validate();
  const std::uint64_t input_hash = hash_ids(input.ids);
  std::vector<GaussianPrediction> samples;
  samples.reserve(static_cast<std::size_t>(mc.passes));
  for (int t = 0; t < mc.passes; ++t)
    samples.push_back(model.predict(input, EncodeMode::eval_mc, derive_seed(mc.seed, input_hash, static_cast<std::uint64_t>(t))));
  return aggregate_samples(samples, calib);
}

struct MeanVar {
  double mu = 0.0;
  double var = 0.0;
};

// Mean NLL (without the log 2pi constant) of the targets under
// N(mu, exp(2 log_tau) var), and its derivative in log_tau.
inline std::pair<double, double> temperature_nll(std::span<const MeanVar> preds, std::span<const double> targets,
                                                 double log_tau) {
  if (preds.size() != targets.size() || preds.empty())
    throw Error(ErrorKind::input, "mc_uncertainty", "predictions and targets must be non-empty and equally long");
  const double scale = std::exp(2.0 * log_tau);
  double nll = 0.0;
  double grad = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double var_cal = scale * preds[i].var;
    const double r = targets[i] - preds[i].mu;
    nll += r * r / (2.0 * var_cal) + 0.5 * std::log(var_cal);
    grad += 1.0 - r * r / var_cal;
  }
  const auto n = static_cast<double>(preds.size());
  return {nll / n, grad / n};
}

// Setting the log_tau derivative to zero gives tau^2 = mean((y - mu)^2 / var);
// the optimum is taken in closed form and floored at log_tau = -6.
inline CalibrationState calibrate_temperature(std::span<const MeanVar> preds, std::span<const double> targets,
                                              std::string fitted_on = "validation") {
  if (preds.size() != targets.size())
    throw Error(ErrorKind::input, "mc_uncertainty", "predictions and targets differ in length");
  if (preds.size() < 2) throw Error(ErrorKind::input, "mc_uncertainty", "calibration needs at least 2 samples");
  double normalized = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(preds[i].var > 0.0) || !std::isfinite(preds[i].var))
      throw Error(ErrorKind::input, "mc_uncertainty",
                  "variance at index " + std::to_string(i) + " is not positive");
    const double r = targets[i] - preds[i].mu;
    normalized += r * r / preds[i].var;
  }
  normalized /= static_cast<double>(preds.size());
  CalibrationState state;
  state.log_tau = normalized > 0.0 ? std::max(kLogTauFloor, 0.5 * std::log(normalized)) : kLogTauFloor;
  state.fitted_on = std::move(fitted_on);
  state.fit_nll = temperature_nll(preds, targets, state.log_tau).first;
  return state;
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse standard-normal CDF by bisection to 1e-10.
inline double standard_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::config, "mc_uncertainty", "quantile level must lie in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (standard_normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Two-sided critical value for central coverage alpha.
inline double z_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorKind::config, "mc_uncertainty", "confidence level must lie in (0, 1), got " + std::to_string(alpha));
  return standard_normal_quantile(0.5 * (1.0 + alpha));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval predictive_interval(double mu, double var_cal, double alpha) {
  if (!(var_cal >= 0.0)) throw Error(ErrorKind::input, "mc_uncertainty", "variance must be >= 0");
  const double half = z_value(alpha) * std::sqrt(var_cal);
  return {mu - half, mu + half};
}

}  // namespace qospred
