#pragma once

// Point-accuracy metrics and the uncertainty diagnostics (sorted-std curve,
// std buckets, std/error scatter, interval coverage) computed from a
// prediction dump, plus their plot-ready file exports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "mc_uncertainty.hpp"

namespace qospred {

struct PredictionRecord {
  int user_id = 0;
  int service_id = 0;
  double mu = 0.0;
  double var = 0.0;
  double var_cal = 0.0;
  double target = 0.0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline nlohmann::ordered_json to_json(const PredictionRecord& p) {
  nlohmann::ordered_json j;
  j["user_id"] = p.user_id;
  j["service_id"] = p.service_id;
  j["mu"] = p.mu;
  j["var"] = p.var;
  j["var_cal"] = p.var_cal;
  j["target"] = p.target;
  return j;
}

inline void write_predictions_jsonl(const std::filesystem::path& path, std::span<const PredictionRecord> preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "eval_suite", "cannot write '" + path.string() + "'");
  for (const auto& p : preds) out << to_json(p).dump() << '\n';
}

inline std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "eval_suite", "cannot open '" + path.string() + "'");
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PredictionRecord p;
      p.user_id = j.at("user_id").get<int>();
      p.service_id = j.at("service_id").get<int>();
      p.mu = j.at("mu").get<double>();
      p.var = j.at("var").get<double>();
      p.var_cal = j.at("var_cal").get<double>();
      p.target = j.at("target").get<double>();
      out.push_back(p);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, "eval_suite", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::input, "eval_suite", "targets and predictions differ in length");
  if (a.empty()) throw Error(ErrorKind::input, "eval_suite", "metrics need at least one sample");
}

}  // namespace detail

inline double mae(std::span<const double> targets, std::span<const double> predictions) {
  detail::check_pair(targets, predictions);
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += std::abs(targets[i] - predictions[i]);
  return s / static_cast<double>(targets.size());
}

inline double rmse(std::span<const double> targets, std::span<const double> predictions) {
  detail::check_pair(targets, predictions);
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
  return std::sqrt(s / static_cast<double>(targets.size()));
}

struct TopkCurve {
  std::vector<double> stds;  // descending

  double fraction_below(double threshold) const {
    if (stds.empty()) return 0.0;
    auto n = std::count_if(stds.begin(), stds.end(), [&](double s) { return s < threshold; });
    return static_cast<double>(n) / static_cast<double>(stds.size());
  }
};

inline TopkCurve topk_uncertainty_curve(std::span<const double> stds) {
  if (stds.empty()) throw Error(ErrorKind::input, "eval_suite", "top-k curve needs at least one prediction");
  TopkCurve c{std::vector<double>(stds.begin(), stds.end())};
  std::sort(c.stds.begin(), c.stds.end(), std::greater<>());
  return c;
}

struct BucketStat {
  double bucket_lo = 0.0;
  double bucket_hi = 0.0;
  double mean_std = 0.0;
  double mean_abs_err = 0.0;
  std::size_t count = 0;

  friend bool operator==(const BucketStat&, const BucketStat&) = default;
};

// Equal-width buckets over [min std, max std]; the last bucket is closed on
// the right. A zero-width range collapses to a single bucket. Empty buckets
// report zero means.
inline std::vector<BucketStat> uncertainty_buckets(std::span<const double> stds, std::span<const double> abs_errors,
                                                   int n_buckets = 8) {
  if (stds.size() != abs_errors.size() || stds.empty())
    throw Error(ErrorKind::input, "eval_suite", "bucket inputs must be non-empty and equally long");
  if (n_buckets < 1) throw Error(ErrorKind::config, "eval_suite", "n_buckets must be >= 1");
  const auto [min_it, max_it] = std::minmax_element(stds.begin(), stds.end());
  const double lo = *min_it;
  const double hi = *max_it;
  if (!(hi > lo)) n_buckets = 1;
  const double width = (hi - lo) / n_buckets;

  std::vector<BucketStat> buckets(static_cast<std::size_t>(n_buckets));
  for (int b = 0; b < n_buckets; ++b) {
    buckets[static_cast<std::size_t>(b)].bucket_lo = lo + width * b;
    buckets[static_cast<std::size_t>(b)].bucket_hi = b + 1 == n_buckets ? hi : lo + width * (b + 1);
  }
  for (std::size_t i = 0; i < stds.size(); ++i) {
    int b = width > 0.0 ? static_cast<int>(std::floor((stds[i] - lo) / width)) : 0;
    b = std::clamp(b, 0, n_buckets - 1);
    auto& bucket = buckets[static_cast<std::size_t>(b)];
    bucket.mean_std += stds[i];
    bucket.mean_abs_err += abs_errors[i];
    ++bucket.count;
  }
  for (auto& b : buckets) {
    if (b.count == 0) continue;
    b.mean_std /= static_cast<double>(b.count);
    b.mean_abs_err /= static_cast<double>(b.count);
  }
  return buckets;
}

struct CoveragePoint {
  double alpha = 0.0;
  double empirical_coverage = 0.0;

  friend bool operator==(const CoveragePoint&, const CoveragePoint&) = default;
};

// 0.05, 0.07, ..., 0.99
inline std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 47; ++i) grid.push_back(std::round((0.05 + 0.02 * i) * 100.0) / 100.0);
  return grid;
}

inline std::vector<CoveragePoint> coverage_curve(std::span<const double> mu, std::span<const double> var,
                                                 std::span<const double> targets,
                                                 std::span<const double> alphas) {
  if (mu.size() != var.size() || mu.size() != targets.size() || mu.empty())
    throw Error(ErrorKind::input, "eval_suite", "coverage inputs must be non-empty and equally long");
  std::vector<CoveragePoint> out;
  out.reserve(alphas.size());
  for (double alpha : alphas) {
    const double z = z_value(alpha);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < mu.size(); ++i)
      if (std::abs(targets[i] - mu[i]) <= z * std::sqrt(var[i])) ++inside;
    out.push_back({alpha, static_cast<double>(inside) / static_cast<double>(mu.size())});
  }
  return out;
}

struct ScatterPoint {
  double std = 0.0;
  double abs_err = 0.0;

  friend bool operator==(const ScatterPoint&, const ScatterPoint&) = default;
};

struct EvalReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
  std::vector<BucketStat> per_bucket;
  std::vector<CoveragePoint> coverage;
  std::vector<double> topk_curve;
  std::vector<ScatterPoint> scatter;
  std::optional<double> density;
  std::string metric;
  bool calibrated = true;
  std::string head = "fusion";
};

struct ReportOptions {
  bool use_calibrated = true;
  int n_buckets = 8;
  std::vector<double> alphas = default_alpha_grid();
};

// Every diagnostic is a pure function of the prediction dump.
inline EvalReport evaluate_predictions(std::span<const PredictionRecord> preds, const ReportOptions& options = {}) {
  if (preds.empty()) throw Error(ErrorKind::input, "eval_suite", "no predictions to evaluate");
  std::vector<double> mu, var, y, stds, errs;
  for (const auto& p : preds) {
    const double v = options.use_calibrated ? p.var_cal : p.var;
    mu.push_back(p.mu);
    var.push_back(v);
    y.push_back(p.target);
    stds.push_back(std::sqrt(v));
    errs.push_back(std::abs(p.target - p.mu));
  }
  EvalReport r;
  r.mae = mae(y, mu);
  r.rmse = rmse(y, mu);
  r.n = preds.size();
  r.per_bucket = uncertainty_buckets(stds, errs, options.n_buckets);
  r.coverage = coverage_curve(mu, var, y, options.alphas);
  r.topk_curve = topk_uncertainty_curve(stds).stds;
  for (std::size_t i = 0; i < stds.size(); ++i) r.scatter.push_back({stds[i], errs[i]});
  r.calibrated = options.use_calibrated;
  return r;
}

inline constexpr std::string_view kBucketsHeader = "bucket_lo,bucket_hi,mean_std,mean_abs_err,count";
inline constexpr std::string_view kCoverageHeader = "alpha,empirical_coverage";
inline constexpr std::string_view kTopkHeader = "rank,std";
inline constexpr std::string_view kScatterHeader = "std,abs_err";

namespace detail {

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "eval_suite", "cannot write '" + path.string() + "'");
  return out;
}

inline std::vector<std::vector<double>> read_csv(const std::filesystem::path& path, std::string_view header) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "eval_suite", "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw Error(ErrorKind::schema, "eval_suite", path.string() + ": unexpected header");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline nlohmann::ordered_json metrics_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["n"] = r.n;
  j["density"] = r.density ? nlohmann::ordered_json(*r.density) : nlohmann::ordered_json(nullptr);
  j["metric"] = r.metric;
  j["calibrated"] = r.calibrated;
  j["head"] = r.head;
  return j;
}

inline void export_report(const EvalReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::io, "eval_suite", "cannot create '" + out_dir.string() + "': " + ec.message());

  detail::open_output(out_dir / "metrics.json") << metrics_json(r).dump(2) << '\n';
  {
    auto out = detail::open_output(out_dir / "buckets.csv");
    out << kBucketsHeader << '\n';
    for (const auto& b : r.per_bucket)
      out << detail::num(b.bucket_lo) << ',' << detail::num(b.bucket_hi) << ',' << detail::num(b.mean_std) << ','
          << detail::num(b.mean_abs_err) << ',' << b.count << '\n';
  }
  {
    auto out = detail::open_output(out_dir / "coverage.csv");
    out << kCoverageHeader << '\n';
    for (const auto& c : r.coverage) out << detail::num(c.alpha) << ',' << detail::num(c.empirical_coverage) << '\n';
  }
  {
    auto out = detail::open_output(out_dir / "topk.csv");
    out << kTopkHeader << '\n';
    for (std::size_t i = 0; i < r.topk_curve.size(); ++i) out << i + 1 << ',' << detail::num(r.topk_curve[i]) << '\n';
  }
  {
    auto out = detail::open_output(out_dir / "scatter.csv");
    out << kScatterHeader << '\n';
    for (const auto& s : r.scatter) out << detail::num(s.std) << ',' << detail::num(s.abs_err) << '\n';
  }
}

inline EvalReport read_report(const std::filesystem::path& dir) {
  EvalReport r;
  std::ifstream in(dir / "metrics.json");
  if (!in) throw Error(ErrorKind::io, "eval_suite", "cannot open '" + (dir / "metrics.json").string() + "'");
  auto j = nlohmann::json::parse(in);
  r.mae = j.at("mae").get<double>();
  r.rmse = j.at("rmse").get<double>();
  r.n = j.at("n").get<std::size_t>();
  if (!j.at("density").is_null()) r.density = j.at("density").get<double>();
  r.metric = j.at("metric").get<std::string>();
  r.calibrated = j.at("calibrated").get<bool>();
  r.head = j.value("head", std::string("fusion"));
  for (auto& row : detail::read_csv(dir / "buckets.csv", kBucketsHeader))
    r.per_bucket.push_back({row.at(0), row.at(1), row.at(2), row.at(3), static_cast<std::size_t>(row.at(4))});
  for (auto& row : detail::read_csv(dir / "coverage.csv", kCoverageHeader)) r.coverage.push_back({row.at(0), row.at(1)});
  for (auto& row : detail::read_csv(dir / "topk.csv", kTopkHeader)) r.topk_curve.push_back(row.at(1));
  for (auto& row : detail::read_csv(dir / "scatter.csv", kScatterHeader)) r.scatter.push_back({row.at(0), row.at(1)});
  return r;
}

// Sanity baseline: predicts the training mean with the training residual
// variance for every input.
struct ConstantMeanBaseline {
  double mean = 0.0;
  double var = 1.0;

  static ConstantMeanBaseline fit(std::span<const double> targets) {
    if (targets.empty()) throw Error(ErrorKind::input, "eval_suite", "baseline needs training targets");
    ConstantMeanBaseline b;
    double s = 0.0;
    for (double t : targets) s += t;
    b.mean = s / static_cast<double>(targets.size());
    double v = 0.0;
    for (double t : targets) v += (t - b.mean) * (t - b.mean);
    b.var = std::max(v / static_cast<double>(targets.size()), 1e-12);
    return b;
  }

  PredictionRecord predict(int user_id, int service_id, double target) const {
    return {user_id, service_id, mean, var, var, target};
  }
};

}  // namespace qospred
