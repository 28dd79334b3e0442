#pragma once

// Joint NLL + lambda * MAE training with gradual top-down layer unfreezing,
// global gradient-norm clipping and a decoupled-weight-decay Adam optimizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "model.hpp"
#include "templater.hpp"

namespace qospred {

struct TrainConfig {
  double learning_rate = 2e-5;
  int batch_size = 128;
  double max_grad_norm = 1.0;
  int epochs = 10;
  double lambda = 1.0;
  std::uint64_t seed = 42;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool linear_decay = false;  // decay the learning rate linearly to 0 over all steps

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "trainer", what); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(max_grad_norm > 0.0)) fail("max_grad_norm must be > 0");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_grad_norm", c.max_grad_norm}, {"epochs", c.epochs},
                     {"lambda", c.lambda},               {"seed", c.seed},
                     {"weight_decay", c.weight_decay},   {"linear_decay", c.linear_decay}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.seed = j.value("seed", c.seed);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.linear_decay = j.value("linear_decay", c.linear_decay);
}

struct UnfreezeSchedule {
  int step_epochs = 1;
  int layers_per_step = 1;

  void validate() const {
    if (step_epochs < 1 || layers_per_step < 1)
      throw Error(ErrorKind::config, "trainer", "unfreeze schedule constants must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const UnfreezeSchedule& s) {
  j = nlohmann::json{{"step_epochs", s.step_epochs}, {"layers_per_step", s.layers_per_step}};
}
inline void from_json(const nlohmann::json& j, UnfreezeSchedule& s) {
  s.step_epochs = j.value("step_epochs", s.step_epochs);
  s.layers_per_step = j.value("layers_per_step", s.layers_per_step);
}

struct LossBreakdown {
  double total = 0.0;
  double nll = 0.0;
  double mae = 0.0;
};

// Mean of (y - mu)^2 / (2 var) + log(var) / 2; the log(2 pi) / 2 constant is
// not included.
inline double gaussian_nll(std::span<const double> y, std::span<const double> mu, std::span<const double> var_cal) {
  if (y.size() != mu.size() || y.size() != var_cal.size() || y.empty())
    throw Error(ErrorKind::input, "trainer", "loss inputs must be non-empty and equally long");
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(var_cal[i] > 0.0))
      throw Error(ErrorKind::numeric, "trainer", "non-positive variance at index " + std::to_string(i));
    const double r = y[i] - mu[i];
    sum += r * r / (2.0 * var_cal[i]) + 0.5 * std::log(var_cal[i]);
  }
  return sum / static_cast<double>(y.size());
}

inline LossBreakdown joint_loss(std::span<const double> y, std::span<const double> mu, std::span<const double> var_cal,
                                double lambda) {
  LossBreakdown out;
  out.nll = gaussian_nll(y, mu, var_cal);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) abs_sum += std::abs(y[i] - mu[i]);
  out.mae = abs_sum / static_cast<double>(y.size());
  out.total = out.nll + lambda * out.mae;
  return out;
}

// Per-sample derivatives of the joint loss w.r.t. (mu, log_var) before the
// 1/batch factor.
struct LossGrad {
  double d_mu = 0.0;
  double d_log_var = 0.0;
};

inline LossGrad joint_loss_grad(double y, double mu, double log_var, double lambda) {
  const double var = std::exp(log_var);
  const double r = y - mu;
  const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  return {-r / var - lambda * sign, 0.5 - r * r / (2.0 * var)};
}

// n(e) = min(N, floor(e / k) * n_step); the active set is the top n(e) blocks
// as 0-based indices {N - n(e), ..., N - 1}.
inline std::vector<int> active_layers(int epoch, const UnfreezeSchedule& schedule, int num_layers) {
  schedule.validate();
  if (epoch < 0) throw Error(ErrorKind::config, "trainer", "epoch must be >= 0");
  const long long n = std::min<long long>(num_layers, static_cast<long long>(epoch / schedule.step_epochs) *
                                                          schedule.layers_per_step);
  std::vector<int> out;
  for (int i = num_layers - static_cast<int>(n); i < num_layers; ++i) out.push_back(i);
  return out;
}

inline TrainableSet trainable_set(int epoch, const UnfreezeSchedule& schedule, int num_layers) {
  TrainableSet set;
  set.layers.assign(static_cast<std::size_t>(num_layers), false);
  for (int i : active_layers(epoch, schedule, num_layers)) set.layers[static_cast<std::size_t>(i)] = true;
  set.embedding = true;
  set.layernorm = true;
  return set;
}

class AdamW {
 public:
  explicit AdamW(const TrainConfig& c) : config_(c) {}

  void step(const std::vector<ParamRef>& params, double learning_rate) {
    for (const auto& ref : params) {
      auto& s = state_[ref.param];
      if (s.m.size() == 0) {
        s.m = Matrix::Zero(ref.param->value.rows(), ref.param->value.cols());
        s.v = s.m;
      }
      ++s.t;
      const Matrix& g = ref.param->grad;
      s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
      s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
      if (config_.weight_decay > 0.0) ref.param->value *= 1.0 - learning_rate * config_.weight_decay;
      ref.param->value.array() -=
          learning_rate * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + config_.adam_eps);
    }
  }

 private:
  struct State {
    Matrix m;
    Matrix v;
    long long t = 0;
  };
  TrainConfig config_;
  std::unordered_map<const Param*, State> state_;
};

struct EpochLog {
  int epoch = 0;
  double train_total = 0.0;
  double train_nll = 0.0;
  double train_mae = 0.0;
  double valid_mae = 0.0;
  int n_active_layers = 0;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

struct TrainHooks {
  std::function<void(int epoch, const TrainableSet&, QosModel&)> before_epoch;
  std::function<void(int epoch, const TrainableSet&, QosModel&)> after_epoch;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
};

inline double validation_mae(const QosModel& model, std::span<const TokenSequence> seqs, std::span<const double> targets) {
  if (seqs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    sum += std::abs(targets[i] - model.predict(seqs[i], EncodeMode::eval_deterministic, 0).mu);
  return sum / static_cast<double>(seqs.size());
}

// Dropout in training is a single stochastic pass per example; the loss uses
// the raw predicted variance (log_tau fixed at 0).
inline TrainResult train(std::span<const FeatureExample> train_set, std::span<const FeatureExample> valid_set,
                         QosModel& model, const TrainConfig& config, const UnfreezeSchedule& schedule,
                         const TrainHooks& hooks = {}) {
  config.validate();
  schedule.validate();
  if (train_set.empty()) throw Error(ErrorKind::input, "trainer", "empty training set");

  std::vector<TokenSequence> train_seqs;
  std::vector<double> train_targets;
  for (const auto& e : train_set) {
    train_seqs.push_back(model.sequence(e.feature));
    train_targets.push_back(e.target);
  }
  std::vector<TokenSequence> valid_seqs;
  std::vector<double> valid_targets;
  for (const auto& e : valid_set) {
    valid_seqs.push_back(model.sequence(e.feature));
    valid_targets.push_back(e.target);
  }

  const int num_layers = model.encoder_config().num_layers;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const double total_steps =
      static_cast<double>(config.epochs) * static_cast<double>((train_set.size() + batch - 1) / batch);
  AdamW optimizer(config);
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  int global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const TrainableSet trainable = trainable_set(epoch, schedule, num_layers);
    std::vector<ParamRef> active;
    for (auto& p : model.parameters())
      if (trainable.contains_group(p.group)) active.push_back(p);
    if (hooks.before_epoch) hooks.before_epoch(epoch, trainable, model);

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 0x5bff1e, static_cast<std::uint64_t>(epoch)));
    portable_shuffle(order, shuffle_rng);

    double epoch_nll = 0.0;
    double epoch_mae = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      double nll = 0.0;
      double mae = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const auto& seq = train_seqs[idx];
        const auto n = static_cast<std::size_t>(seq.real_length());
        Rng rng(derive_seed(config.seed, 0x7a1, static_cast<std::uint64_t>(epoch), idx));
        auto trace = model.backbone().forward(std::span(seq.ids).first(n), std::span(seq.mask).first(n),
                                              EncodeMode::train, rng);
        RegressionHead::Cache cache;
        auto pred = model.head().forward(trace.outputs, trace.mask, EncodeMode::train, rng, &cache);
        const double y = train_targets[idx];
        const double var = pred.var();
        const double r = y - pred.mu;
        nll += r * r / (2.0 * var) + 0.5 * std::log(var);
        mae += std::abs(r);
        auto g = joint_loss_grad(y, pred.mu, pred.log_var, config.lambda);
        auto d_states = model.head().backward(cache, trace.outputs, g.d_mu * inv_b, g.d_log_var * inv_b);
        model.backbone().backward(trace, d_states, trainable);
      }
      StepLog step;
      step.epoch = epoch;
      step.step = global_step++;
      step.loss.nll = nll * inv_b;
      step.loss.mae = mae * inv_b;
      step.loss.total = step.loss.nll + config.lambda * step.loss.mae;
      if (!std::isfinite(step.loss.total)) {
        double worst = 0.0;
        std::string worst_name = "none";
        for (const auto& p : active) {
          double m = p.param->value.cwiseAbs().maxCoeff();
          if (!std::isfinite(m) || m > worst) {
            worst = m;
            worst_name = p.name;
          }
        }
        throw Error(ErrorKind::numeric, "trainer",
                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                        " (largest parameter magnitude " + std::to_string(worst) + " in " + worst_name + ")");
      }

      double sq = 0.0;
      for (const auto& p : active) sq += p.param->grad.squaredNorm();
      step.grad_norm = std::sqrt(sq);
      if (step.grad_norm > config.max_grad_norm) {
        const double scale = config.max_grad_norm / (step.grad_norm + 1e-12);
        for (const auto& p : active) p.param->grad *= scale;
      }
      sq = 0.0;
      for (const auto& p : active) sq += p.param->grad.squaredNorm();
      step.clipped_norm = std::sqrt(sq);
      const double lr = config.linear_decay
                            ? config.learning_rate * (1.0 - static_cast<double>(step.step) / total_steps)
                            : config.learning_rate;
      optimizer.step(active, lr);

      epoch_nll += nll;
      epoch_mae += mae;
      if (hooks.on_step) hooks.on_step(step);
      result.steps.push_back(step);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_nll = epoch_nll / static_cast<double>(order.size());
    log.train_mae = epoch_mae / static_cast<double>(order.size());
    log.train_total = log.train_nll + config.lambda * log.train_mae;
    log.valid_mae = validation_mae(model, valid_seqs, valid_targets);
    log.n_active_layers = static_cast<int>(std::count(trainable.layers.begin(), trainable.layers.end(), true));
    if (hooks.after_epoch) hooks.after_epoch(epoch, trainable, model);
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.epochs.push_back(log);
  }
  return result;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline constexpr std::string_view kTrainLogHeader = "epoch,train_total,train_nll,train_mae,valid_mae,n_active_layers";

inline void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "trainer", "cannot write '" + path.string() + "'");
  out << kTrainLogHeader << '\n';
  for (const auto& l : logs)
    out << l.epoch << ',' << format_number(l.train_total) << ',' << format_number(l.train_nll) << ','
        << format_number(l.train_mae) << ',' << format_number(l.valid_mae) << ',' << l.n_active_layers << '\n';
}

}  // namespace qospred
