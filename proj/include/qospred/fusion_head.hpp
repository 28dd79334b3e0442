#pragma once

// Last-K layer fusion, mean/max/attention multi-pooling and the Gaussian
// (mu, log-variance) regression heads, each with an explicit backward pass.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "encoder.hpp"
#include "error.hpp"
#include "tensor.hpp"

namespace qospred {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct PoolingSet {
  bool mean = true;
  bool max = true;
  bool attention = true;

  bool empty() const { return !mean && !max && !attention; }
  friend bool operator==(const PoolingSet&, const PoolingSet&) = default;
};

struct FusionConfig {
  int top_k = 4;
  PoolingSet pooling;
  int head_hidden = 0;  // 0 selects the backbone hidden size
  double dropout_p = 0.1;

  void validate(int num_layers) const {
    if (top_k < 1) throw Error(ErrorKind::config, "fusion_head", "K must be >= 1");
    if (top_k > num_layers)
      throw Error(ErrorKind::config, "fusion_head",
                  "K = " + std::to_string(top_k) + " exceeds the " + std::to_string(num_layers) + " encoder layers");
    if (pooling.empty()) throw Error(ErrorKind::config, "fusion_head", "at least one pooling strategy required");
    if (head_hidden < 0) throw Error(ErrorKind::config, "fusion_head", "head_hidden must be >= 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorKind::config, "fusion_head", "dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  std::vector<std::string> pools;
  if (c.pooling.mean) pools.emplace_back("mean");
  if (c.pooling.max) pools.emplace_back("max");
  if (c.pooling.attention) pools.emplace_back("attention");
  j = nlohmann::json{{"top_k", c.top_k}, {"pooling", pools}, {"head_hidden", c.head_hidden}, {"dropout_p", c.dropout_p}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  c.top_k = j.value("top_k", c.top_k);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  if (j.contains("pooling")) {
    c.pooling = {false, false, false};
    for (const auto& p : j.at("pooling")) {
      auto name = p.get<std::string>();
      if (name == "mean") c.pooling.mean = true;
      else if (name == "max") c.pooling.max = true;
      else if (name == "attention") c.pooling.attention = true;
      else throw Error(ErrorKind::config, "fusion_head", "unknown pooling strategy '" + name + "'");
    }
  }
}

struct GaussianPrediction {
  double mu = 0.0;
  double log_var = 0.0;

  double var() const { return std::exp(std::clamp(log_var, kLogVarMin, kLogVarMax)); }
};

// Elementwise mean of the last K layer matrices.
inline Matrix fuse_layers(std::span<const Matrix> states, int top_k) {
  const int n = static_cast<int>(states.size());
  if (top_k < 1 || top_k > n)
    throw Error(ErrorKind::config, "fusion_head",
                "K = " + std::to_string(top_k) + " outside [1, " + std::to_string(n) + "]");
  Matrix fused = states[static_cast<std::size_t>(n - 1)];
  for (int i = n - top_k; i < n - 1; ++i) fused += states[static_cast<std::size_t>(i)];
  if (top_k > 1) fused /= static_cast<double>(top_k);
  return fused;
}

inline Matrix fuse_layers(const LayerStates& states, int top_k) { return fuse_layers(states.states, top_k); }

struct PoolCache {
  std::vector<Eigen::Index> rows;     // unmasked row indices
  std::vector<Eigen::Index> argmax;   // per feature, row index of the max
  Vector attention_weights;           // per unmasked row
};

namespace detail {

inline std::vector<Eigen::Index> unmasked_rows(const Matrix& fused, std::span<const int> mask) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < fused.rows(); ++i)
    if (static_cast<std::size_t>(i) < mask.size() && mask[static_cast<std::size_t>(i)] != 0) rows.push_back(i);
  if (rows.empty()) throw Error(ErrorKind::input, "fusion_head", "pooling over an all-masked sequence");
  return rows;
}

}  // namespace detail

// Sum of the enabled pooled vectors; pooling only sees unmasked rows.
// Attention pooling scores each token with a learnable query:
// score_i = q . h_i / sqrt(d), normalized by softmax over unmasked tokens.
inline RowVector multi_pool(const Matrix& fused, std::span<const int> mask, const PoolingSet& pooling,
                            const RowVector& attention_query, PoolCache* cache = nullptr) {
  if (pooling.empty()) throw Error(ErrorKind::config, "fusion_head", "at least one pooling strategy required");
  const auto rows = detail::unmasked_rows(fused, mask);
  const Eigen::Index d = fused.cols();
  RowVector v = RowVector::Zero(d);

  if (pooling.mean) {
    RowVector sum = RowVector::Zero(d);
    for (auto r : rows) sum += fused.row(r);
    v += sum / static_cast<double>(rows.size());
  }
  std::vector<Eigen::Index> argmax;
  if (pooling.max) {
    argmax.assign(static_cast<std::size_t>(d), rows.front());
    for (Eigen::Index j = 0; j < d; ++j)
      for (auto r : rows)
        if (fused(r, j) > fused(argmax[static_cast<std::size_t>(j)], j)) argmax[static_cast<std::size_t>(j)] = r;
    for (Eigen::Index j = 0; j < d; ++j) v(j) += fused(argmax[static_cast<std::size_t>(j)], j);
  }
  Vector weights;
  if (pooling.attention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    weights.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      weights(static_cast<Eigen::Index>(i)) = fused.row(rows[i]).dot(attention_query) * scale;
    weights = (weights.array() - weights.maxCoeff()).exp();
    weights /= weights.sum();
    for (std::size_t i = 0; i < rows.size(); ++i) v += weights(static_cast<Eigen::Index>(i)) * fused.row(rows[i]);
  }
  if (cache) {
    cache->rows = rows;
    cache->argmax = std::move(argmax);
    cache->attention_weights = std::move(weights);
  }
  return v;
}

// Gradient of multi_pool w.r.t. the fused matrix (returned) and the
// attention query (accumulated into `d_query` when non-null).
inline Matrix multi_pool_backward(const Matrix& fused, const PoolingSet& pooling, const RowVector& attention_query,
                                  const PoolCache& cache, const RowVector& dv, RowVector* d_query) {
  Matrix d_fused = Matrix::Zero(fused.rows(), fused.cols());
  const auto n = static_cast<double>(cache.rows.size());
  if (pooling.mean)
    for (auto r : cache.rows) d_fused.row(r) += dv / n;
  if (pooling.max)
    for (Eigen::Index j = 0; j < fused.cols(); ++j) d_fused(cache.argmax[static_cast<std::size_t>(j)], j) += dv(j);
  if (pooling.attention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fused.cols()));
    const auto& w = cache.attention_weights;
    Vector dots(w.size());
    for (std::size_t i = 0; i < cache.rows.size(); ++i) dots(static_cast<Eigen::Index>(i)) = fused.row(cache.rows[i]).dot(dv);
    const double mean_dot = w.dot(dots);
    for (std::size_t i = 0; i < cache.rows.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double ds = w(ii) * (dots(ii) - mean_dot);
      d_fused.row(cache.rows[i]) += w(ii) * dv + ds * scale * attention_query;
      if (d_query) *d_query += ds * scale * fused.row(cache.rows[i]);
    }
  }
  return d_fused;
}

// Two-layer MLP: dropout -> linear -> GELU -> dropout -> linear(2) giving
// (mu, log_var). log_var is clamped to [-10, 10].
class GaussianMlp {
 public:
  struct Cache {
    RowVector input;
    Matrix input_drop;
    RowVector pre_act;
    RowVector act;
    Matrix act_drop;
    RowVector raw;
  };

  GaussianMlp() = default;
  GaussianMlp(int in_dim, int hidden, double dropout_p, Rng& rng) : dropout_p_(dropout_p) {
    hidden_.init(in_dim, hidden);
    output_.init(hidden, 2);
    fill_normal(hidden_.weight.value, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    fill_normal(output_.weight.value, rng, 0.02);
  }

  GaussianPrediction forward(const RowVector& v, EncodeMode mode, Rng& rng, Cache* cache = nullptr) const {
    if (!v.allFinite()) throw Error(ErrorKind::numeric, "fusion_head", "non-finite activation entering head.input");
    const bool drop = dropout_active(mode, dropout_p_);
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = v;
    RowVector x = v;
    if (drop) {
      c.input_drop = dropout_mask(1, v.size(), dropout_p_, rng);
      x.array() *= c.input_drop.row(0).array();
    } else {
      c.input_drop.resize(0, 0);
    }
    c.pre_act = hidden_.forward(x).row(0);
    if (!c.pre_act.allFinite()) throw Error(ErrorKind::numeric, "fusion_head", "non-finite activation in head.hidden");
    c.act = c.pre_act.unaryExpr([](double t) { return gelu(t); });
    RowVector h = c.act;
    if (drop) {
      c.act_drop = dropout_mask(1, h.size(), dropout_p_, rng);
      h.array() *= c.act_drop.row(0).array();
    } else {
      c.act_drop.resize(0, 0);
    }
    c.raw = output_.forward(h).row(0);
    if (!c.raw.allFinite()) throw Error(ErrorKind::numeric, "fusion_head", "non-finite activation in head.output");
    return {c.raw(0), std::clamp(c.raw(1), kLogVarMin, kLogVarMax)};
  }

  // Returns the gradient w.r.t. the head input.
  RowVector backward(const Cache& c, double d_mu, double d_log_var, bool accumulate) {
    RowVector d_raw(2);
    d_raw << d_mu, (c.raw(1) < kLogVarMin || c.raw(1) > kLogVarMax) ? 0.0 : d_log_var;
    RowVector h = c.act;
    if (c.act_drop.size() != 0) h.array() *= c.act_drop.row(0).array();
    RowVector dh = output_.backward(h, d_raw, accumulate).row(0);
    if (c.act_drop.size() != 0) dh.array() *= c.act_drop.row(0).array();
    RowVector d_pre = dh.cwiseProduct(c.pre_act.unaryExpr([](double t) { return gelu_grad(t); }));
    RowVector x = c.input;
    if (c.input_drop.size() != 0) x.array() *= c.input_drop.row(0).array();
    RowVector dx = hidden_.backward(x, d_pre, accumulate).row(0);
    if (c.input_drop.size() != 0) dx.array() *= c.input_drop.row(0).array();
    return dx;
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    hidden_.collect(out, prefix + ".hidden", "head");
    output_.collect(out, prefix + ".output", "head");
  }

  Linear& hidden() { return hidden_; }
  Linear& output() { return output_; }
  double dropout_p() const { return dropout_p_; }

 private:
  Linear hidden_;
  Linear output_;
  double dropout_p_ = 0.0;
};

enum class HeadKind { fusion, sft };

inline std::string_view to_string(HeadKind k) { return k == HeadKind::fusion ? "fusion" : "sft"; }

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "fusion") return HeadKind::fusion;
  if (s == "sft") return HeadKind::sft;
  throw Error(ErrorKind::config, "fusion_head", "unknown head '" + std::string(s) + "' (expected fusion|sft)");
}

// Either the fused multi-pool head or the first-token ablation head; both end
// in a GaussianMlp.
class RegressionHead {
 public:
  struct Cache {
    Matrix fused;
    PoolCache pool;
    GaussianMlp::Cache mlp;
    RowVector pooled;
  };

  RegressionHead() = default;
  RegressionHead(HeadKind kind, const FusionConfig& config, int num_layers, int hidden_dim, std::uint64_t seed)
      : kind_(kind), config_(config) {
    if (kind_ == HeadKind::fusion) config_.validate(num_layers);
    Rng rng(derive_seed(seed, 0x4ead));
    query_.resize(1, hidden_dim);
    if (kind_ == HeadKind::fusion) fill_normal(query_.value, rng, 0.02);
    const int width = config_.head_hidden > 0 ? config_.head_hidden : hidden_dim;
    mlp_ = GaussianMlp(hidden_dim, width, config_.dropout_p, rng);
  }

  HeadKind kind() const { return kind_; }
  const FusionConfig& config() const { return config_; }

  // Sequence vector fed to the MLP.
  RowVector pooled(std::span<const Matrix> states, std::span<const int> mask, Cache* cache = nullptr) const {
    if (states.empty()) throw Error(ErrorKind::input, "fusion_head", "no layer states");
    if (kind_ == HeadKind::sft) {
      if (mask.empty() || mask[0] == 0) throw Error(ErrorKind::input, "fusion_head", "first position is masked");
      return states.back().row(0);
    }
    Matrix fused = fuse_layers(states, config_.top_k);
    RowVector q = query_.value.row(0);
    RowVector v = multi_pool(fused, mask, config_.pooling, q, cache ? &cache->pool : nullptr);
    if (cache) cache->fused = std::move(fused);
    return v;
  }

  GaussianPrediction forward(std::span<const Matrix> states, std::span<const int> mask, EncodeMode mode, Rng& rng,
                             Cache* cache = nullptr) const {
    RowVector v = pooled(states, mask, cache);
    if (cache) cache->pooled = v;
    return mlp_.forward(v, mode, rng, cache ? &cache->mlp : nullptr);
  }

  GaussianPrediction forward(const LayerStates& states, EncodeMode mode, Rng& rng) const {
    return forward(states.states, states.mask, mode, rng);
  }

  // Accumulates head gradients and returns d loss / d state for every layer
  // (empty matrices for layers the head does not read).
  std::vector<Matrix> backward(const Cache& cache, std::span<const Matrix> states, double d_mu, double d_log_var) {
    RowVector dv = mlp_.backward(cache.mlp, d_mu, d_log_var, true);
    std::vector<Matrix> d_states(states.size());
    if (kind_ == HeadKind::sft) {
      Matrix d_last = Matrix::Zero(states.back().rows(), states.back().cols());
      d_last.row(0) = dv;
      d_states.back() = std::move(d_last);
      return d_states;
    }
    RowVector q = query_.value.row(0);
    RowVector dq = RowVector::Zero(q.size());
    Matrix d_fused = multi_pool_backward(cache.fused, config_.pooling, q, cache.pool, dv, &dq);
    query_.grad.row(0) += dq;
    d_fused /= static_cast<double>(config_.top_k);
    const std::size_t n = states.size();
    for (std::size_t i = n - static_cast<std::size_t>(config_.top_k); i < n; ++i) d_states[i] = d_fused;
    return d_states;
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    if (kind_ == HeadKind::fusion) out.push_back({"head.attention_query", "head", &query_});
    mlp_.collect(out, "head.mlp");
    return out;
  }

  GaussianMlp& mlp() { return mlp_; }
  Param& attention_query() { return query_; }

 private:
  HeadKind kind_ = HeadKind::fusion;
  FusionConfig config_;
  Param query_;
  GaussianMlp mlp_;
};

// Regression on an already pooled vector.
inline GaussianPrediction regress(const GaussianMlp& mlp, const RowVector& v_seq, EncodeMode mode, Rng& rng) {
  return mlp.forward(v_seq, mode, rng);
}

}  // namespace qospred
