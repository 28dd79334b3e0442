#pragma once

// Dense building blocks shared by the encoder and the regression heads:
// trainable parameters, linear/layer-norm/GELU forward and backward passes,
// and portable random draws for initialization and dropout.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace qospred {

// Rows are tokens, columns are features.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Param {
  Matrix value;
  Matrix grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Parameter view used by the optimizer, checkpointing and group masking.
struct ParamRef {
  std::string name;
  std::string group;
  Param* param;
};

enum class EncodeMode { train, eval_deterministic, eval_mc };

inline bool dropout_active(EncodeMode mode, double p) { return mode != EncodeMode::eval_deterministic && p > 0.0; }

// Uniform in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double standard_normal(Rng& rng) {
  double u1 = 0.0;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * standard_normal(rng);
}

// Inverted dropout mask: entries are 0 or 1/(1-p).
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = uniform01(rng) < p ? 0.0 : keep;
  return mask;
}

// tanh approximation of GELU.
inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double inner = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Matrix gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

inline Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  return dy.cwiseProduct(x.unaryExpr([](double v) { return gelu_grad(v); }));
}

struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  void init(Eigen::Index in, Eigen::Index out) {
    weight.resize(in, out);
    bias.resize(1, out);
  }

  Matrix forward(const Matrix& x) const {
    Matrix y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  // Accumulates parameter gradients when `accumulate` is set; always returns dx.
  Matrix backward(const Matrix& x, const Matrix& dy, bool accumulate) {
    if (accumulate) {
      weight.grad.noalias() += x.transpose() * dy;
      bias.grad.row(0) += dy.colwise().sum();
    }
    return dy * weight.value.transpose();
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix, const std::string& group) {
    out.push_back({prefix + ".weight", group, &weight});
    out.push_back({prefix + ".bias", group, &bias});
  }
};

struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param gamma;  // 1 x d
  Param beta;   // 1 x d

  struct Cache {
    Matrix xhat;
    Vector inv_std;
  };

  void init(Eigen::Index d) {
    gamma.resize(1, d);
    gamma.value.setOnes();
    beta.resize(1, d);
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    const auto d = static_cast<double>(x.cols());
    Vector mean = x.rowwise().sum() / d;
    Matrix centered = x.colwise() - mean;
    Vector var = centered.array().square().rowwise().sum() / d;
    cache.inv_std = (var.array() + kEps).rsqrt();
    cache.xhat = centered.array().colwise() * cache.inv_std.array();
    Matrix y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Matrix backward(const Cache& cache, const Matrix& dy, bool accumulate) {
    if (accumulate) {
      gamma.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
      beta.grad.row(0) += dy.colwise().sum();
    }
    const auto d = static_cast<double>(dy.cols());
    Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    Vector sum_dxhat = dxhat.rowwise().sum();
    Vector sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).rowwise().sum();
    Matrix dx = (d * dxhat).colwise() - sum_dxhat;
    dx.array() -= cache.xhat.array().colwise() * sum_dxhat_xhat.array();
    dx = dx.array().colwise() * (cache.inv_std.array() / d);
    return dx;
  }

  void collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", "layernorm", &gamma});
    out.push_back({prefix + ".beta", "layernorm", &beta});
  }
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace qospred
