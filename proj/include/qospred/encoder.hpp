#pragma once

// Input sequence assembly and a small pre-LayerNorm transformer encoder that
// exposes every block output. The encoder is trainable (explicit backward
// pass) and sits behind the Backbone interface so that external encoders can
// be plugged in for inference.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tokenizer.hpp"

namespace qospred {

struct EncoderConfig {
  int num_layers = 2;
  int hidden_dim = 32;
  int num_heads = 4;
  int ffn_dim = 0;  // 0 selects 4 * hidden_dim
  int block_size = 128;
  int vocab_size = 0;
  double dropout_p = 0.1;
  std::uint64_t seed = 42;

  int ffn_width() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "encoder_backbone", what); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (hidden_dim < 8) fail("hidden_dim must be >= 8");
    if (num_heads < 1 || hidden_dim % num_heads != 0) fail("num_heads must divide hidden_dim");
    if (block_size < 8) fail("block_size must be >= 8");
    if (vocab_size < Tokenizer::kNumSpecial) fail("vocab_size must cover the special tokens");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
    if (ffn_dim < 0) fail("ffn_dim must be >= 0");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim}, {"num_heads", c.num_heads},
                     {"ffn_dim", c.ffn_dim},       {"block_size", c.block_size}, {"vocab_size", c.vocab_size},
                     {"dropout_p", c.dropout_p},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.block_size = j.value("block_size", c.block_size);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.seed = j.value("seed", c.seed);
}

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> mask;  // 1 = real token

  // Real tokens always form a prefix.
  int real_length() const {
    int n = 0;
    for (int m : mask) n += m != 0;
    return n;
  }
};

// [BOS] user [SEP] service [EOS] [PAD]...; when too long, service tokens are
// dropped from the right first, then user tokens.
template <SequenceTokenizer Tok>
TokenSequence assemble_sequence(std::string_view user_text, std::string_view service_text, const Tok& tokenizer,
                                int block_size) {
  if (block_size < 4)
    throw Error(ErrorKind::config, "encoder_backbone",
                "block_size " + std::to_string(block_size) + " cannot hold the three markers plus one token");
  std::vector<int> user = tokenizer.encode(user_text);
  std::vector<int> service = tokenizer.encode(service_text);
  const std::size_t budget = static_cast<std::size_t>(block_size) - 3;
  if (user.size() + service.size() > budget) {
    if (user.size() >= budget) {
      user.resize(budget);
      service.clear();
    } else {
      service.resize(budget - user.size());
    }
  }
  TokenSequence seq;
  seq.ids.reserve(static_cast<std::size_t>(block_size));
  seq.ids.push_back(tokenizer.bos_id());
  seq.ids.insert(seq.ids.end(), user.begin(), user.end());
  seq.ids.push_back(tokenizer.sep_id());
  seq.ids.insert(seq.ids.end(), service.begin(), service.end());
  seq.ids.push_back(tokenizer.eos_id());
  seq.mask.assign(seq.ids.size(), 1);
  seq.ids.resize(static_cast<std::size_t>(block_size), tokenizer.pad_id());
  seq.mask.resize(static_cast<std::size_t>(block_size), 0);
  return seq;
}

struct LayerStates {
  std::vector<Matrix> states;  // one block_size x d matrix per encoder block
  std::vector<int> mask;
};

struct BackboneDescriptor {
  int num_layers = 0;
  int hidden_dim = 0;
};

// Plug-in contract for encoders: given a token sequence, return the per-block
// hidden states. `stream` selects the dropout RNG stream in MC mode.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual BackboneDescriptor descriptor() const = 0;
  virtual LayerStates encode(const TokenSequence& seq, EncodeMode mode, std::uint64_t stream) const = 0;
};

// Which parameter groups receive gradient updates.
struct TrainableSet {
  std::vector<bool> layers;
  bool embedding = true;
  bool layernorm = true;

  static TrainableSet all(int num_layers) { return {std::vector<bool>(static_cast<std::size_t>(num_layers), true)}; }

  bool contains_group(std::string_view group) const {
    if (group == "embedding") return embedding;
    if (group == "layernorm") return layernorm;
    if (group.starts_with("layer.")) {
      auto idx = static_cast<std::size_t>(std::stoi(std::string(group.substr(6))));
      return idx < layers.size() && layers[idx];
    }
    return true;
  }
};

class TinyBackbone final : public Backbone {
 public:
  static constexpr double kEmbeddingInitStd = 0.5;

  struct Block {
    LayerNorm ln1;
    Linear query;
    Linear key;
    Linear value;
    Linear out;
    LayerNorm ln2;
    Linear ffn_in;
    Linear ffn_out;
  };

  struct BlockCache {
    Matrix input;
    LayerNorm::Cache ln1;
    Matrix normed1;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, rows x rows
    Matrix context;
    Matrix attn_drop;
    Matrix mid;
    LayerNorm::Cache ln2;
    Matrix normed2;
    Matrix pre_act;
    Matrix act;
    Matrix ffn_drop;
  };

  struct Trace {
    std::vector<int> ids;
    std::vector<int> mask;
    Matrix embed_drop;
    std::vector<BlockCache> blocks;
    std::vector<Matrix> outputs;
  };

  TinyBackbone() = default;

  explicit TinyBackbone(const EncoderConfig& config) : config_(config) {
    config_.validate();
    const int d = config_.hidden_dim;
    const int f = config_.ffn_width();
    token_embedding_.resize(config_.vocab_size, d);
    position_embedding_.resize(config_.block_size, d);
    blocks_.resize(static_cast<std::size_t>(config_.num_layers));
    for (auto& b : blocks_) {
      b.ln1.init(d);
      b.query.init(d, d);
      b.key.init(d, d);
      b.value.init(d, d);
      b.out.init(d, d);
      b.ln2.init(d);
      b.ffn_in.init(d, f);
      b.ffn_out.init(f, d);
    }
    Rng rng(derive_seed(config_.seed, 0xe11c0de));
    fill_normal(token_embedding_.value, rng, kEmbeddingInitStd);
    fill_normal(position_embedding_.value, rng, kEmbeddingInitStd);
    for (auto& b : blocks_)
      for (Linear* l : {&b.query, &b.key, &b.value, &b.out, &b.ffn_in, &b.ffn_out})
        fill_normal(l->weight.value, rng, 1.0 / std::sqrt(static_cast<double>(l->weight.value.rows())));
  }

  const EncoderConfig& config() const { return config_; }

  BackboneDescriptor descriptor() const override { return {config_.num_layers, config_.hidden_dim}; }

  // Analytic parameter count for the declared architecture.
  static std::size_t parameter_count(const EncoderConfig& c) {
    const std::size_t d = static_cast<std::size_t>(c.hidden_dim);
    const std::size_t f = static_cast<std::size_t>(c.ffn_width());
    const std::size_t embed = (static_cast<std::size_t>(c.vocab_size) + static_cast<std::size_t>(c.block_size)) * d;
    const std::size_t per_block = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d);
    return embed + static_cast<std::size_t>(c.num_layers) * per_block;
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    out.push_back({"embedding.token", "embedding", &token_embedding_});
    out.push_back({"embedding.position", "embedding", &position_embedding_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string prefix = "layers." + std::to_string(i);
      const std::string group = "layer." + std::to_string(i);
      auto& b = blocks_[i];
      b.ln1.collect(out, prefix + ".ln1");
      b.query.collect(out, prefix + ".attn.query", group);
      b.key.collect(out, prefix + ".attn.key", group);
      b.value.collect(out, prefix + ".attn.value", group);
      b.out.collect(out, prefix + ".attn.out", group);
      b.ln2.collect(out, prefix + ".ln2");
      b.ffn_in.collect(out, prefix + ".ffn.in", group);
      b.ffn_out.collect(out, prefix + ".ffn.out", group);
    }
    return out;
  }

  LayerStates encode(const TokenSequence& seq, EncodeMode mode, std::uint64_t stream) const override {
    Rng rng(derive_seed(config_.seed, 0xd20b, stream));
    auto trace = forward(seq.ids, seq.mask, mode, rng);
    return {std::move(trace.outputs), seq.mask};
  }

  // Stream drawn from an internal call counter.
  LayerStates encode(const TokenSequence& seq, EncodeMode mode) const {
    return encode(seq, mode, call_counter_.fetch_add(1, std::memory_order_relaxed));
  }

  // Runs the encoder over the given rows. Keys at masked positions are
  // excluded from attention, so rows at real positions never depend on
  // padding. Training passes only the real prefix to save work.
  Trace forward(std::span<const int> ids, std::span<const int> mask, EncodeMode mode, Rng& rng) const {
    const auto rows = static_cast<Eigen::Index>(ids.size());
    if (rows == 0 || ids.size() != mask.size())
      throw Error(ErrorKind::input, "encoder_backbone", "ids and mask must be non-empty and equally long");
    if (rows > config_.block_size)
      throw Error(ErrorKind::input, "encoder_backbone",
                  "sequence length " + std::to_string(rows) + " exceeds block_size " +
                      std::to_string(config_.block_size));
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] < 0 || ids[i] >= config_.vocab_size)
        throw Error(ErrorKind::input, "encoder_backbone",
                    "token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                        " outside vocabulary of size " + std::to_string(config_.vocab_size));

    const int d = config_.hidden_dim;
    const bool drop = dropout_active(mode, config_.dropout_p);
    Trace trace;
    trace.ids.assign(ids.begin(), ids.end());
    trace.mask.assign(mask.begin(), mask.end());

    Matrix x(rows, d);
    for (Eigen::Index i = 0; i < rows; ++i)
      x.row(i) = token_embedding_.value.row(ids[static_cast<std::size_t>(i)]) + position_embedding_.value.row(i);
    if (drop) {
      trace.embed_drop = dropout_mask(rows, d, config_.dropout_p, rng);
      x.array() *= trace.embed_drop.array();
    }

    trace.blocks.resize(blocks_.size());
    trace.outputs.reserve(blocks_.size());
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      x = block_forward(blocks_[l], x, trace.mask, drop, rng, trace.blocks[l]);
      trace.outputs.push_back(x);
    }
    return trace;
  }

  // Backpropagates gradients w.r.t. each block output into parameter
  // gradients of the trainable groups. Gradients still flow through frozen
  // blocks so that the embedding group can learn.
  void backward(const Trace& trace, std::span<const Matrix> d_outputs, const TrainableSet& trainable) {
    if (d_outputs.size() != blocks_.size())
      throw Error(ErrorKind::input, "encoder_backbone", "one output gradient per block required");
    const auto rows = static_cast<Eigen::Index>(trace.ids.size());
    Matrix dx = Matrix::Zero(rows, config_.hidden_dim);
    for (std::size_t l = blocks_.size(); l-- > 0;) {
      if (d_outputs[l].size() != 0) dx += d_outputs[l];
      const bool active = l < trainable.layers.size() && trainable.layers[l];
      dx = block_backward(blocks_[l], trace.blocks[l], dx, active, trainable.layernorm);
    }
    if (!trainable.embedding) return;
    if (trace.embed_drop.size() != 0) dx.array() *= trace.embed_drop.array();
    for (Eigen::Index i = 0; i < rows; ++i) {
      token_embedding_.grad.row(trace.ids[static_cast<std::size_t>(i)]) += dx.row(i);
      position_embedding_.grad.row(i) += dx.row(i);
    }
  }

  std::vector<Block>& blocks() { return blocks_; }
  Param& token_embedding() { return token_embedding_; }
  Param& position_embedding() { return position_embedding_; }

 private:
  Matrix block_forward(const Block& b, const Matrix& x, const std::vector<int>& mask, bool drop, Rng& rng,
                       BlockCache& c) const {
    const Eigen::Index rows = x.rows();
    const int d = config_.hidden_dim;
    const int heads = config_.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.input = x;
    c.normed1 = b.ln1.forward(x, c.ln1);
    c.q = b.query.forward(c.normed1);
    c.k = b.key.forward(c.normed1);
    c.v = b.value.forward(c.normed1);
    c.context.resize(rows, d);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix scores = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index j = 0; j < rows; ++j)
        if (mask[static_cast<std::size_t>(j)] == 0) scores.col(j).setConstant(-std::numeric_limits<double>::infinity());
      Vector row_max = scores.rowwise().maxCoeff();
      Matrix p = (scores.colwise() - row_max).array().exp();
      Vector row_sum = p.rowwise().sum();
      p = p.array().colwise() / row_sum.array();
      c.context.middleCols(h * dh, dh) = p * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    Matrix attn = b.out.forward(c.context);
    if (drop) {
      c.attn_drop = dropout_mask(rows, d, config_.dropout_p, rng);
      attn.array() *= c.attn_drop.array();
    }
    c.mid = x + attn;
    c.normed2 = b.ln2.forward(c.mid, c.ln2);
    c.pre_act = b.ffn_in.forward(c.normed2);
    c.act = gelu(c.pre_act);
    Matrix ffn = b.ffn_out.forward(c.act);
    if (drop) {
      c.ffn_drop = dropout_mask(rows, d, config_.dropout_p, rng);
      ffn.array() *= c.ffn_drop.array();
    }
    return c.mid + ffn;
  }

  Matrix block_backward(Block& b, const BlockCache& c, const Matrix& dy, bool active, bool ln_active) {
    const Eigen::Index rows = dy.rows();
    const int d = config_.hidden_dim;
    const int heads = config_.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // out = mid + drop(ffn_out(gelu(ffn_in(ln2(mid)))))
    Matrix d_ffn = dy;
    if (c.ffn_drop.size() != 0) d_ffn.array() *= c.ffn_drop.array();
    Matrix d_act = b.ffn_out.backward(c.act, d_ffn, active);
    Matrix d_pre = gelu_backward(c.pre_act, d_act);
    Matrix d_normed2 = b.ffn_in.backward(c.normed2, d_pre, active);
    Matrix d_mid = dy + b.ln2.backward(c.ln2, d_normed2, ln_active);

    // mid = x + drop(out(attention(ln1(x))))
    Matrix d_attn = d_mid;
    if (c.attn_drop.size() != 0) d_attn.array() *= c.attn_drop.array();
    Matrix d_context = b.out.backward(c.context, d_attn, active);
    Matrix dq(rows, d), dk(rows, d), dv(rows, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = c.probs[static_cast<std::size_t>(h)];
      auto dctx = d_context.middleCols(h * dh, dh);
      Matrix dp = dctx * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dctx;
      Vector row_dot = dp.cwiseProduct(p).rowwise().sum();
      Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    Matrix d_normed1 = b.query.backward(c.normed1, dq, active);
    d_normed1 += b.key.backward(c.normed1, dk, active);
    d_normed1 += b.value.backward(c.normed1, dv, active);
    return d_mid + b.ln1.backward(c.ln1, d_normed1, ln_active);
  }

  EncoderConfig config_;
  Param token_embedding_;
  Param position_embedding_;
  std::vector<Block> blocks_;
  mutable std::atomic<std::uint64_t> call_counter_{0};

 public:
  TinyBackbone(const TinyBackbone& o)
      : config_(o.config_),
        token_embedding_(o.token_embedding_),
        position_embedding_(o.position_embedding_),
        blocks_(o.blocks_),
        call_counter_(o.call_counter_.load()) {}
  TinyBackbone& operator=(const TinyBackbone& o) {
    config_ = o.config_;
    token_embedding_ = o.token_embedding_;
    position_embedding_ = o.position_embedding_;
    blocks_ = o.blocks_;
    call_counter_ = o.call_counter_.load();
    return *this;
  }
  TinyBackbone(TinyBackbone&& o) noexcept
      : config_(o.config_),
        token_embedding_(std::move(o.token_embedding_)),
        position_embedding_(std::move(o.position_embedding_)),
        blocks_(std::move(o.blocks_)),
        call_counter_(o.call_counter_.load()) {}
  TinyBackbone& operator=(TinyBackbone&& o) noexcept {
    config_ = o.config_;
    token_embedding_ = std::move(o.token_embedding_);
    position_embedding_ = std::move(o.position_embedding_);
    blocks_ = std::move(o.blocks_);
    call_counter_ = o.call_counter_.load();
    return *this;
  }
};

}  // namespace qospred
