#pragma once

// Tokenizer + encoder + regression head, with single-file checkpoints and a
// JSON sidecar describing the configuration and vocabulary.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "encoder.hpp"
#include "error.hpp"
#include "fusion_head.hpp"
#include "templater.hpp"
#include "tokenizer.hpp"

namespace qospred {

class QosModel {
 public:
  QosModel() = default;

  // vocab_size in `encoder` is overwritten with the tokenizer's size.
  QosModel(Tokenizer tokenizer, EncoderConfig encoder, HeadKind head_kind, const FusionConfig& fusion)
      : tokenizer_(std::move(tokenizer)) {
    encoder.vocab_size = tokenizer_.vocab_size();
    backbone_ = TinyBackbone(encoder);
    head_ = RegressionHead(head_kind, fusion, encoder.num_layers, encoder.hidden_dim, encoder.seed);
  }

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const TinyBackbone& backbone() const { return backbone_; }
  TinyBackbone& backbone() { return backbone_; }
  const RegressionHead& head() const { return head_; }
  RegressionHead& head() { return head_; }
  const EncoderConfig& encoder_config() const { return backbone_.config(); }

  TokenSequence sequence(std::string_view feature) const {
    auto [user, service] = split_feature(feature);
    return assemble_sequence(user, service, tokenizer_, backbone_.config().block_size);
  }

  // One stochastic (or deterministic) pass. Only the real-token prefix is
  // run through the encoder; padded rows cannot reach the head.
  GaussianPrediction predict(const TokenSequence& seq, EncodeMode mode, std::uint64_t stream) const {
    Rng rng(derive_seed(backbone_.config().seed, 0x9a55, stream));
    const auto n = static_cast<std::size_t>(seq.real_length());
    auto trace = backbone_.forward(std::span(seq.ids).first(n), std::span(seq.mask).first(n), mode, rng);
    return head_.forward(trace.outputs, trace.mask, mode, rng);
  }

  std::vector<ParamRef> parameters() {
    auto params = backbone_.parameters();
    for (auto& p : head_.parameters()) params.push_back(p);
    return params;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
  }

  nlohmann::json sidecar() const {
    nlohmann::json j;
    j["format"] = "qospred-checkpoint";
    j["version"] = 1;
    j["encoder"] = backbone_.config();
    j["head"] = to_string(head_.kind());
    j["fusion"] = head_.config();
    j["vocab"] = tokenizer_.tokens();
    return j;
  }

  void save(const std::filesystem::path& path) {
    write_binary(path);
    std::ofstream side(sidecar_path(path));
    if (!side) throw Error(ErrorKind::io, "encoder_backbone", "cannot write '" + sidecar_path(path).string() + "'");
    side << sidecar().dump(2) << '\n';
  }

  static QosModel load(const std::filesystem::path& path) {
    std::ifstream side(sidecar_path(path));
    if (!side) throw Error(ErrorKind::io, "encoder_backbone", "cannot open '" + sidecar_path(path).string() + "'");
    nlohmann::json j;
    try {
      side >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, "encoder_backbone", sidecar_path(path).string() + ": " + e.what());
    }
    if (j.value("format", std::string()) != "qospred-checkpoint")
      throw Error(ErrorKind::schema, "encoder_backbone", sidecar_path(path).string() + ": not a checkpoint sidecar");
    auto tokenizer = Tokenizer::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    auto encoder = j.at("encoder").get<EncoderConfig>();
    auto fusion = j.at("fusion").get<FusionConfig>();
    QosModel model(std::move(tokenizer), encoder, parse_head_kind(j.at("head").get<std::string>()), fusion);
    model.read_binary(path);
    return model;
  }

  static std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
  }

 private:
  static constexpr char kMagic[8] = {'Q', 'O', 'S', 'B', 'C', 'K', 'P', 'T'};

  // Layout (little-endian): magic, u32 section count, then per section:
  // u32 name length, name, u32 tensor count, and per tensor: u32 name length,
  // name, u64 rows, u64 cols, rows*cols f64 in column-major order.
  void write_binary(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "encoder_backbone", "cannot write '" + path.string() + "'");
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto put_str = [&](const std::string& s) {
      put_u32(static_cast<std::uint32_t>(s.size()));
      out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    auto put_section = [&](const std::string& name, const std::vector<ParamRef>& params) {
      put_str(name);
      put_u32(static_cast<std::uint32_t>(params.size()));
      for (const auto& p : params) {
        put_str(p.name);
        put_u64(static_cast<std::uint64_t>(p.param->value.rows()));
        put_u64(static_cast<std::uint64_t>(p.param->value.cols()));
        out.write(reinterpret_cast<const char*>(p.param->value.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.param->value.size())));
      }
    };
    out.write(kMagic, sizeof kMagic);
    put_u32(2);
    put_section("backbone", backbone_.parameters());
    put_section("head", head_.parameters());
    if (!out) throw Error(ErrorKind::io, "encoder_backbone", "write failed for '" + path.string() + "'");
  }

  void read_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "encoder_backbone", "cannot open '" + path.string() + "'");
    auto fail = [&](const std::string& what) {
      throw Error(ErrorKind::schema, "encoder_backbone", path.string() + ": " + what);
    };
    auto get = [&](void* dst, std::size_t n) {
      in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
      if (!in) fail("truncated checkpoint");
    };
    auto get_u32 = [&] { std::uint32_t v = 0; get(&v, sizeof v); return v; };
    auto get_u64 = [&] { std::uint64_t v = 0; get(&v, sizeof v); return v; };
    auto get_str = [&] {
      std::string s(get_u32(), '\0');
      get(s.data(), s.size());
      return s;
    };
    char magic[8];
    get(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) fail("bad magic");

    std::map<std::string, std::map<std::string, Param*>> expected;
    for (auto& p : backbone_.parameters()) expected["backbone"][p.name] = p.param;
    for (auto& p : head_.parameters()) expected["head"][p.name] = p.param;

    const auto sections = get_u32();
    std::size_t loaded = 0;
    for (std::uint32_t s = 0; s < sections; ++s) {
      const auto section = get_str();
      auto sec = expected.find(section);
      if (sec == expected.end()) fail("unexpected section '" + section + "'");
      const auto count = get_u32();
      for (std::uint32_t t = 0; t < count; ++t) {
        const auto name = get_str();
        const auto rows = get_u64();
        const auto cols = get_u64();
        auto it = sec->second.find(name);
        if (it == sec->second.end()) fail("unexpected tensor '" + section + "/" + name + "'");
        Param& p = *it->second;
        if (rows != static_cast<std::uint64_t>(p.value.rows()) || cols != static_cast<std::uint64_t>(p.value.cols()))
          fail("shape mismatch for '" + name + "'");
        get(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
        ++loaded;
      }
    }
    std::size_t total = 0;
    for (auto& [_, m] : expected) total += m.size();
    if (loaded != total) fail("checkpoint is missing tensors");
  }

  Tokenizer tokenizer_;
  TinyBackbone backbone_;
  RegressionHead head_;
};

}  // namespace qospred
