#pragma once

#include <algorithm>
#include <cctype>
#include <concepts>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "error.hpp"

namespace qospred {

// Anything that can turn text into ids and name the four structural markers.
template <typename T>
concept SequenceTokenizer = requires(const T& t, std::string_view text) {
  { t.encode(text) } -> std::convertible_to<std::vector<int>>;
  { t.pad_id() } -> std::convertible_to<int>;
  { t.bos_id() } -> std::convertible_to<int>;
  { t.sep_id() } -> std::convertible_to<int>;
  { t.eos_id() } -> std::convertible_to<int>;
  { t.vocab_size() } -> std::convertible_to<int>;
};

// Splits on whitespace; inside a chunk, runs of alphanumerics form one token
// and may absorb '.', '-', '_' or ':' when followed by another alphanumeric
// (so "1.2.3.4", "38.0" and "-97.0" stay whole). Every other punctuation
// character is its own token.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  auto joiner = [](char c) { return c == '.' || c == '-' || c == '_' || c == ':'; };
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const bool signed_number = c == '-' && i + 1 < n && digit(text[i + 1]);
    if (alnum(c) || signed_number) {
      std::size_t j = i + 1;
      while (j < n) {
        if (alnum(text[j])) {
          ++j;
        } else if (joiner(text[j]) && j + 1 < n && alnum(text[j + 1])) {
          j += 2;
        } else {
          break;
        }
      }
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kSep = 3;
  static constexpr int kEos = 4;
  static constexpr int kNumSpecial = 5;

  Tokenizer() : tokens_{"[PAD]", "[UNK]", "[BOS]", "[SEP]", "[EOS]"} { reindex(); }

  // Frequency-ranked vocabulary (ties broken lexicographically) over the
  // given texts. `max_size` includes the special tokens.
  template <typename Range>
  static Tokenizer build(const Range& texts, std::size_t max_size = 30000, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts)
      for (auto& w : split_words(text)) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Tokenizer tok;
    for (auto& [word, count] : ranked) {
      if (tok.tokens_.size() >= max_size) break;
      if (count < min_count) break;
      tok.tokens_.push_back(word);
    }
    tok.reindex();
    return tok;
  }

  static Tokenizer from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kNumSpecial || tokens[kPad] != "[PAD]" || tokens[kUnk] != "[UNK]" ||
        tokens[kBos] != "[BOS]" || tokens[kSep] != "[SEP]" || tokens[kEos] != "[EOS]")
      throw Error(ErrorKind::schema, "encoder_backbone", "vocabulary does not start with the special tokens");
    Tokenizer tok;
    tok.tokens_ = std::move(tokens);
    tok.reindex();
    if (tok.index_.size() != tok.tokens_.size())
      throw Error(ErrorKind::schema, "encoder_backbone", "vocabulary contains duplicate tokens");
    return tok;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (auto& w : split_words(text)) {
      auto it = index_.find(w);
      ids.push_back(it == index_.end() ? kUnk : it->second);
    }
    return ids;
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return kPad; }
  int unk_id() const { return kUnk; }
  int bos_id() const { return kBos; }
  int sep_id() const { return kSep; }
  int eos_id() const { return kEos; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

static_assert(SequenceTokenizer<Tokenizer>);

}  // namespace qospred
