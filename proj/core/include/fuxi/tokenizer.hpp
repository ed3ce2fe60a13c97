#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fuxi/ops.hpp"

namespace fuxi {

// Splits raw bytes into pre-tokens: runs of letters, whole digit runs, and
// punctuation/symbol runs, each taking at most one preceding ASCII space.
// Concatenating the result always reproduces `text`.
std::vector<std::string> pretokenize(std::string_view text);

// Number of whitespace-delimited words in `text`.
std::size_t count_words(std::string_view text);

struct Merge {
  TokenId left = 0;
  TokenId right = 0;
  friend bool operator==(const Merge&, const Merge&) = default;
};

// Byte-level BPE state. Ids 0..255 are raw bytes, id 256+r is the merge of
// rank r, and the special tokens follow the merged ids.
class Tokenizer {
 public:
  static constexpr std::size_t kByteVocab = 256;
  static constexpr std::string_view kEndOfDocument = "<|endofdoc|>";
  static constexpr std::string_view kPad = "<|pad|>";

  Tokenizer();
  explicit Tokenizer(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const noexcept { return merges_; }
  std::size_t merge_count() const noexcept { return merges_.size(); }
  // 256 + number of merges.
  std::size_t base_vocab_size() const noexcept { return kByteVocab + merges_.size(); }
  // Including special tokens.
  std::size_t vocab_size() const noexcept { return base_vocab_size() + specials_.size(); }

  TokenId eod_id() const noexcept { return static_cast<TokenId>(base_vocab_size()); }
  TokenId pad_id() const noexcept { return static_cast<TokenId>(base_vocab_size() + 1); }
  const std::vector<std::string>& special_tokens() const noexcept { return specials_; }

  // Byte string spelled by a non-special token.
  const std::string& token_bytes(TokenId id) const;
  bool is_special(TokenId id) const noexcept;

  std::vector<TokenId> encode(std::string_view text) const;
  // Special tokens decode to their printable names.
  std::string decode(std::span<const TokenId> ids) const;

  // Tokenizer restricted to the first k merges.
  Tokenizer truncated(std::size_t k) const;

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);
  std::string serialize() const;
  static Tokenizer deserialize(std::string_view text);

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.merges_ == b.merges_ && a.specials_ == b.specials_;
  }

 private:
  void encode_pretoken(std::string_view piece, std::vector<TokenId>& out) const;

  std::vector<Merge> merges_;
  std::vector<std::string> specials_;
  std::vector<std::string> token_bytes_;
  std::unordered_map<std::uint64_t, TokenId> rank_of_pair_;
};

// Greedy most-frequent-pair training within pre-token boundaries. Stops
// after n_merges rounds or once no pair occurs at least twice. Ties go to the
// lexicographically smallest (left id, right id).
Tokenizer train_bbpe(const std::vector<std::string>& corpus, std::size_t n_merges);

struct LanguageFertility {
  std::size_t tokens = 0;
  std::size_t words = 0;
  // Unset when the language has no words.
  std::optional<double> fertility;
};

struct FertilityReport {
  std::map<std::string, LanguageFertility> languages;
  // Language codes in first-seen order.
  std::vector<std::string> order;
};

struct TaggedText {
  std::string lang;
  std::string text;
};

FertilityReport fertility(const Tokenizer& tok, const std::vector<TaggedText>& docs);

}  // namespace fuxi
