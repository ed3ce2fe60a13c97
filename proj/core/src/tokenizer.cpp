#include "fuxi/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "fuxi/errors.hpp"

namespace fuxi {

namespace {

enum class CharClass { Space, Letter, Digit, Symbol };

struct Unit {
  std::size_t begin;
  std::size_t length;
  CharClass cls;
};

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_punctuation_codepoint(std::uint32_t cp) {
  return (cp >= 0x00A0 && cp <= 0x00BF) || cp == 0x00D7 || cp == 0x00F7 || (cp >= 0x2000 && cp <= 0x206F) ||
         (cp >= 0x20A0 && cp <= 0x20CF) || (cp >= 0x2190 && cp <= 0x2BFF) || (cp >= 0x3000 && cp <= 0x303F) ||
         (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0x1F000 && cp <= 0x1FAFF) ||
         cp == 0x0964 || cp == 0x0965 || cp == 0x060C || cp == 0x061F || cp == 0x06D4;
}

// Decodes one UTF-8 sequence at `pos`; invalid or truncated sequences yield a
// single raw byte classified as a symbol.
Unit next_unit(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    CharClass cls = CharClass::Symbol;
    if (is_ascii_space(b0)) {
      cls = CharClass::Space;
    } else if ((b0 >= 'a' && b0 <= 'z') || (b0 >= 'A' && b0 <= 'Z')) {
      cls = CharClass::Letter;
    } else if (b0 >= '0' && b0 <= '9') {
      cls = CharClass::Digit;
    }
    return {pos, 1, cls};
  }
  std::size_t len = 0;
  std::uint32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {pos, 1, CharClass::Symbol};
  }
  if (pos + len > s.size()) return {pos, 1, CharClass::Symbol};
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return {pos, 1, CharClass::Symbol};
    cp = (cp << 6) | (b & 0x3F);
  }
  const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
  if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {pos, 1, CharClass::Symbol};
  return {pos, len, is_punctuation_codepoint(cp) ? CharClass::Symbol : CharClass::Letter};
}

std::vector<Unit> split_units(std::string_view s) {
  std::vector<Unit> units;
  for (std::size_t pos = 0; pos < s.size();) {
    units.push_back(next_unit(s, pos));
    pos += units.back().length;
  }
  return units;
}

constexpr std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
}

std::string to_hex(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xF]);
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::optional<std::string> from_hex(std::string_view hex) {
  if (hex.empty() || hex.size() % 2 != 0) return std::nullopt;
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = hex_value(hex[i]), lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<char>(hi * 16 + lo));
  }
  return out;
}

constexpr std::string_view kFormatVersion = "fuxi-bbpe v1";
constexpr std::string_view kSpecialSection = "[special]";

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  const auto units = split_units(text);
  std::vector<std::string> out;
  const std::size_t n = units.size();
  auto emit = [&](std::size_t from, std::size_t to) {
    const std::size_t b = units[from].begin;
    const std::size_t e = units[to - 1].begin + units[to - 1].length;
    out.emplace_back(text.substr(b, e - b));
  };
  std::size_t i = 0;
  while (i < n) {
    const bool leading_space = text[units[i].begin] == ' ' && i + 1 < n && units[i + 1].cls != CharClass::Space;
    if (leading_space) {
      const CharClass cls = units[i + 1].cls;
      std::size_t j = i + 2;
      while (j < n && units[j].cls == cls) ++j;
      emit(i, j);
      i = j;
      continue;
    }
    if (units[i].cls == CharClass::Space) {
      std::size_t j = i + 1;
      while (j < n && units[j].cls == CharClass::Space) ++j;
      // Leave a final ASCII space to attach to the following run.
      if (j < n && j - 1 > i && text[units[j - 1].begin] == ' ') {
        emit(i, j - 1);
        i = j - 1;
      } else {
        emit(i, j);
        i = j;
      }
      continue;
    }
    const CharClass cls = units[i].cls;
    std::size_t j = i + 1;
    while (j < n && units[j].cls == cls) ++j;
    emit(i, j);
    i = j;
  }
  return out;
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (is_ascii_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

Tokenizer::Tokenizer() : Tokenizer(std::vector<Merge>{}) {}

Tokenizer::Tokenizer(std::vector<Merge> merges) : merges_(std::move(merges)) {
  specials_ = {std::string(kEndOfDocument), std::string(kPad)};
  token_bytes_.reserve(kByteVocab + merges_.size());
  for (std::size_t b = 0; b < kByteVocab; ++b) token_bytes_.emplace_back(1, static_cast<char>(b));
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto [l, rt] = merges_[r];
    const auto limit = static_cast<TokenId>(token_bytes_.size());
    if (l < 0 || rt < 0 || l >= limit || rt >= limit) {
      throw IndexError("merge " + std::to_string(r) + " references a token that does not exist yet");
    }
    token_bytes_.push_back(token_bytes_[static_cast<std::size_t>(l)] + token_bytes_[static_cast<std::size_t>(rt)]);
    rank_of_pair_.emplace(pair_key(l, rt), static_cast<TokenId>(r));
  }
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_bytes_.size()) {
    throw IndexError("token id " + std::to_string(id) + " is not a byte or merged token");
  }
  return token_bytes_[static_cast<std::size_t>(id)];
}

bool Tokenizer::is_special(TokenId id) const noexcept {
  return id >= 0 && static_cast<std::size_t>(id) >= base_vocab_size() && static_cast<std::size_t>(id) < vocab_size();
}

void Tokenizer::encode_pretoken(std::string_view piece, std::vector<TokenId>& out) const {
  std::vector<TokenId> syms;
  syms.reserve(piece.size());
  for (unsigned char c : piece) syms.push_back(static_cast<TokenId>(c));
  while (syms.size() > 1) {
    TokenId best_rank = -1;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank_of_pair_.find(pair_key(syms[i], syms[i + 1]));
      if (it != rank_of_pair_.end() && (best_rank < 0 || it->second < best_rank)) best_rank = it->second;
    }
    if (best_rank < 0) break;
    const Merge m = merges_[static_cast<std::size_t>(best_rank)];
    const TokenId merged = static_cast<TokenId>(kByteVocab) + best_rank;
    std::size_t w = 0;
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == m.left && syms[i + 1] == m.right) {
        syms[w++] = merged;
        ++i;
      } else {
        syms[w++] = syms[i];
      }
    }
    syms.resize(w);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& piece : pretokenize(text)) encode_pretoken(piece, ids);
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (is_special(id)) {
      out += specials_[static_cast<std::size_t>(id) - base_vocab_size()];
    } else if (id >= 0 && static_cast<std::size_t>(id) < base_vocab_size()) {
      out += token_bytes_[static_cast<std::size_t>(id)];
    } else {
      throw IndexError("decode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab_size()));
    }
  }
  return out;
}

Tokenizer Tokenizer::truncated(std::size_t k) const {
  k = std::min(k, merges_.size());
  return Tokenizer(std::vector<Merge>(merges_.begin(), merges_.begin() + static_cast<std::ptrdiff_t>(k)));
}

std::string Tokenizer::serialize() const {
  std::string out(kFormatVersion);
  out += '\n';
  for (const auto& m : merges_) {
    out += to_hex(token_bytes_[static_cast<std::size_t>(m.left)]);
    out += ' ';
    out += to_hex(token_bytes_[static_cast<std::size_t>(m.right)]);
    out += '\n';
  }
  out += kSpecialSection;
  out += '\n';
  for (const auto& s : specials_) {
    out += s;
    out += '\n';
  }
  return out;
}

Tokenizer Tokenizer::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line != kFormatVersion) {
    throw ParseError("tokenizer file must start with '" + std::string(kFormatVersion) + "'", 1);
  }
  ++lineno;
  std::unordered_map<std::string, TokenId> id_of;
  for (std::size_t b = 0; b < kByteVocab; ++b) id_of.emplace(std::string(1, static_cast<char>(b)), static_cast<TokenId>(b));
  std::vector<Merge> merges;
  std::vector<std::string> specials;
  bool in_specials = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (in_specials) {
      if (!line.empty()) specials.push_back(line);
      continue;
    }
    if (line == kSpecialSection) {
      in_specials = true;
      continue;
    }
    const auto space = line.find(' ');
    if (space == std::string::npos) throw ParseError("expected two hex fields", lineno);
    const auto left = from_hex(std::string_view(line).substr(0, space));
    const auto right = from_hex(std::string_view(line).substr(space + 1));
    if (!left || !right) throw ParseError("malformed hex byte string", lineno);
    auto li = id_of.find(*left);
    auto ri = id_of.find(*right);
    if (li == id_of.end() || ri == id_of.end()) throw ParseError("merge refers to an unknown token", lineno);
    const auto new_id = static_cast<TokenId>(kByteVocab + merges.size());
    merges.push_back({li->second, ri->second});
    if (!id_of.emplace(*left + *right, new_id).second) throw ParseError("duplicate merged token", lineno);
  }
  if (!in_specials) throw ParseError("missing " + std::string(kSpecialSection) + " section", lineno);
  Tokenizer tok(std::move(merges));
  if (specials != tok.specials_) throw ParseError("unexpected special tokens", lineno);
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write tokenizer to " + path.string());
  out << serialize();
  if (!out) throw InputError("failed writing tokenizer to " + path.string());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tokenizer file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Tokenizer train_bbpe(const std::vector<std::string>& corpus, std::size_t n_merges) {
  if (corpus.empty()) throw InputError("train_bbpe: empty corpus");

  std::unordered_map<std::string, std::size_t> word_index;
  std::vector<std::vector<TokenId>> syms;
  std::vector<std::int64_t> counts;
  for (const auto& doc : corpus) {
    for (auto& piece : pretokenize(doc)) {
      auto [it, inserted] = word_index.emplace(piece, syms.size());
      if (inserted) {
        std::vector<TokenId> s;
        for (unsigned char c : piece) s.push_back(static_cast<TokenId>(c));
        syms.push_back(std::move(s));
        counts.push_back(0);
      }
      ++counts[it->second];
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
  for (std::uint32_t w = 0; w < syms.size(); ++w) {
    const auto& s = syms[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto key = pair_key(s[i], s[i + 1]);
      pair_count[key] += counts[w];
      auto& ws = pair_words[key];
      if (ws.empty() || ws.back() != w) ws.push_back(w);
    }
  }

  using Entry = std::tuple<std::int64_t, TokenId, TokenId>;  // (-count, left, right)
  std::set<Entry> queue;
  for (const auto& [key, c] : pair_count) {
    queue.emplace(-c, static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xFFFFFFFFu));
  }

  std::vector<Merge> merges;
  std::vector<std::string> bytes_of;
  for (std::size_t b = 0; b < Tokenizer::kByteVocab; ++b) bytes_of.emplace_back(1, static_cast<char>(b));
  std::unordered_set<std::string> known(bytes_of.begin(), bytes_of.end());
  std::unordered_set<std::uint64_t> banned;
  std::vector<std::size_t> stamp(syms.size(), static_cast<std::size_t>(-1));

  while (merges.size() < n_merges && !queue.empty()) {
    const auto [neg, left, right] = *queue.begin();
    if (-neg < 2) break;
    const auto key = pair_key(left, right);
    queue.erase(queue.begin());
    std::string joined = bytes_of[static_cast<std::size_t>(left)] + bytes_of[static_cast<std::size_t>(right)];
    // A second route to an existing byte string would make the vocabulary
    // ambiguous on disk; such pairs are never merged.
    if (known.count(joined)) {
      banned.insert(key);
      continue;
    }
    const auto merged = static_cast<TokenId>(bytes_of.size());
    const std::size_t round = merges.size();
    merges.push_back({left, right});
    known.insert(joined);
    bytes_of.push_back(std::move(joined));

    std::unordered_map<std::uint64_t, std::int64_t> delta;
    auto affected = std::move(pair_words[key]);
    pair_words.erase(key);
    for (auto w : affected) {
      if (stamp[w] == round) continue;
      stamp[w] = round;
      auto& s = syms[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < s.size() && !present; ++i) present = s[i] == left && s[i + 1] == right;
      if (!present) continue;
      const auto c = counts[w];
      for (std::size_t i = 0; i + 1 < s.size(); ++i) delta[pair_key(s[i], s[i + 1])] -= c;
      std::vector<TokenId> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = std::move(next);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const auto k = pair_key(s[i], s[i + 1]);
        delta[k] += c;
        if (s[i] == merged || s[i + 1] == merged) {
          auto& ws = pair_words[k];
          if (ws.empty() || ws.back() != w) ws.push_back(w);
        }
      }
    }
    for (const auto& [k, d] : delta) {
      if (d == 0) continue;
      auto& c = pair_count[k];
      const auto l = static_cast<TokenId>(k >> 32), r = static_cast<TokenId>(k & 0xFFFFFFFFu);
      const bool live = !banned.count(k);
      if (c > 0 && live) queue.erase({-c, l, r});
      c += d;
      if (c > 0 && live) queue.emplace(-c, l, r);
    }
  }
  return Tokenizer(std::move(merges));
}

FertilityReport fertility(const Tokenizer& tok, const std::vector<TaggedText>& docs) {
  FertilityReport report;
  for (const auto& doc : docs) {
    auto [it, inserted] = report.languages.try_emplace(doc.lang);
    if (inserted) report.order.push_back(doc.lang);
    it->second.tokens += tok.encode(doc.text).size();
    it->second.words += count_words(doc.text);
  }
  for (auto& [lang, f] : report.languages) {
    if (f.words > 0) f.fertility = static_cast<double>(f.tokens) / static_cast<double>(f.words);
  }
  return report;
}

}  // namespace fuxi
