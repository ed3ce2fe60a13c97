#include "fuxi/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fuxi/errors.hpp"
#include "fuxi/random.hpp"

namespace fuxi::synth {

namespace {

struct Template {
  std::vector<std::string> onsets;
  std::vector<std::string> nuclei;
  std::vector<std::string> codas;
  int min_syllables = 1;
  int max_syllables = 3;
  std::string separator = " ";
  std::string terminal = ".";
  bool swapped = false;
  bool ideographic = false;
};

std::string utf8(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

const std::map<std::string, Template>& templates() {
  static const std::map<std::string, Template> t = {
      {"en",
       {{"", "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "w", "th", "sh", "st", "br", "tr"},
        {"a", "e", "i", "o", "u", "ea", "ou", "ee"},
        {"", "", "n", "t", "s", "r", "l", "nd", "ng", "ck"}}},
      {"es",
       {{"", "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ñ", "ll", "ch"},
        {"a", "e", "i", "o", "u", "á", "é", "ó", "ue", "ie"},
        {"", "", "n", "s", "r", "l"}}},
      {"fr",
       {{"", "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "ç", "qu"},
        {"a", "e", "é", "è", "i", "ou", "ai", "eu", "on", "an"},
        {"", "", "s", "t", "x", "r"}}},
      {"pt",
       {{"", "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "lh", "nh", "ç"},
        {"a", "e", "i", "o", "u", "ã", "õ", "ão", "ei", "é"},
        {"", "", "s", "m", "r"}}},
      {"id",
       {{"k", "t", "p", "m", "n", "s", "b", "d", "ng", "ny", "r", "l", "j", "h"},
        {"a", "i", "u", "e", "o"},
        {"", "", "n", "ng", "k", "h", "t"}, 2, 3}},
      {"vi",
       {{"", "ng", "nh", "th", "tr", "đ", "b", "c", "h", "l", "m", "n", "t", "v", "x", "qu", "gi"},
        {"a", "ă", "â", "ơ", "ư", "ô", "ê", "ạ", "ả", "ấ", "ề", "ộ", "ữ", "ó", "à"},
        {"", "n", "ng", "t", "c", "m", "nh", "ch"}, 1, 2}},
      {"de",
       {{"b", "d", "f", "g", "h", "k", "l", "m", "n", "r", "s", "sch", "st", "t", "w", "z", "pf"},
        {"a", "e", "i", "o", "u", "ä", "ö", "ü", "ei", "au", "ie"},
        {"", "n", "r", "t", "s", "ch", "ng", "ß", "tz"}}},
      {"hu",
       {{"b", "cs", "d", "f", "g", "gy", "h", "k", "l", "m", "n", "ny", "p", "r", "s", "sz", "t", "v", "z", "zs"},
        {"a", "á", "e", "é", "i", "o", "ö", "ő", "u", "ü", "ű"},
        {"", "k", "t", "n", "l", "r", "s"}, 2, 3, " ", ".", true}},
      {"it",
       {{"b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "gl", "sc", "ch"},
        {"a", "e", "i", "o", "u", "ià", "iò"},
        {"", "", "", "n", "l", "r"}, 2, 3}},
      {"sk",
       {{"b", "č", "d", "h", "j", "k", "l", "m", "n", "p", "r", "s", "š", "t", "v", "z", "ž", "st"},
        {"a", "á", "e", "é", "i", "o", "ô", "u", "y", "ý"},
        {"", "k", "t", "n", "l", "ľ", "m"}}},
      {"ru",
       {{"б", "в", "г", "д", "ж", "з", "к", "л", "м", "н", "п", "р", "с", "т", "х", "ч", "ш", "ст"},
        {"а", "е", "и", "о", "у", "ы", "я", "ю"},
        {"", "н", "т", "й", "л", "с", "р"}}},
      {"ar",
       {{"ب", "ت", "ج", "د", "ر", "س", "ف", "ق", "ك", "ل", "م", "ن", "ه", "و", "ي", "ع", "ح"},
        {"ا", "ي", "و", ""},
        {"", "ة", "ن", "ل", "م"}, 2, 3, " ", "؟", true}},
      {"bn",
       {{"ক", "খ", "গ", "চ", "জ", "ট", "ত", "দ", "ন", "প", "ব", "ম", "র", "ল", "স", "হ"},
        {"", "া", "ি", "ী", "ু", "ে", "ো"},
        {"", "", "ং", "্ত"}, 2, 3, " ", "।", true}},
      {"ta",
       {{"க", "ச", "ட", "த", "ப", "ம", "ன", "ய", "ர", "ல", "வ", "ழ", "ள", "ற"},
        {"", "ா", "ி", "ீ", "ு", "ெ", "ை"},
        {"", "", "ம்", "ன்", "ள்"}, 2, 4, " ", ".", true}},
      {"zh", {{}, {}, {}, 1, 2, "", "。", false, true}},
  };
  return t;
}

const Template& template_for(const std::string& code) {
  const auto& t = templates();
  auto it = t.find(code);
  if (it == t.end()) throw RegistryError("no synthetic template for language '" + code + "'");
  return it->second;
}

std::string make_word(const Template& t, Rng& rng) {
  const int span = t.max_syllables - t.min_syllables + 1;
  const int syllables = t.min_syllables + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    if (t.ideographic) {
      w += utf8(0x4E00 + static_cast<std::uint32_t>(rng.below(640)));
      continue;
    }
    w += t.onsets[rng.below(t.onsets.size())];
    w += t.nuclei[rng.below(t.nuclei.size())];
    if (s + 1 == syllables) w += t.codas[rng.below(t.codas.size())];
  }
  return w;
}

// Zipf-like concept index: p(k) ∝ 1/(k+1)^1.1.
class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += 1.0 / std::pow(static_cast<double>(k + 1), 1.1);
      cdf_[k] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }
  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) % cdf_.size();
  }

 private:
  std::vector<double> cdf_;
};

constexpr std::uint64_t kLexiconSeed = 20240816;

}  // namespace

const std::vector<std::string>& supported_languages() {
  static const std::vector<std::string> langs = {"ar", "bn", "es", "fr", "id", "pt", "ta", "vi",
                                                 "zh", "en", "de", "hu", "it", "ru", "sk"};
  return langs;
}

Lexicon build_lexicon(const std::string& code, std::uint64_t seed) {
  const Template& t = template_for(code);
  Rng rng(derive_seed(seed, code));
  Lexicon lex;
  lex.code = code;
  lex.separator = t.separator;
  lex.terminal = t.terminal;
  lex.final_pair_swapped = t.swapped;
  std::set<std::string> seen;
  while (lex.words.size() < kConceptCount) {
    auto w = make_word(t, rng);
    if (w.empty() || !seen.insert(w).second) continue;
    lex.words.push_back(std::move(w));
  }
  return lex;
}

std::vector<ConceptSentence> sample_sentences(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sentences"));
  ZipfSampler zipf(kConceptCount);
  std::vector<ConceptSentence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = 5 + rng.below(8);
    ConceptSentence s;
    for (std::size_t j = 0; j < len; ++j) {
      if (rng.uniform() < 0.06) {
        s.push_back(-static_cast<std::int64_t>(1 + rng.below(2999)));
      } else {
        s.push_back(static_cast<std::int64_t>(zipf(rng)));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string render(const Lexicon& lex, const ConceptSentence& sentence) {
  ConceptSentence order = sentence;
  if (lex.final_pair_swapped && order.size() >= 2) std::swap(order[order.size() - 1], order[order.size() - 2]);
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto c = order[i];
    // Digit runs always stand apart from ideographic neighbours.
    const bool number = c < 0;
    if (i > 0) out += (number && lex.separator.empty()) ? " " : lex.separator;
    if (number) {
      out += std::to_string(-c);
      if (lex.separator.empty() && i + 1 < order.size()) out += ' ';
    } else {
      out += lex.words[static_cast<std::size_t>(c)];
    }
  }
  out += lex.terminal;
  return out;
}

ParallelCorpus make_parallel(const std::vector<std::string>& languages, std::size_t rows, std::uint64_t seed) {
  ParallelCorpus pc;
  pc.languages = languages;
  std::vector<Lexicon> lexicons;
  for (const auto& code : languages) lexicons.push_back(build_lexicon(code, kLexiconSeed));
  for (const auto& s : sample_sentences(rows, seed)) {
    std::vector<std::string> row;
    for (const auto& lex : lexicons) row.push_back(render(lex, s));
    pc.rows.push_back(std::move(row));
  }
  return pc;
}

std::vector<Document> make_documents(const std::vector<std::pair<std::string, double>>& mix, std::size_t n_docs,
                                     std::size_t sentences_per_doc, std::uint64_t seed) {
  if (mix.empty()) throw InputError("make_documents: empty language mix");
  double total = 0.0;
  for (const auto& [code, share] : mix) {
    if (share < 0.0) throw InputError("make_documents: negative share");
    total += share;
  }
  // Largest-remainder apportionment of n_docs.
  std::vector<std::size_t> quota(mix.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double exact = mix[i].second / total * static_cast<double>(n_docs);
    quota[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[i];
    remainders.emplace_back(-(exact - std::floor(exact)), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t k = 0; assigned < n_docs; ++k, ++assigned) ++quota[remainders[k % remainders.size()].second];

  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < mix.size(); ++i) slots.insert(slots.end(), quota[i], i);
  Rng rng(derive_seed(seed, "documents"));
  rng.shuffle(slots);

  std::vector<Lexicon> lexicons;
  for (const auto& [code, share] : mix) lexicons.push_back(build_lexicon(code, kLexiconSeed));
  const auto sentences = sample_sentences(n_docs * sentences_per_doc, derive_seed(seed, "doc-sentences"));
  std::vector<Document> docs;
  docs.reserve(n_docs);
  for (std::size_t d = 0; d < slots.size(); ++d) {
    const Lexicon& lex = lexicons[slots[d]];
    std::string text;
    for (std::size_t s = 0; s < sentences_per_doc; ++s) {
      if (s) text += ' ';
      text += render(lex, sentences[d * sentences_per_doc + s]);
    }
    docs.push_back({lex.code, std::move(text)});
  }
  return docs;
}

std::vector<std::pair<std::string, double>> latin_dominant_mix() {
  return {{"en", 0.43}, {"es", 0.10}, {"fr", 0.10}, {"de", 0.08}, {"pt", 0.05}, {"it", 0.05}, {"id", 0.04}, {"vi", 0.03},
          {"hu", 0.03}, {"ru", 0.03}, {"ar", 0.02}, {"zh", 0.02}, {"bn", 0.01}, {"ta", 0.01}};
}

}  // namespace fuxi::synth
