#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fuxi/corpus.hpp"

namespace fuxi::synth {

// Synthetic multilingual text. Every language renders the same stream of
// abstract concepts through its own seeded lexicon, built from syllable
// templates in the language's script, so rows generated from one concept
// sequence are parallel by construction.

// Languages with a syllable template (the 15-language analysis set).
const std::vector<std::string>& supported_languages();

struct Lexicon {
  std::string code;
  std::vector<std::string> words;  // one per concept
  std::string separator;           // between words
  std::string terminal;            // sentence-final punctuation
  bool final_pair_swapped = false; // verb-final flavour: last two concepts swap
};

inline constexpr std::size_t kConceptCount = 320;

Lexicon build_lexicon(const std::string& code, std::uint64_t seed);

// A sentence as a concept sequence. Negative entries are numbers rendered as
// digit runs shared across languages (value = -entry).
using ConceptSentence = std::vector<std::int64_t>;

std::vector<ConceptSentence> sample_sentences(std::size_t count, std::uint64_t seed);
std::string render(const Lexicon& lex, const ConceptSentence& sentence);

ParallelCorpus make_parallel(const std::vector<std::string>& languages, std::size_t rows, std::uint64_t seed);

// Monolingual documents; `mix` gives (language, share). Document counts per
// language are proportional to the share (largest-remainder rounding) and the
// documents are interleaved deterministically.
std::vector<Document> make_documents(const std::vector<std::pair<std::string, double>>& mix, std::size_t n_docs,
                                     std::size_t sentences_per_doc, std::uint64_t seed);

// Latin-script-dominant mixture over the analysis languages that are part of
// the registry (sk is evaluation-only).
std::vector<std::pair<std::string, double>> latin_dominant_mix();

}  // namespace fuxi::synth
