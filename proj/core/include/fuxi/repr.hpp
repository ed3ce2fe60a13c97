#pragma once

#include <string>
#include <vector>

#include "fuxi/corpus.hpp"
#include "fuxi/model.hpp"
#include "fuxi/tokenizer.hpp"

namespace fuxi {

// Layer labels run 0..n_layers: 0 is "emb" (embedding output), label k ≥ 1
// is layer k−1, where the last layer reports its post-final-norm state.
std::size_t hidden_label_count(const ModelConfig& cfg);
// Label of the middle transformer layer ⌊n_layers/2⌋.
std::size_t middle_layer_label(const ModelConfig& cfg);

struct LanguageRepresentation {
  std::string lang;
  std::string layer;  // "emb", "0", "1", ...
  Array vector;       // [d_model]
  bool degenerate = false;  // zero norm
};

// [eod] + encode(text), keeping the trailing context_len tokens so the last
// position is always the text's final token.
std::vector<TokenId> encode_for_representation(const Tokenizer& tok, const std::string& text, std::size_t context_len);

// Mean last-token hidden state of every label, over `docs` in order.
std::vector<Array> mean_last_token_states(const LanguageModel& model, const std::vector<std::vector<TokenId>>& docs,
                                          std::size_t workers = 1);

LanguageRepresentation language_vector(const LanguageModel& model, const Tokenizer& tok, const std::string& lang,
                                       const std::vector<std::string>& docs, std::size_t label);

// v1·v2 / (‖v1‖‖v2‖), clamped to [−1, 1]. UndefinedSimilarity for a zero vector.
double cosine_similarity(const Array& v1, const Array& v2);

struct SimilarityMatrix {
  std::string layer;
  std::vector<std::string> languages;
  Array values;  // [n×n], symmetric, unit diagonal
};

struct SimilarityProfile {
  std::vector<std::string> labels;
  std::vector<SimilarityMatrix> matrices;  // one per label
  std::vector<double> mean_off_diagonal;   // one per label
};

struct ReprOptions {
  // Output language order; empty keeps the corpus order. Must be a
  // permutation of the corpus languages.
  std::vector<std::string> order;
  std::size_t max_sentences = 0;  // 0: all rows
  std::size_t workers = 1;
};

// vectors[i][label] belongs to languages[i].
SimilarityProfile similarity_from_vectors(const std::vector<std::string>& languages,
                                          const std::vector<std::vector<Array>>& vectors,
                                          const std::vector<std::string>& labels);

SimilarityProfile similarity_profile(const LanguageModel& model, const Tokenizer& tok, const ParallelCorpus& corpus,
                                     const ReprOptions& options = {});

}  // namespace fuxi
