#include "fuxi/repr.hpp"

#include <algorithm>
#include <cmath>

#include "fuxi/errors.hpp"
#include "fuxi/parallel.hpp"

namespace fuxi {

std::size_t hidden_label_count(const ModelConfig& cfg) {
  return cfg.n_layers + 1;
}

std::size_t middle_layer_label(const ModelConfig& cfg) {
  return cfg.n_layers / 2 + 1;
}

std::vector<TokenId> encode_for_representation(const Tokenizer& tok, const std::string& text, std::size_t context_len) {
  std::vector<TokenId> ids{tok.eod_id()};
  const auto enc = tok.encode(text);
  ids.insert(ids.end(), enc.begin(), enc.end());
  if (ids.size() > context_len) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(context_len));
  return ids;
}

std::vector<Array> mean_last_token_states(const LanguageModel& model, const std::vector<std::vector<TokenId>>& docs,
                                          std::size_t workers) {
  if (docs.empty()) throw InputError("language vector needs at least one document");
  const std::size_t labels = hidden_label_count(model.config());
  const std::size_t d = model.config().d_model;
  std::vector<std::vector<Array>> per_doc(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t i) {
    const auto fwd = model.forward(docs[i]);
    const std::size_t last = docs[i].size() - 1;
    per_doc[i].reserve(labels);
    for (std::size_t k = 0; k < labels; ++k) {
      const auto row = hidden_state(fwd.cache, k).row(last);
      per_doc[i].emplace_back(Shape{d}, std::vector<double>(row.begin(), row.end()));
    }
  });
  std::vector<Array> mean(labels, Array({d}));
  for (const auto& doc : per_doc) {
    for (std::size_t k = 0; k < labels; ++k) add_inplace(mean[k], doc[k]);
  }
  const double inv = 1.0 / static_cast<double>(docs.size());
  for (auto& v : mean) scale_inplace(v, inv);
  return mean;
}

LanguageRepresentation language_vector(const LanguageModel& model, const Tokenizer& tok, const std::string& lang,
                                       const std::vector<std::string>& docs, std::size_t label) {
  if (label >= hidden_label_count(model.config())) throw IndexError("layer label out of range");
  std::vector<std::vector<TokenId>> ids;
  for (const auto& d : docs) ids.push_back(encode_for_representation(tok, d, model.config().context_len));
  auto means = mean_last_token_states(model, ids);
  LanguageRepresentation r{lang, hidden_state_label(label), std::move(means[label]), false};
  r.degenerate = squared_norm(r.vector) == 0.0;
  return r;
}

double cosine_similarity(const Array& v1, const Array& v2) {
  require_same_shape(v1, v2, "cosine_similarity");
  const double n1 = std::sqrt(squared_norm(v1));
  const double n2 = std::sqrt(squared_norm(v2));
  if (n1 == 0.0 || n2 == 0.0) throw UndefinedSimilarity("cosine similarity of a zero vector is undefined");
  return std::clamp(dot(v1.data(), v2.data()) / (n1 * n2), -1.0, 1.0);
}

SimilarityProfile similarity_from_vectors(const std::vector<std::string>& languages,
                                          const std::vector<std::vector<Array>>& vectors,
                                          const std::vector<std::string>& labels) {
  const std::size_t n = languages.size();
  if (n < 2) throw InputError("similarity analysis needs at least two languages");
  if (vectors.size() != n) throw ShapeError("one vector set per language expected");
  SimilarityProfile prof;
  prof.labels = labels;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    SimilarityMatrix m{labels[k], languages, Array({n, n})};
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m.values(i, i) = 1.0;
      if (squared_norm(vectors[i].at(k)) == 0.0) {
        throw UndefinedSimilarity("degenerate (zero) representation for '" + languages[i] + "' at layer " + labels[k]);
      }
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = cosine_similarity(vectors[i].at(k), vectors[j].at(k));
        m.values(i, j) = s;
        m.values(j, i) = s;
        off += 2.0 * s;
      }
    }
    prof.mean_off_diagonal.push_back(off / static_cast<double>(n * (n - 1)));
    prof.matrices.push_back(std::move(m));
  }
  return prof;
}

SimilarityProfile similarity_profile(const LanguageModel& model, const Tokenizer& tok, const ParallelCorpus& corpus,
                                     const ReprOptions& options) {
  std::vector<std::string> order = options.order.empty() ? corpus.languages : options.order;
  {
    auto a = order, b = corpus.languages;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw SchemaError("language order must be a permutation of the corpus languages");
  }
  const std::size_t rows = options.max_sentences ? std::min(options.max_sentences, corpus.rows.size()) : corpus.rows.size();
  if (rows == 0) throw InputError("parallel corpus has no rows");
  const std::size_t labels = hidden_label_count(model.config());
  std::vector<std::string> label_names;
  for (std::size_t k = 0; k < labels; ++k) label_names.push_back(hidden_state_label(k));

  std::vector<std::vector<Array>> vectors;
  for (const auto& code : order) {
    const std::size_t col = corpus.language_index(code);
    std::vector<std::vector<TokenId>> docs;
    for (std::size_t r = 0; r < rows; ++r) {
      docs.push_back(encode_for_representation(tok, corpus.rows[r][col], model.config().context_len));
    }
    vectors.push_back(mean_last_token_states(model, docs, options.workers));
  }
  return similarity_from_vectors(order, vectors, label_names);
}

}  // namespace fuxi
