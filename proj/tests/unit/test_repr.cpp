#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fuxi/corpus.hpp"
#include "fuxi/errors.hpp"
#include "fuxi/repr.hpp"
#include "fuxi/tokenizer.hpp"
#include "test_env.hpp"

namespace fuxi {
namespace {

using Strings = std::vector<std::string>;

Array vec(std::initializer_list<double> xs) {
  Array a({xs.size()});
  std::size_t i = 0;
  for (double x : xs) a[i++] = x;
  return a;
}

struct ByteModel {
  Tokenizer tok;
  ModelConfig cfg;
  LanguageModel model;

  explicit ByteModel(std::uint64_t seed, std::size_t ctx = 48)
      : tok(), cfg(make_cfg(tok, ctx)), model(cfg, init_params(cfg, seed)) {}

  static ModelConfig make_cfg(const Tokenizer& tok, std::size_t ctx) {
    ModelConfig c = testing::toy_config(ctx);
    c.vocab_size = tok.vocab_size();
    return c;
  }
};

ParallelCorpus fixture(std::size_t rows) {
  auto pc = load_parallel(testing::fixture_dir() / "parallel15.tsv");
  pc.rows.resize(std::min(rows, pc.rows.size()));
  return pc;
}

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 2, 3}), vec({1, 2, 3})), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 2}), vec({-1, -2})), -1.0);
  EXPECT_NEAR(cosine_similarity(vec({1, 1}), vec({1, 0})), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ZeroVectorIsUndefined) {
  EXPECT_THROW(cosine_similarity(vec({0, 0}), vec({1, 0})), UndefinedSimilarity);
  EXPECT_THROW(cosine_similarity(vec({1, 0}), vec({0, 0})), UndefinedSimilarity);
}

TEST(Cosine, ScaleInvariantAndBounded) {
  const Array a = testing::random_array({16}, 1);
  const Array b = testing::random_array({16}, 2);
  Array a3 = a;
  for (std::size_t i = 0; i < a3.size(); ++i) a3[i] *= 3.5;
  EXPECT_NEAR(cosine_similarity(a3, b), cosine_similarity(a, b), 1e-15);
  const double c = cosine_similarity(a, b);
  EXPECT_GE(c, -1.0);
  EXPECT_LE(c, 1.0);
}

TEST(Labels, CountAndMiddle) {
  const auto cfg = testing::toy_config();
  EXPECT_EQ(hidden_label_count(cfg), cfg.n_layers + 1);
  EXPECT_EQ(middle_layer_label(cfg), 2u);
}

TEST(LanguageVector, SingleDocumentIsLastTokenState) {
  const ByteModel bm(3);
  const std::string text = "a short line";
  const auto tokens = encode_for_representation(bm.tok, text, bm.cfg.context_len);
  EXPECT_EQ(tokens.front(), bm.tok.eod_id());
  const auto out = bm.model.forward(tokens);
  for (std::size_t label = 0; label < hidden_label_count(bm.cfg); ++label) {
    const auto rep = language_vector(bm.model, bm.tok, "en", {text}, label);
    const Array& h = hidden_state(out.cache, label);
    for (std::size_t j = 0; j < bm.cfg.d_model; ++j) EXPECT_EQ(rep.vector[j], h(tokens.size() - 1, j));
    EXPECT_EQ(rep.layer, hidden_state_label(label));
  }
}

TEST(LanguageVector, DuplicatedDocumentsKeepTheMean) {
  const ByteModel bm(4);
  const auto one = language_vector(bm.model, bm.tok, "en", {"repeat me"}, 1);
  const auto two = language_vector(bm.model, bm.tok, "en", {"repeat me", "repeat me"}, 1);
  for (std::size_t j = 0; j < bm.cfg.d_model; ++j) EXPECT_NEAR(one.vector[j], two.vector[j], 1e-15);
  EXPECT_THROW(language_vector(bm.model, bm.tok, "en", {}, 1), InputError);
  EXPECT_THROW(language_vector(bm.model, bm.tok, "en", {"x"}, hidden_label_count(bm.cfg)), IndexError);
}

TEST(LanguageVector, EmbeddingDiffersFromFirstLayer) {
  const ByteModel bm(5);
  const auto emb = language_vector(bm.model, bm.tok, "en", {"hello there"}, 0);
  const auto l0 = language_vector(bm.model, bm.tok, "en", {"hello there"}, 1);
  EXPECT_NE(emb.vector, l0.vector);
}

TEST(LanguageVector, LongTextKeepsTrailingTokens) {
  const ByteModel bm(6, 16);
  const std::string text(100, 'x');
  const auto tokens = encode_for_representation(bm.tok, text + "yz", bm.cfg.context_len);
  ASSERT_EQ(tokens.size(), bm.cfg.context_len);
  EXPECT_EQ(tokens.back(), 'z');
}

TEST(Similarity, CopiedColumnIsOneEverywhere) {
  const ByteModel bm(7);
  ParallelCorpus pc = fixture(6).select({"en", "de", "fr"});
  for (auto& row : pc.rows) row[1] = row[0];
  const auto prof = similarity_profile(bm.model, bm.tok, pc);
  ASSERT_EQ(prof.labels.size(), hidden_label_count(bm.cfg));
  EXPECT_EQ(prof.labels.front(), "emb");
  for (const auto& m : prof.matrices) EXPECT_NEAR(m.values(0, 1), 1.0, 1e-12) << m.layer;
}

TEST(Similarity, MatrixInvariantsOnFixture) {
  const ByteModel bm(8);
  const auto pc = fixture(8);
  const auto prof = similarity_profile(bm.model, bm.tok, pc);
  for (std::size_t k = 0; k < prof.matrices.size(); ++k) {
    const auto& m = prof.matrices[k];
    ASSERT_EQ(m.languages.size(), 15u);
    double off = 0.0;
    for (std::size_t i = 0; i < 15; ++i) {
      EXPECT_EQ(m.values(i, i), 1.0);
      for (std::size_t j = 0; j < 15; ++j) {
        EXPECT_EQ(m.values(i, j), m.values(j, i));
        EXPECT_GE(m.values(i, j), -1.0);
        EXPECT_LE(m.values(i, j), 1.0);
        if (i != j) off += m.values(i, j);
      }
    }
    EXPECT_NEAR(prof.mean_off_diagonal[k], off / (15.0 * 14.0), 1e-14);
  }
}

TEST(Similarity, OrderPermutesRowsAndColumns) {
  const ByteModel bm(9);
  const auto pc = fixture(5).select({"en", "zh", "ru", "sk"});
  const auto base = similarity_profile(bm.model, bm.tok, pc);
  ReprOptions o;
  o.order = {"sk", "en", "ru", "zh"};
  o.workers = 3;
  const auto perm = similarity_profile(bm.model, bm.tok, pc, o);
  const std::size_t map[] = {3, 0, 2, 1};
  for (std::size_t k = 0; k < base.matrices.size(); ++k) {
    EXPECT_EQ(perm.matrices[k].languages, o.order);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(perm.matrices[k].values(i, j), base.matrices[k].values(map[i], map[j]));
    }
    EXPECT_NEAR(perm.mean_off_diagonal[k], base.mean_off_diagonal[k], 1e-15);
  }
  o.order = {"en", "zh"};
  EXPECT_THROW(similarity_profile(bm.model, bm.tok, pc, o), SchemaError);
}

TEST(Similarity, Errors) {
  const ByteModel bm(10);
  EXPECT_THROW(similarity_profile(bm.model, bm.tok, fixture(3).select({"en"})), InputError);
  EXPECT_THROW(similarity_profile(bm.model, bm.tok, fixture(0).select({"en", "de"})), InputError);
  EXPECT_THROW(similarity_from_vectors({"en", "de"}, {{vec({1, 0})}, {vec({0, 0})}}, {"emb"}), UndefinedSimilarity);
}

}  // namespace
}  // namespace fuxi
