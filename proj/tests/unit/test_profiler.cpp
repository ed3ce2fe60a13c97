#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "fuxi/corpus.hpp"
#include "fuxi/errors.hpp"
#include "fuxi/profiler.hpp"
#include "fuxi/random.hpp"
#include "fuxi/tokenizer.hpp"
#include "frozen_values.hpp"
#include "oracles.hpp"
#include "test_env.hpp"

namespace fuxi {
namespace {

using testing::LinearOracle;
using testing::PolynomialOracle;
using Tables = std::vector<std::array<Array, kNumComponents>>;

const std::vector<TokenId> kNoTokens;

ChannelLayout small_layout() {
  ChannelLayout l;
  l.n_layers = 2;
  l.widths = {3, 2, 2, 2, 2, 3, 4, 3};
  return l;
}

Tables random_tables(const ChannelLayout& layout, std::size_t positions, std::uint64_t seed) {
  Tables h(layout.n_layers);
  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    for (std::size_t c = 0; c < kNumComponents; ++c) {
      h[l][c] = testing::random_array({positions, layout.widths[c]}, seed + 10 * l + c);
    }
  }
  return h;
}

std::vector<double> random_weights(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(n);
  for (auto& x : w) x = -3.0 + 6.0 * rng.uniform();
  return w;
}

ImportanceMap map_from(const ChannelLayout& layout, std::vector<double> values) {
  ImportanceMap m;
  m.layout = layout;
  m.values = std::move(values);
  return m;
}

// Byte-level tokenizer with a matching toy model.
struct ByteModel {
  Tokenizer tok;
  ModelConfig cfg;
  LanguageModel model;

  explicit ByteModel(std::uint64_t seed) : tok(), cfg(make_cfg(tok)), model(cfg, init_params(cfg, seed)) {}

  static ModelConfig make_cfg(const Tokenizer& tok) {
    ModelConfig c = testing::toy_config(24);
    c.vocab_size = tok.vocab_size();
    return c;
  }
};

std::vector<LanguageSentences> fixture_sentences(const Tokenizer& tok, std::size_t ctx, std::size_t max_rows) {
  const auto pc = load_parallel(testing::fixture_dir() / "parallel15.tsv");
  return tokenize_parallel(pc, tok, ctx, max_rows);
}

TEST(Layout, FlatAddressingRoundTrips) {
  const auto layout = small_layout();
  EXPECT_EQ(layout.layer_size(), 21u);
  EXPECT_EQ(layout.total(), 42u);
  for (std::size_t i = 0; i < layout.total(); ++i) EXPECT_EQ(layout.flat(layout.neuron(i)), i);
  EXPECT_THROW(layout.flat({2, Component::AttnNorm, 0}), IndexError);
  EXPECT_THROW(layout.flat({0, Component::UpProj, 4}), IndexError);
}

TEST(Exact, LinearOracleExample) {
  const auto oracle = LinearOracle::two_channel();
  EXPECT_DOUBLE_EQ(importance_exact(oracle, kNoTokens, {0, Component::AttnNorm, 0}), 3.0);
  EXPECT_DOUBLE_EQ(importance_exact(oracle, kNoTokens, {0, Component::AttnNorm, 1}), 2.0);
  EXPECT_EQ(importance_exact(oracle, kNoTokens, {0, Component::AttnNorm, 0}),
            importance_exact(oracle, kNoTokens, {0, Component::AttnNorm, 0}));
}

TEST(Exact, ZeroChannelHasZeroImportance) {
  const auto layout = small_layout();
  Tables h = random_tables(layout, 5, 1);
  const std::size_t up = static_cast<std::size_t>(Component::UpProj);
  for (std::size_t t = 0; t < 5; ++t) h[1][up](t, 2) = 0.0;
  const LinearOracle oracle(layout, h, random_weights(layout.total(), 2));
  EXPECT_EQ(importance_exact(oracle, kNoTokens, {1, Component::UpProj, 2}), 0.0);
  EXPECT_EQ(importance_first_order(oracle, kNoTokens)[layout.flat({1, Component::UpProj, 2})], 0.0);
}

TEST(FirstOrder, SinglePositionProduct) {
  ChannelLayout layout;
  layout.n_layers = 1;
  layout.widths[0] = 1;
  Tables h(1);
  h[0][0] = Array({1, 1}, 3.0);
  const LinearOracle oracle(layout, h, {2.0});
  EXPECT_DOUBLE_EQ(importance_first_order(oracle, kNoTokens)[0], 6.0);
  EXPECT_DOUBLE_EQ(first_order_signed(oracle, kNoTokens)[0], 6.0);
}

TEST(FirstOrder, EqualsExactOnLinearOracle) {
  for (std::size_t positions : {1u, 4u, 7u}) {
    const auto layout = small_layout();
    const LinearOracle oracle(layout, random_tables(layout, positions, 3), random_weights(layout.total(), 4), 0.7);
    const auto approx = importance_first_order(oracle, kNoTokens);
    for (std::size_t i = 0; i < layout.total(); ++i) {
      const double exact = importance_exact(oracle, kNoTokens, layout.neuron(i));
      EXPECT_LE(std::abs(approx[i] - exact), 1e-10 * std::max(exact, 1e-300)) << "channel " << i;
    }
  }
  const auto two = LinearOracle::two_channel();
  EXPECT_NEAR(importance_first_order(two, kNoTokens)[0], 3.0, 1e-15);
  EXPECT_NEAR(importance_first_order(two, kNoTokens)[1], 2.0, 1e-15);
}

TEST(FirstOrder, AbsoluteValueConventions) {
  ChannelLayout layout;
  layout.n_layers = 1;
  layout.widths[0] = 1;
  Tables h(1);
  h[0][0] = Array({2, 1});
  h[0][0](0, 0) = 4.0;
  h[0][0](1, 0) = -3.0;
  const LinearOracle oracle(layout, h, {-2.0});
  EXPECT_DOUBLE_EQ(first_order_signed(oracle, kNoTokens)[0], -1.0);
  EXPECT_DOUBLE_EQ(importance_first_order(oracle, kNoTokens, AbsConvention::AfterPositionSum)[0], 1.0);
  EXPECT_DOUBLE_EQ(importance_first_order(oracle, kNoTokens, AbsConvention::PerPosition)[0], 7.0);
}

TEST(Taylor, ZeroChannel) {
  const auto layout = small_layout();
  Tables h = random_tables(layout, 3, 5);
  for (std::size_t t = 0; t < 3; ++t) h[0][0](t, 1) = 0.0;
  const LinearOracle oracle(layout, h, random_weights(layout.total(), 6));
  const auto r = taylor_consistency(oracle, kNoTokens, {0, Component::AttnNorm, 1}, 1e-5);
  EXPECT_EQ(r.finite_difference, 0.0);
  EXPECT_EQ(r.analytic, 0.0);
  EXPECT_EQ(r.relative_error, 0.0);
}

TEST(Taylor, LinearOracleAgrees) {
  const auto layout = small_layout();
  const LinearOracle oracle(layout, random_tables(layout, 4, 7), random_weights(layout.total(), 8));
  for (std::size_t i = 0; i < layout.total(); ++i) {
    EXPECT_LT(taylor_consistency(oracle, kNoTokens, layout.neuron(i), 1e-5).relative_error, 1e-6) << i;
  }
}

TEST(Taylor, CubicLossConvergesQuadratically) {
  ChannelLayout layout;
  layout.n_layers = 1;
  layout.widths[0] = 1;
  Tables h(1);
  h[0][0] = Array({3, 1});
  h[0][0](0, 0) = 1.5;
  h[0][0](1, 0) = 0.5;
  h[0][0](2, 0) = 1.0;
  const PolynomialOracle oracle(layout, h, {0.3}, {-0.8}, {1.2});
  const NeuronRef n{0, Component::AttnNorm, 0};
  double prev = std::abs(taylor_consistency(oracle, kNoTokens, n, 0.08).finite_difference -
                         taylor_consistency(oracle, kNoTokens, n, 0.08).analytic);
  // L(m(1−τ)) has third derivative −6c m³, so the central error is c m³ t².
  EXPECT_NEAR(prev, 1.2 * 0.08 * 0.08, 1e-12);
  for (double t : {0.04, 0.02, 0.01, 0.005}) {
    const auto r = taylor_consistency(oracle, kNoTokens, n, t);
    const double err = std::abs(r.finite_difference - r.analytic);
    EXPECT_NEAR(prev / err, 4.0, 1e-3) << "t=" << t;
    prev = err;
  }
}

TEST(Taylor, StepValidation) {
  const auto oracle = LinearOracle::two_channel();
  EXPECT_THROW(taylor_consistency(oracle, kNoTokens, {0, Component::AttnNorm, 0}, 0.0), ConfigError);
  EXPECT_THROW(taylor_consistency(oracle, kNoTokens, {0, Component::AttnNorm, 5}, 1e-3), IndexError);
}

TEST(Taylor, ModelNeurons) {
  const auto cfg = testing::toy_config();
  const LanguageModel model(cfg, init_params(cfg, 31));
  const ModelSubject subject(model);
  const auto tokens = testing::random_tokens(16, cfg.vocab_size, 32);
  Rng rng(33);
  for (int k = 0; k < 20; ++k) {
    const NeuronRef n = subject.layout().neuron(rng.below(subject.layout().total()));
    const auto r = taylor_consistency(subject, tokens, n, 1e-3);
    EXPECT_LT(std::abs(r.finite_difference - r.analytic), 1e-7) << k;
  }
}

TEST(Aggregate, Examples) {
  ChannelLayout layout;
  layout.n_layers = 1;
  layout.widths[0] = 2;
  const auto map = map_from(layout, {3.0, 2.0});
  const std::vector<NeuronRef> both{{0, Component::AttnNorm, 0}, {0, Component::AttnNorm, 1}};
  EXPECT_EQ(aggregate_exact(map, both).value(), 5.0);
  EXPECT_EQ(aggregate_exact(map, {}).value(), 0.0);
}

TEST(Aggregate, AdditiveOverRandomPartitions) {
  const auto layout = small_layout();
  Rng rng(40);
  std::vector<double> values(layout.total());
  for (auto& v : values) v = std::exp(-30.0 + 60.0 * rng.uniform());
  const auto map = map_from(layout, values);
  std::vector<NeuronRef> all;
  for (std::size_t i = 0; i < layout.total(); ++i) all.push_back(layout.neuron(i));
  const ExactSum whole = aggregate_exact(map, all);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t parts = 1 + rng.below(8);
    std::vector<std::vector<NeuronRef>> sets(parts);
    std::vector<NeuronRef> order = all;
    rng.shuffle(order);
    for (const auto& n : order) sets[rng.below(parts)].push_back(n);
    ExactSum acc;
    for (const auto& s : sets) acc.merge(aggregate_exact(map, s));
    ASSERT_EQ(acc, whole) << "trial " << trial;
    ASSERT_EQ(acc.value(), whole.value());
  }
}

TEST(Aggregate, PartitionsAndProfiles) {
  const auto layout = small_layout();
  std::vector<double> values(layout.total());
  std::iota(values.begin(), values.end(), 1.0);
  const auto map = map_from(layout, values);
  const auto by_comp = aggregate(map, ComponentPartition::by_component(layout));
  ASSERT_EQ(by_comp.size(), 16u);
  EXPECT_EQ(by_comp[0], 1.0 + 2.0 + 3.0);
  const auto by_layer = layer_profile(map);
  ASSERT_EQ(by_layer.size(), 2u);
  EXPECT_EQ(by_layer[0], 21.0 * 22.0 / 2.0);
  EXPECT_EQ(by_layer[0] + by_layer[1], 42.0 * 43.0 / 2.0);
  const auto comp = component_profile(map);
  EXPECT_EQ(comp[1][static_cast<std::size_t>(Component::UpProj)], 36.0 + 37.0 + 38.0 + 39.0);
  EXPECT_EQ(aggregate(map, ComponentPartition::by_layer(layout)), by_layer);
}

TEST(Aggregate, PartitionValidation) {
  const auto layout = small_layout();
  ComponentPartition overlap{{{"a", {{0, Component::QProj, 0}}}, {"b", {{0, Component::QProj, 0}}}}};
  EXPECT_THROW(overlap.validate(layout), InputError);
  ComponentPartition bad{{{"a", {{0, Component::QProj, 9}}}}};
  EXPECT_THROW(bad.validate(layout), IndexError);
  EXPECT_NO_THROW(ComponentPartition::by_component(layout).validate(layout));
}

TEST(Profile, FifteenLanguageFixture) {
  const ByteModel bm(50);
  const ModelSubject subject(bm.model);
  const auto langs = fixture_sentences(bm.tok, bm.cfg.context_len, 4);
  ASSERT_EQ(langs.size(), 15u);
  const auto maps = profile_languages(subject, langs);
  ASSERT_EQ(maps.size(), 15u);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    EXPECT_EQ(maps[i].lang, langs[i].lang);
    EXPECT_EQ(maps[i].sentence_count, 4u);
    EXPECT_EQ(maps[i].values.size(), subject.layout().total());
    for (double v : maps[i].values) ASSERT_GE(v, 0.0);
    EXPECT_EQ(layer_profile(maps[i]).size(), bm.cfg.n_layers);
  }
  EXPECT_EQ(langs.back().lang, "sk");
}

TEST(Profile, MeanOverSentences) {
  const ByteModel bm(51);
  const ModelSubject subject(bm.model);
  auto langs = fixture_sentences(bm.tok, bm.cfg.context_len, 3);
  langs.resize(1);
  const auto map = profile_languages(subject, langs)[0];
  std::vector<double> expect(map.values.size(), 0.0);
  for (const auto& s : langs[0].sentences) {
    const auto v = importance_first_order(subject, s);
    for (std::size_t i = 0; i < v.size(); ++i) expect[i] += v[i];
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(map.values[i], expect[i] / 3.0, 1e-15 * (1 + expect[i]));
}

TEST(Profile, IdenticalSentencesGiveIdenticalMaps) {
  const ByteModel bm(52);
  const ModelSubject subject(bm.model);
  const auto s = bm.tok.encode("same text twice");
  std::vector<TokenId> seq{bm.tok.eod_id()};
  seq.insert(seq.end(), s.begin(), s.end());
  const std::vector<LanguageSentences> langs = {{"en", {seq, seq}}, {"de", {seq, seq}}};
  const auto maps = profile_languages(subject, langs);
  EXPECT_EQ(maps[0].values, maps[1].values);
}

TEST(Profile, WorkerCountDoesNotChangeMaps) {
  const ByteModel bm(53);
  const ModelSubject subject(bm.model);
  const auto langs = fixture_sentences(bm.tok, bm.cfg.context_len, 5);
  ProfileOptions one, four;
  four.workers = 4;
  const auto a = profile_languages(subject, langs, one);
  const auto b = profile_languages(subject, langs, four);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values, b[i].values) << a[i].lang;
}

TEST(Profile, ExactMethodMatchesDirectAblation) {
  const auto cfg = testing::toy_config(8);
  const LanguageModel model(cfg, init_params(cfg, 54));
  const ModelSubject subject(model);
  const std::vector<LanguageSentences> langs = {{"en", {testing::random_tokens(8, cfg.vocab_size, 55)}}};
  ProfileOptions o;
  o.method = ImportanceMethod::Exact;
  o.workers = 2;
  const auto map = profile_languages(subject, langs, o)[0];
  EXPECT_EQ(map.method, ImportanceMethod::Exact);
  for (std::size_t i = 0; i < map.values.size(); i += 37) {
    EXPECT_EQ(map.values[i], importance_exact(subject, langs[0].sentences[0], subject.layout().neuron(i)));
  }
}

TEST(Profile, Errors) {
  const auto cfg = testing::toy_config(8);
  const LanguageModel model(cfg, init_params(cfg, 56));
  const ModelSubject subject(model);
  EXPECT_THROW(profile_languages(subject, {}), InputError);
  EXPECT_THROW(profile_languages(subject, {{"en", {}}}), InputError);
  ProfileOptions o;
  o.method = ImportanceMethod::Exact;
  o.exact_neuron_limit = 100;
  EXPECT_THROW(profile_languages(subject, {{"en", {testing::random_tokens(8, cfg.vocab_size, 1)}}}, o), ConfigError);
}

TEST(Spearman, ReferenceValue) {
  const std::vector<double> a(frozen::kSpearmanA.begin(), frozen::kSpearmanA.end());
  const std::vector<double> b(frozen::kSpearmanB.begin(), frozen::kSpearmanB.end());
  EXPECT_NEAR(spearman_correlation(a, b), frozen::kSpearman, 1e-14);
  EXPECT_NEAR(spearman_correlation(a, a), 1.0, 1e-15);
  EXPECT_TRUE(std::isnan(spearman_correlation({1, 1, 1}, {1, 2, 3})));
}

TEST(RankValidation, ReportsBoundedCorrelation) {
  const auto cfg = testing::toy_config(8);
  const LanguageModel model(cfg, init_params(cfg, 57));
  const ModelSubject subject(model);
  const std::vector<std::vector<TokenId>> sentences = {testing::random_tokens(8, cfg.vocab_size, 58),
                                                       testing::random_tokens(8, cfg.vocab_size, 59)};
  const auto r = validate_rank_agreement(subject, sentences, 40, 60);
  EXPECT_EQ(r.sample.size(), 40u);
  ASSERT_TRUE(r.defined);
  EXPECT_GE(r.spearman, -1.0);
  EXPECT_LE(r.spearman, 1.0);
  const auto again = validate_rank_agreement(subject, sentences, 40, 60, 3);
  EXPECT_EQ(again.spearman, r.spearman);
  EXPECT_EQ(again.exact, r.exact);
  EXPECT_THROW(validate_rank_agreement(subject, {}, 10, 1), InputError);
}

}  // namespace
}  // namespace fuxi
