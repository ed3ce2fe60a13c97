#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "fuxi/corpus.hpp"
#include "fuxi/errors.hpp"
#include "fuxi/reports.hpp"
#include "test_env.hpp"

namespace fuxi {
namespace {

namespace fs = std::filesystem;

ImportanceMap counting_map(std::size_t layers) {
  ImportanceMap m;
  m.lang = "en";
  m.layout.n_layers = layers;
  m.layout.widths = {2, 2, 2, 2, 2, 2, 3, 2};
  m.values.resize(m.layout.total());
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<double>(i) * 0.5;
  m.sentence_count = 4;
  return m;
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(format_double(1e-20), "1e-20");
  const double x = 0.8902439024390245;
  EXPECT_EQ(std::stod(format_double(x)), x);
}

TEST(Fertility, CsvLayout) {
  FertilityReport r;
  r.order = {"en", "zh"};
  r.languages["en"] = {10, 4, 2.5};
  r.languages["zh"] = {3, 0, std::nullopt};
  EXPECT_EQ(fertility_csv(r), "lang,tokens,words,fertility\nen,10,4,2.5\nzh,3,0,undefined\n");
}

TEST(Importance, CsvRowsAreLayers) {
  const auto m = counting_map(2);
  const std::string csv = importance_csv(m);
  std::istringstream is(csv);
  std::string header, row0, row1, extra;
  std::getline(is, header);
  std::getline(is, row0);
  std::getline(is, row1);
  EXPECT_FALSE(std::getline(is, extra));
  EXPECT_EQ(header, "layer,attn_norm,q_proj,k_proj,v_proj,o_proj,mlp_norm,up_proj,down_proj");
  // Layer 0 attn_norm holds values 0 and 0.5; up_proj holds 6, 6.5, 7.
  EXPECT_EQ(row0.substr(0, 6), "0,0.5,");
  EXPECT_NE(row0.find(",19.5,"), std::string::npos);
  EXPECT_EQ(row1.substr(0, 2), "1,");
  EXPECT_EQ(importance_columns().size(), 8u);
}

TEST(Importance, LayerCsvAndJson) {
  auto a = counting_map(3);
  auto b = counting_map(3);
  b.lang = "sk";
  const std::string csv = layer_importance_csv({a, b});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "lang,0,1,2");
  EXPECT_NE(csv.find("\nsk,"), std::string::npos);
  const auto j = nlohmann::json::parse(importance_json({a, b}, {{"checkpoint", "x"}}));
  EXPECT_EQ(j["meta"]["checkpoint"], "x");
  ASSERT_EQ(j["languages"].size(), 2u);
  EXPECT_EQ(j["languages"][1]["lang"], "sk");
  EXPECT_EQ(j["languages"][0]["sentences"], 4);
  EXPECT_EQ(j["languages"][0]["neurons"].size(), 3u);
  EXPECT_EQ(j["languages"][0]["neurons"][0]["up_proj"].size(), 3u);
  EXPECT_EQ(j["languages"][0]["neurons"][0]["attn_norm"][1].get<double>(), 0.5);
}

TEST(Similarity, CsvLayout) {
  SimilarityMatrix m;
  m.layer = "emb";
  m.languages = {"en", "de"};
  m.values = Array({2, 2}, 1.0);
  m.values(0, 1) = m.values(1, 0) = 0.25;
  EXPECT_EQ(similarity_csv(m), "lang,en,de\nen,1,0.25\nde,0.25,1\n");
  SimilarityProfile p;
  p.labels = {"emb", "0", "1"};
  p.mean_off_diagonal = {0.5, 0.75, 0.125};
  EXPECT_EQ(layer_profile_csv(p), "layer_label,mean_similarity\nemb,0.5\n0,0.75\n1,0.125\n");
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemporaries) {
  testing::TempDir dir;
  const auto path = dir / "out.csv";
  write_file_atomic(path, "first\n");
  write_file_atomic(path, "second\n");
  EXPECT_EQ(read_file(path), "second\n");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++n;
  EXPECT_EQ(n, 1u);
}

TEST(AtomicWrite, MissingDirectoryIsInputError) {
  testing::TempDir dir;
  EXPECT_THROW(write_file_atomic(dir / "no/such/dir/out.csv", "x"), InputError);
}

}  // namespace
}  // namespace fuxi
