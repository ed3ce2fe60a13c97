#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fuxi/corpus.hpp"
#include "fuxi/errors.hpp"
#include "fuxi/synthetic.hpp"
#include "test_env.hpp"

namespace fuxi {
namespace {

using Strings = std::vector<std::string>;

const Strings kAnalysisSet = {"ar", "bn", "es", "fr", "id", "pt", "ta", "vi", "zh", "en", "de", "hu", "it", "ru", "sk"};

TEST(Registry, SizeAndEntries) {
  const auto& reg = language_registry();
  EXPECT_EQ(reg.size(), 43u);
  EXPECT_EQ(reg.at("vi").name, "Vietnamese");
  EXPECT_EQ(reg.at("vi").family, "Austroasiatic");
  EXPECT_EQ(reg.at("ta").name, "Tamil");
  EXPECT_EQ(reg.at("ta").family, "Dravidian");
  EXPECT_TRUE(is_registered_language("en"));
  EXPECT_FALSE(is_registered_language("xx"));
  EXPECT_FALSE(is_registered_language("py"));
}

TEST(Registry, EvaluationOnlyLanguages) {
  EXPECT_FALSE(is_registered_language("sk"));
  EXPECT_TRUE(is_evaluation_language("sk"));
  EXPECT_TRUE(is_evaluation_language("en"));
  EXPECT_FALSE(is_evaluation_language("xx"));
  for (const auto& [code, info] : evaluation_languages()) EXPECT_FALSE(is_registered_language(code)) << code;
}

TEST(Documents, EmptyInput) { EXPECT_TRUE(parse_documents("").empty()); }

TEST(Documents, SingleRecord) {
  const auto docs = parse_documents(R"({"lang":"en","text":"hello"})");
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0], (Document{"en", "hello"}));
}

TEST(Documents, UnknownLanguageIsRegistryError) {
  EXPECT_THROW(parse_documents(R"({"lang":"xx","text":"hi"})"), RegistryError);
  EXPECT_THROW(parse_documents(R"({"lang":"sk","text":"ahoj"})"), RegistryError);
}

TEST(Documents, MalformedRecordReportsLine) {
  const std::string content = "{\"lang\":\"en\",\"text\":\"a\"}\n\n{\"lang\":\"en\",\"text\":\n";
  try {
    parse_documents(content);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_documents(R"({"lang":"en"})"), ParseError);
  EXPECT_THROW(parse_documents(R"({"lang":"en","text":5})"), ParseError);
  EXPECT_THROW(parse_documents(R"(["en","x"])"), ParseError);
  EXPECT_THROW(parse_documents(R"({"lang":"en","text":""})"), ParseError);
}

TEST(Documents, OrderPreservedAndBlankLinesSkipped) {
  const auto docs = parse_documents("{\"lang\":\"de\",\"text\":\"eins\"}\n\n{\"lang\":\"fr\",\"text\":\"deux\"}\n");
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].lang, "de");
  EXPECT_EQ(docs[1].lang, "fr");
}

TEST(Documents, ReserializationIsByteStable) {
  const std::string original = read_file(testing::fixture_dir() / "train_mix.jsonl");
  EXPECT_EQ(serialize_documents(parse_documents(original)), original);
  const std::vector<Document> tricky = {{"en", "quote \" backslash \\ tab \t"}, {"zh", "中文 😀"}, {"ru", "line\nbreak"}};
  const std::string once = serialize_documents(tricky);
  EXPECT_EQ(parse_documents(once), tricky);
  EXPECT_EQ(serialize_documents(parse_documents(once)), once);
}

TEST(Documents, MissingFileIsInputError) {
  EXPECT_THROW(load_documents(testing::fixture_dir() / "does_not_exist.jsonl"), InputError);
}

TEST(Parallel, TwoLanguagesThreeRows) {
  const auto pc = parse_parallel("en\tde\none\teins\ntwo\tzwei\nthree\tdrei\n");
  EXPECT_EQ(pc.languages, (Strings{"en", "de"}));
  ASSERT_EQ(pc.rows.size(), 3u);
  EXPECT_EQ(pc.rows[2], (Strings{"three", "drei"}));
}

TEST(Parallel, RequestedOrderIsApplied) {
  const auto pc = parse_parallel("en\tde\tfr\none\teins\tun\n", {"fr", "en"});
  EXPECT_EQ(pc.languages, (Strings{"fr", "en"}));
  EXPECT_EQ(pc.rows[0], (Strings{"un", "one"}));
}

TEST(Parallel, MissingColumnIsSchemaError) {
  EXPECT_THROW(parse_parallel("en\tde\none\teins\n", {"fr"}), SchemaError);
  EXPECT_THROW(parse_parallel("en\ten\none\teins\n"), SchemaError);
}

TEST(Parallel, RaggedRowIsParseError) {
  try {
    parse_parallel("en\tde\none\teins\ntwo\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Parallel, UnknownHeaderCodeIsRegistryError) { EXPECT_THROW(parse_parallel("en\txx\na\tb\n"), RegistryError); }

TEST(Parallel, FifteenLanguageFixtureAccepted) {
  const auto pc = load_parallel(testing::fixture_dir() / "parallel15.tsv", kAnalysisSet);
  EXPECT_EQ(pc.languages, kAnalysisSet);
  EXPECT_GE(pc.rows.size(), 64u);
  for (const auto& row : pc.rows) {
    ASSERT_EQ(row.size(), 15u);
    for (const auto& s : row) EXPECT_FALSE(s.empty());
  }
}

TEST(Parallel, SerializeRoundTrip) {
  const std::string original = read_file(testing::fixture_dir() / "parallel15.tsv");
  const auto pc = parse_parallel(original);
  EXPECT_EQ(serialize_parallel(pc), original);
  const auto sub = pc.select({"sk", "en"});
  EXPECT_EQ(sub.column("en"), pc.column("en"));
}

TEST(Synthetic, ParallelRowsShareNumbers) {
  const auto pc = synth::make_parallel({"en", "ru", "zh"}, 20, 5);
  ASSERT_EQ(pc.rows.size(), 20u);
  for (const auto& row : pc.rows) {
    std::set<std::string> digits;
    for (const auto& s : row) {
      std::string d;
      for (char c : s) {
        if (c >= '0' && c <= '9') d += c;
      }
      digits.insert(d);
    }
    EXPECT_EQ(digits.size(), 1u);
  }
}

TEST(Synthetic, DocumentMixFollowsShares) {
  const auto docs = synth::make_documents({{"en", 0.95}, {"ru", 0.05}}, 200, 2, 9);
  std::size_t en = 0;
  for (const auto& d : docs) {
    en += d.lang == "en";
    EXPECT_TRUE(is_registered_language(d.lang));
  }
  EXPECT_EQ(docs.size(), 200u);
  EXPECT_EQ(en, 190u);
  EXPECT_EQ(synth::make_documents({{"en", 0.95}, {"ru", 0.05}}, 200, 2, 9), docs);
}

}  // namespace
}  // namespace fuxi
