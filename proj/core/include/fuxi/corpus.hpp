#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fuxi {

struct LanguageInfo {
  std::string name;
  std::string family;
};

// The 43 natural languages of the pre-training mix, keyed by ISO-639-1 code.
// Programming languages are intentionally absent.
const std::map<std::string, LanguageInfo>& language_registry();
bool is_registered_language(std::string_view code);

// Languages accepted only in parallel evaluation data, on top of the registry.
const std::map<std::string, LanguageInfo>& evaluation_languages();
bool is_evaluation_language(std::string_view code);

struct Document {
  std::string lang;
  std::string text;
  friend bool operator==(const Document&, const Document&) = default;
};

// Newline-delimited JSON records {"lang": ..., "text": ...}. Blank lines are
// skipped; anything else that is not a well-formed record is a ParseError
// carrying its line number. Unregistered codes raise RegistryError.
std::vector<Document> parse_documents(std::string_view content);
std::vector<Document> load_documents(const std::filesystem::path& path);
std::string serialize_documents(const std::vector<Document>& docs);

struct ParallelCorpus {
  std::vector<std::string> languages;
  // rows[r][i] is the sentence of languages[i] in aligned row r.
  std::vector<std::vector<std::string>> rows;

  std::size_t language_index(std::string_view code) const;
  std::vector<std::string> column(std::string_view code) const;
  // Sub-corpus restricted to (and ordered by) `codes`.
  ParallelCorpus select(const std::vector<std::string>& codes) const;
};

// Tab-separated text with a header row of language codes. An empty
// `languages` keeps every header column in file order.
ParallelCorpus parse_parallel(std::string_view content, const std::vector<std::string>& languages = {});
ParallelCorpus load_parallel(const std::filesystem::path& path, const std::vector<std::string>& languages = {});
std::string serialize_parallel(const ParallelCorpus& corpus);

std::string read_file(const std::filesystem::path& path);

}  // namespace fuxi
