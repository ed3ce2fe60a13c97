#include "fuxi/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fuxi/errors.hpp"

namespace fuxi {

const std::map<std::string, LanguageInfo>& language_registry() {
  static const std::map<std::string, LanguageInfo> registry = {
      {"ar", {"Arabic", "Afro-Asiatic"}},     {"bg", {"Bulgarian", "Indo-European"}},
      {"bn", {"Bengali", "Indo-European"}},   {"ca", {"Catalan", "Indo-European"}},
      {"cs", {"Czech", "Indo-European"}},     {"de", {"German", "Indo-European"}},
      {"el", {"Greek", "Indo-European"}},     {"en", {"English", "Indo-European"}},
      {"es", {"Spanish", "Indo-European"}},   {"fa", {"Persian", "Indo-European"}},
      {"fi", {"Finnish", "Uralic"}},          {"fr", {"French", "Indo-European"}},
      {"he", {"Hebrew", "Afro-Asiatic"}},     {"hi", {"Hindi", "Indo-European"}},
      {"hu", {"Hungarian", "Indo-European"}}, {"id", {"Indonesia", "Austronesian"}},
      {"it", {"Italian", "Indo-European"}},   {"ja", {"Japanese", "Japanic"}},
      {"kk", {"Kazakh", "Turkic"}},           {"km", {"Khmer", "Austroasiatic"}},
      {"ko", {"Korean", "Koreanic"}},         {"ku", {"Kurdish", "Indo-European"}},
      {"ky", {"Kyrgyz", "Turkic"}},           {"lo", {"Lao", "Kra-Dai"}},
      {"ms", {"Malay", "Austronesian"}},      {"my", {"Burmese", "Sino-Tibetan"}},
      {"nl", {"Dutch", "Indo-European"}},     {"pl", {"Polish", "Indo-European"}},
      {"pt", {"Portuguese", "Indo-European"}}, {"ro", {"Romanian", "Indo-European"}},
      {"ru", {"Russian", "Indo-European"}},   {"sv", {"Swedish", "Indo-European"}},
      {"ta", {"Tamil", "Dravidian"}},         {"tg", {"Tajik", "Indo-European"}},
      {"th", {"Thai", "Kra-Dai"}},            {"tk", {"Turkmen", "Turkic"}},
      {"tl", {"Filipino", "Austronesian"}},   {"tr", {"Turkish", "Turkic"}},
      {"uk", {"Ukrainian", "Indo-European"}}, {"ur", {"Urdu", "Indo-European"}},
      {"uz", {"Uzbek", "Turkic"}},            {"vi", {"Vietnamese", "Austroasiatic"}},
      {"zh", {"Chinese", "Sino-Tibetan"}},
  };
  return registry;
}

bool is_registered_language(std::string_view code) {
  return language_registry().count(std::string(code)) > 0;
}

const std::map<std::string, LanguageInfo>& evaluation_languages() {
  static const std::map<std::string, LanguageInfo> extra = {
      {"sk", {"Slovak", "Indo-European"}},
  };
  return extra;
}

bool is_evaluation_language(std::string_view code) {
  return is_registered_language(code) || evaluation_languages().count(std::string(code)) > 0;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    auto nl = content.find('\n', start);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      return fields;
    }
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

std::vector<Document> parse_documents(std::string_view content) {
  std::vector<Document> docs;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (lines[i].find_first_not_of(" \t") == std::string_view::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), lineno);
    }
    if (!rec.is_object() || !rec.contains("lang") || !rec.contains("text") || !rec["lang"].is_string() ||
        !rec["text"].is_string()) {
      throw ParseError("record needs string fields \"lang\" and \"text\"", lineno);
    }
    Document doc{rec["lang"].get<std::string>(), rec["text"].get<std::string>()};
    if (!is_registered_language(doc.lang)) {
      throw RegistryError("line " + std::to_string(lineno) + ": unknown language code '" + doc.lang + "'");
    }
    if (doc.text.empty()) throw ParseError("empty text", lineno);
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<Document> load_documents(const std::filesystem::path& path) {
  return parse_documents(read_file(path));
}

std::string serialize_documents(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::json rec = {{"lang", d.lang}, {"text", d.text}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::size_t ParallelCorpus::language_index(std::string_view code) const {
  for (std::size_t i = 0; i < languages.size(); ++i) {
    if (languages[i] == code) return i;
  }
  throw SchemaError("language '" + std::string(code) + "' not present in parallel corpus");
}

std::vector<std::string> ParallelCorpus::column(std::string_view code) const {
  const std::size_t idx = language_index(code);
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(row[idx]);
  return out;
}

ParallelCorpus ParallelCorpus::select(const std::vector<std::string>& codes) const {
  std::vector<std::size_t> idx;
  for (const auto& c : codes) idx.push_back(language_index(c));
  ParallelCorpus out;
  out.languages = codes;
  for (const auto& row : rows) {
    std::vector<std::string> r;
    for (auto i : idx) r.push_back(row[i]);
    out.rows.push_back(std::move(r));
  }
  return out;
}

ParallelCorpus parse_parallel(std::string_view content, const std::vector<std::string>& languages) {
  const auto lines = split_lines(content);
  if (lines.empty()) throw ParseError("parallel corpus has no header row", 1);
  const auto header = split_tabs(lines[0]);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!is_evaluation_language(header[i])) throw RegistryError("unknown language code '" + header[i] + "' in header");
    for (std::size_t j = 0; j < i; ++j) {
      if (header[j] == header[i]) throw SchemaError("duplicate column '" + header[i] + "'");
    }
  }
  ParallelCorpus all;
  all.languages = header;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty() && i + 1 == lines.size()) break;
    auto fields = split_tabs(lines[i]);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(fields.size()),
                       i + 1);
    }
    all.rows.push_back(std::move(fields));
  }
  if (languages.empty()) return all;
  return all.select(languages);
}

ParallelCorpus load_parallel(const std::filesystem::path& path, const std::vector<std::string>& languages) {
  return parse_parallel(read_file(path), languages);
}

std::string serialize_parallel(const ParallelCorpus& corpus) {
  std::string out;
  auto put_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += '\t';
      out += row[i];
    }
    out += '\n';
  };
  put_row(corpus.languages);
  for (const auto& row : corpus.rows) put_row(row);
  return out;
}

}  // namespace fuxi
