#include "fuxi/reports.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fuxi/errors.hpp"
#include "json.hpp"

namespace fuxi {

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw InputError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fertility_csv(const FertilityReport& report) {
  std::ostringstream os;
  os << "lang,tokens,words,fertility\n";
  for (const auto& lang : report.order) {
    const auto& f = report.languages.at(lang);
    os << lang << ',' << f.tokens << ',' << f.words << ',' << (f.fertility ? format_double(*f.fertility) : "undefined")
       << '\n';
  }
  return os.str();
}

std::vector<std::string> importance_columns() {
  std::vector<std::string> cols;
  for (auto c : kAllComponents) cols.emplace_back(component_name(c));
  return cols;
}

std::string importance_csv(const ImportanceMap& map) {
  std::ostringstream os;
  os << "layer";
  for (const auto& c : importance_columns()) os << ',' << c;
  os << '\n';
  const auto prof = component_profile(map);
  for (std::size_t l = 0; l < prof.size(); ++l) {
    os << l;
    for (double v : prof[l]) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

std::string layer_importance_csv(const std::vector<ImportanceMap>& maps) {
  std::ostringstream os;
  os << "lang";
  const std::size_t L = maps.empty() ? 0 : maps.front().layout.n_layers;
  for (std::size_t l = 0; l < L; ++l) os << ',' << l;
  os << '\n';
  for (const auto& m : maps) {
    os << m.lang;
    for (double v : layer_profile(m)) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

std::string importance_json(const std::vector<ImportanceMap>& maps, const std::map<std::string, std::string>& meta) {
  nlohmann::ordered_json root;
  root["meta"] = meta;
  root["components"] = importance_columns();
  nlohmann::ordered_json langs = nlohmann::ordered_json::array();
  for (const auto& m : maps) {
    nlohmann::ordered_json entry;
    entry["lang"] = m.lang;
    entry["method"] = method_name(m.method);
    entry["abs_convention"] = convention_name(m.convention);
    entry["sentences"] = m.sentence_count;
    entry["n_layers"] = m.layout.n_layers;
    entry["widths"] = m.layout.widths;
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < m.layout.n_layers; ++l) {
      nlohmann::ordered_json layer;
      for (auto c : kAllComponents) {
        const std::size_t off = m.layout.offset(l, c);
        const std::size_t w = m.layout.widths[static_cast<std::size_t>(c)];
        layer[std::string(component_name(c))] =
            std::vector<double>(m.values.begin() + static_cast<std::ptrdiff_t>(off),
                                m.values.begin() + static_cast<std::ptrdiff_t>(off + w));
      }
      layers.push_back(std::move(layer));
    }
    entry["neurons"] = std::move(layers);
    langs.push_back(std::move(entry));
  }
  root["languages"] = std::move(langs);
  return root.dump() + "\n";
}

std::string similarity_csv(const SimilarityMatrix& m) {
  std::ostringstream os;
  os << "lang";
  for (const auto& l : m.languages) os << ',' << l;
  os << '\n';
  for (std::size_t i = 0; i < m.languages.size(); ++i) {
    os << m.languages[i];
    for (std::size_t j = 0; j < m.languages.size(); ++j) os << ',' << format_double(m.values(i, j));
    os << '\n';
  }
  return os.str();
}

std::string layer_profile_csv(const SimilarityProfile& p) {
  std::ostringstream os;
  os << "layer_label,mean_similarity\n";
  for (std::size_t k = 0; k < p.labels.size(); ++k) os << p.labels[k] << ',' << format_double(p.mean_off_diagonal[k]) << '\n';
  return os.str();
}

}  // namespace fuxi
