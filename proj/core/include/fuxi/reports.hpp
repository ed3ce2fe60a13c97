#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fuxi/profiler.hpp"
#include "fuxi/repr.hpp"
#include "fuxi/tokenizer.hpp"

namespace fuxi {

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Shortest round-trip decimal form.
std::string format_double(double v);

// lang,tokens,words,fertility; fertility is "undefined" for languages
// without words.
std::string fertility_csv(const FertilityReport& report);

// Column order of every importance CSV after the leading "layer" column.
std::vector<std::string> importance_columns();
// One row per layer, one column per component.
std::string importance_csv(const ImportanceMap& map);
// lang followed by one column per layer.
std::string layer_importance_csv(const std::vector<ImportanceMap>& maps);
// Per-neuron arrays plus run metadata.
std::string importance_json(const std::vector<ImportanceMap>& maps, const std::map<std::string, std::string>& meta);

// Languages as header row and first column.
std::string similarity_csv(const SimilarityMatrix& m);
// layer_label,mean_similarity with "emb" first.
std::string layer_profile_csv(const SimilarityProfile& p);

}  // namespace fuxi
