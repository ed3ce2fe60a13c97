#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "fuxi/corpus.hpp"
#include "fuxi/reports.hpp"
#include "fuxi/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Writes the synthetic fixture corpora"};
  std::string out = "data/fixtures";
  std::uint64_t seed = 7;
  std::size_t rows = 96;
  std::size_t docs = 1200;
  std::size_t bilingual_docs = 400;
  app.add_option("--out", out, "Output directory");
  app.add_option("--seed", seed, "Sampling seed");
  app.add_option("--rows", rows, "Rows of the parallel fixture");
  app.add_option("--docs", docs, "Documents in the training mix");
  app.add_option("--bilingual-docs", bilingual_docs, "Documents per bilingual corpus");
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out);
    const auto& langs = fuxi::synth::supported_languages();
    fuxi::write_file_atomic(fs::path(out) / "parallel15.tsv",
                            fuxi::serialize_parallel(fuxi::synth::make_parallel(langs, rows, seed)));
    fuxi::write_file_atomic(
        fs::path(out) / "train_mix.jsonl",
        fuxi::serialize_documents(fuxi::synth::make_documents(fuxi::synth::latin_dominant_mix(), docs, 4, seed + 1)));
    fuxi::write_file_atomic(
        fs::path(out) / "bilingual_balanced.jsonl",
        fuxi::serialize_documents(fuxi::synth::make_documents({{"en", 0.5}, {"ru", 0.5}}, bilingual_docs, 4, seed + 2)));
    fuxi::write_file_atomic(
        fs::path(out) / "bilingual_imbalanced.jsonl",
        fuxi::serialize_documents(fuxi::synth::make_documents({{"en", 0.95}, {"ru", 0.05}}, bilingual_docs, 4, seed + 2)));
    fuxi::write_file_atomic(fs::path(out) / "parallel_bilingual.tsv",
                            fuxi::serialize_parallel(fuxi::synth::make_parallel({"en", "ru"}, rows, seed + 3)));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "fixtures written to " << out << "\n";
  return 0;
}
