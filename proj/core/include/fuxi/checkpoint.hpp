#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fuxi/model.hpp"

namespace fuxi {

// A checkpoint is a directory holding `manifest.txt` (format version, step,
// config, metadata, then one `tensor <name> <shape> <offset> <bytes>` line per
// tensor) and `tensors.bin`, the little-endian float64 data in manifest order.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  Parameters params;
  // Additional named tensors stored after the parameters (optimizer moments).
  std::vector<std::pair<std::string, Array>> extra;
  std::map<std::string, std::string> metadata;
};

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kTensorFile = "tensors.bin";

// Writes into a sibling temporary directory, then renames into place.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Manifest config lines only; cheap compatibility checks without the blob.
ModelConfig read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace fuxi
