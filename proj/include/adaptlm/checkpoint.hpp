#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adaptlm/model.hpp"

namespace adaptlm {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::vector<std::string> classes;  // label names after fine-tuning; empty otherwise
  bool operator==(const CheckpointInfo&) const = default;
};

// Writes <dir>/manifest.json and one little-endian float32 file per named
// parameter under <dir>/params/. Creates `dir` if needed.
void save_checkpoint(const Model<float>& model, const std::filesystem::path& dir, const CheckpointInfo& info = {});

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointInfo info;
};

// FormatError on a bad manifest or unsupported version, ChecksumError when a
// parameter file does not match its recorded length or crc32.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Copies checkpoint values into an existing model; DimensionError naming the
// tensor when a shape differs.
CheckpointInfo load_checkpoint_into(const std::filesystem::path& dir, Model<float>& model);

// Lowercase hex crc32 of a byte range.
std::string crc32_hex(const void* data, std::size_t size);
std::string file_crc32(const std::filesystem::path& path);

}  // namespace adaptlm
