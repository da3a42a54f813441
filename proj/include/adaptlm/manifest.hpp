#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace adaptlm {

struct FileDigest {
  std::string role;
  std::string path;
  std::string crc32;
  std::uintmax_t bytes = 0;
};

// crc32 and size of a file; a directory digests every regular file beneath it
// in sorted path order.
FileDigest digest_file(std::string role, const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::string stop_reason;
  nlohmann::json results = nlohmann::json::object();
};

nlohmann::json to_json(const RunManifest& manifest);
void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& path);

}  // namespace adaptlm
