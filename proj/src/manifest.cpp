#include "adaptlm/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <zlib.h>

#include "adaptlm/errors.hpp"
#include "adaptlm/rng.hpp"
#include "adaptlm/run_config.hpp"

namespace adaptlm {

using nlohmann::json;

namespace {

uLong crc_file(uLong crc, const std::filesystem::path& path, std::uintmax_t& bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    if (n == 0) break;
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
    bytes += n;
  }
  return crc;
}

}  // namespace

FileDigest digest_file(std::string role, const std::filesystem::path& path) {
  FileDigest d;
  d.role = std::move(role);
  d.path = path.string();
  uLong crc = crc32(0L, Z_NULL, 0);
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string rel = std::filesystem::relative(f, path).generic_string();
      crc = crc32(crc, reinterpret_cast<const Bytef*>(rel.data()), static_cast<uInt>(rel.size()));
      crc = crc_file(crc, f, d.bytes);
    }
  } else {
    crc = crc_file(crc, path, d.bytes);
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  d.crc32 = buf;
  return d;
}

json to_json(const RunManifest& m) {
  auto files = [](const std::vector<FileDigest>& list) {
    json out = json::array();
    for (const auto& f : list) out.push_back({{"role", f.role}, {"path", f.path}, {"crc32", f.crc32}, {"bytes", f.bytes}});
    return out;
  };
  return json{{"command", m.command},
              {"config", m.config},
              {"config_hash", config_hash(m.config)},
              {"seed", m.seed},
              {"rng_algorithm", kRngAlgorithm},
              {"inputs", files(m.inputs)},
              {"outputs", files(m.outputs)},
              {"stop_reason", m.stop_reason},
              {"results", m.results}};
}

void write_run_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(m).dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace adaptlm
