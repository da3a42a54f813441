#include "adaptlm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "adaptlm/errors.hpp"
#include "adaptlm/rng.hpp"
#include "adaptlm/run_config.hpp"

namespace adaptlm {

using nlohmann::json;

namespace {

std::vector<char> to_le_bytes(std::span<const float> values) {
  std::vector<char> bytes(values.size() * sizeof(float));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  return bytes;
}

void from_le_bytes(std::vector<char> bytes, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  std::memcpy(out.data(), bytes.data(), bytes.size());
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw FormatError(path.string() + ": missing format_version");
  }
  const int version = j["format_version"].get<int>();
  if (version != kCheckpointFormatVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint format_version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  for (const char* key : {"config", "parameters"}) {
    if (!j.contains(key)) throw FormatError(path.string() + ": missing '" + key + "'");
  }
  return j;
}

CheckpointInfo info_from(const json& j) {
  CheckpointInfo info;
  try {
    info.seed = j.value("seed", std::uint64_t{0});
    info.classes = j.value("classes", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  return info;
}

}  // namespace

std::string crc32_hex(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::string file_crc32(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return crc32_hex(bytes.data(), bytes.size());
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& dir, const CheckpointInfo& info) {
  std::filesystem::create_directories(dir / "params");
  json params = json::array();
  for (const auto& p : model.named_parameters()) {
    const auto bytes = to_le_bytes(p.tensor->data());
    const std::string file = "params/" + p.name + ".f32";
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + (dir / file).string());
    params.push_back({{"name", p.name},
                      {"shape", p.tensor->shape()},
                      {"file", file},
                      {"offset", 0},
                      {"byte_length", bytes.size()},
                      {"crc32", crc32_hex(bytes.data(), bytes.size())}});
  }
  json manifest{{"format", "adaptlm-checkpoint"},
                {"format_version", kCheckpointFormatVersion},
                {"dtype", "float32-le"},
                {"config", model_config_to_json(model.config)},
                {"rng_algorithm", kRngAlgorithm},
                {"seed", info.seed},
                {"classes", info.classes},
                {"parameters", params}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
}

CheckpointInfo load_checkpoint_into(const std::filesystem::path& dir, Model<float>& model) {
  const json manifest = read_manifest(dir);
  struct Entry {
    Shape shape;
    std::string file;
    std::size_t offset = 0;
    std::size_t byte_length = 0;
    std::string crc;
  };
  std::map<std::string, Entry> entries;
  try {
    for (const auto& e : manifest.at("parameters")) {
      Entry entry{e.at("shape").get<Shape>(), e.at("file").get<std::string>(), e.at("offset").get<std::size_t>(),
                  e.at("byte_length").get<std::size_t>(), e.at("crc32").get<std::string>()};
      if (!entries.emplace(e.at("name").get<std::string>(), std::move(entry)).second) {
        throw FormatError("checkpoint manifest: duplicate tensor '" + e.at("name").get<std::string>() + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: malformed parameter entry: ") + e.what());
  }

  auto params = model.named_parameters();
  if (params.size() != entries.size()) {
    for (const auto& [name, entry] : entries) {
      bool known = false;
      for (const auto& p : params) known = known || p.name == name;
      if (!known) throw FormatError("checkpoint tensor '" + name + "' has no counterpart in the model");
    }
  }
  for (const auto& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
    const Entry& e = it->second;
    if (e.shape != p.tensor->shape()) {
      throw DimensionError("tensor '" + p.name + "': checkpoint shape " + shape_string(e.shape) +
                           " does not match model shape " + shape_string(p.tensor->shape()));
    }
    const std::size_t expected = p.tensor->numel() * sizeof(float);
    if (e.byte_length != expected) {
      throw FormatError("tensor '" + p.name + "': byte_length " + std::to_string(e.byte_length) + " does not match shape");
    }
    const auto path = dir / e.file;
    auto bytes = read_file(path);
    if (bytes.size() < e.offset + e.byte_length) {
      throw ChecksumError("tensor '" + p.name + "': " + path.string() + " is truncated (" + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(e.offset + e.byte_length) + ")");
    }
    std::vector<char> payload(bytes.begin() + static_cast<std::ptrdiff_t>(e.offset),
                              bytes.begin() + static_cast<std::ptrdiff_t>(e.offset + e.byte_length));
    const auto crc = crc32_hex(payload.data(), payload.size());
    if (crc != e.crc) {
      throw ChecksumError("tensor '" + p.name + "': crc32 " + crc + " does not match manifest " + e.crc);
    }
    from_le_bytes(std::move(payload), p.tensor->data());
  }
  return info_from(manifest);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  ModelConfig config;
  try {
    config = model_config_from_json(manifest.at("config"), "checkpoint.config");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  validate(config);
  LoadedCheckpoint out{init_params<float>(config, 0), {}};
  out.info = load_checkpoint_into(dir, out.model);
  return out;
}

}  // namespace adaptlm
