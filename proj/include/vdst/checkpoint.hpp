#pragma once

// Checkpoints are a JSON manifest (hyperparameters, tensor names and shapes)
// next to a blob of little-endian float64 values in manifest order:
// "<stem>.json" and "<stem>.bin".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdst/guesser.hpp"
#include "vdst/model.hpp"

namespace vdst {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct CheckpointPaths {
  std::filesystem::path manifest, blob;
};

inline CheckpointPaths checkpoint_paths(const std::filesystem::path& path) {
  std::filesystem::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
  return {std::filesystem::path(stem).concat(".json"), std::filesystem::path(stem).concat(".bin")};
}

namespace detail {

inline void put_le(std::vector<unsigned char>& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

template <typename Named>
void write_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json config,
                      const Named& tensors, nlohmann::json extra) {
  const auto paths = checkpoint_paths(path);
  nlohmann::json manifest = {{"format", "vdst-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind},
                             {"config", std::move(config)}};
  if (!extra.is_null()) manifest["extra"] = std::move(extra);
  std::vector<unsigned char> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t->shape()}});
    for (double x : t->data()) put_le(blob, x);
  }
  manifest["tensors"] = std::move(entries);
  if (paths.manifest.has_parent_path()) std::filesystem::create_directories(paths.manifest.parent_path());
  std::ofstream m(paths.manifest);
  if (!m) throw CheckpointError("cannot write " + paths.manifest.string());
  m << manifest.dump(2) << '\n';
  std::ofstream b(paths.blob, std::ios::binary);
  if (!b) throw CheckpointError("cannot write " + paths.blob.string());
  b.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!m || !b) throw CheckpointError("write failed for " + path.string());
}

inline nlohmann::json read_manifest(const std::filesystem::path& path, const std::string& kind) {
  const auto paths = checkpoint_paths(path);
  std::ifstream in(paths.manifest);
  if (!in) throw CheckpointError("cannot open checkpoint manifest " + paths.manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed manifest " + paths.manifest.string() + ": " + e.what());
  }
  if (j.value("format", "") != "vdst-checkpoint") throw CheckpointError(paths.manifest.string() + " is not a checkpoint");
  if (j.value("kind", "") != kind)
    throw CheckpointError(paths.manifest.string() + " holds a " + j.value("kind", "?") + " checkpoint, expected " + kind);
  return j;
}

template <typename Named>
void read_blob(const std::filesystem::path& path, const nlohmann::json& manifest, Named tensors) {
  const auto paths = checkpoint_paths(path);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != tensors.size()) throw CheckpointError("checkpoint tensor count does not match the model");
  std::ifstream in(paths.blob, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint blob " + paths.blob.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    if (entries[i].at("name") != name)
      throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + entries[i].at("name").get<std::string>() +
                            "', expected '" + name + "'");
    if (entries[i].at("shape").get<Shape>() != t->shape())
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    if (offset + 8 * t->size() > blob.size()) throw CheckpointError("checkpoint blob is truncated");
    for (double& x : t->data()) {
      x = get_le(blob.data() + offset);
      offset += 8;
    }
  }
  if (offset != blob.size()) throw CheckpointError("checkpoint blob has trailing bytes");
}

}  // namespace detail

inline void save_model(const std::filesystem::path& path, const VdstParams& p, nlohmann::json extra = nullptr) {
  detail::write_checkpoint(path, "qgen", nlohmann::json(p.config), p.named(), std::move(extra));
}

inline VdstParams load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr) {
  const nlohmann::json j = detail::read_manifest(path, "qgen");
  ModelConfig c;
  try {
    c = j.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config in checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad model config in checkpoint: ") + e.what());
  }
  VdstParams p(c);
  detail::read_blob(path, j, p.named());
  if (extra) *extra = j.value("extra", nlohmann::json());
  return p;
}

inline void save_guesser(const std::filesystem::path& path, const GuesserParams& p, nlohmann::json extra = nullptr) {
  detail::write_checkpoint(path, "guesser", nlohmann::json(p.config), p.named(), std::move(extra));
}

inline GuesserParams load_guesser(const std::filesystem::path& path, nlohmann::json* extra = nullptr) {
  const nlohmann::json j = detail::read_manifest(path, "guesser");
  GuesserConfig c;
  try {
    c = j.at("config").get<GuesserConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad guesser config in checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad guesser config in checkpoint: ") + e.what());
  }
  GuesserParams p(c);
  detail::read_blob(path, j, p.named());
  if (extra) *extra = j.value("extra", nlohmann::json());
  return p;
}

// Byte-level equality of two checkpoints (manifest and blob).
inline bool checkpoint_files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const auto pa = checkpoint_paths(a), pb = checkpoint_paths(b);
  return slurp(pa.blob) == slurp(pb.blob) && slurp(pa.manifest) == slurp(pb.manifest);
}

}  // namespace vdst
