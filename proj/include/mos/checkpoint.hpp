#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mos/errors.hpp"
#include "mos/io.hpp"
#include "mos/json_util.hpp"
#include "mos/model.hpp"

namespace mos {

inline void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"num_phases", c.num_phases}, {"window", c.window},      {"image_size", c.image_size},
           {"patch_size", c.patch_size}, {"channels", c.channels},  {"dim", c.dim},
           {"heads", c.heads},           {"depth", c.depth},        {"mem_mode", to_string(c.mem_mode)},
           {"intervals", c.intervals},   {"step_size", c.step_size}};
}

// Overlays the keys present in `j` onto `c`.
inline void merge_model_config(const Json& j, ModelConfig& c) {
  const std::string ctx = "model";
  require_known_keys(j,
                     {"num_phases", "window", "image_size", "patch_size", "channels", "dim", "heads", "depth",
                      "mem_mode", "intervals", "step_size"},
                     ctx);
  read_optional(j, "num_phases", c.num_phases, ctx);
  read_optional(j, "window", c.window, ctx);
  read_optional(j, "image_size", c.image_size, ctx);
  read_optional(j, "patch_size", c.patch_size, ctx);
  read_optional(j, "channels", c.channels, ctx);
  read_optional(j, "dim", c.dim, ctx);
  read_optional(j, "heads", c.heads, ctx);
  read_optional(j, "depth", c.depth, ctx);
  read_optional(j, "intervals", c.intervals, ctx);
  read_optional(j, "step_size", c.step_size, ctx);
  if (j.contains("mem_mode")) c.mem_mode = parse_mem_mode(j.at("mem_mode").get<std::string>());
}

// Checkpoint container:
//   8 bytes  "MOSCKPT\0"
//   1 byte   format version
//   u32 LE   header length N
//   N bytes  JSON header {"version", "config", "params": [{"name", "shape"}...]}
//   payload  float32 LE values of each parameter, in header order
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

inline std::string encode_checkpoint(const ModelParams<float>& params) {
  const auto named = params.named_tensors();
  Json entries = Json::array();
  for (const auto& [name, t] : named) entries.push_back({{"name", name}, {"shape", t.shape()}});
  const Json header{{"version", kCheckpointVersion}, {"config", params.config}, {"params", entries}};
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, 8);
  out.push_back(static_cast<char>(kCheckpointVersion));
  io::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& [name, t] : named) io::put_f32s(out, t.data());
  return out;
}

inline void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  if (r.take<LoadError>(8, "magic") != std::string_view(kCheckpointMagic, 8)) {
    throw LoadError(source + ": field 'magic': not a checkpoint file");
  }
  const auto version = r.u8<LoadError>("version");
  if (version != kCheckpointVersion) {
    throw LoadError(source + ": field 'version': unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.u32<LoadError>("header length");
  Json header;
  try {
    header = Json::parse(r.take<LoadError>(header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(source + ": field 'header': invalid JSON (" + std::string(e.what()) + ")");
  }
  if (!header.contains("version") || header["version"] != version) {
    throw LoadError(source + ": field 'header.version' disagrees with container version");
  }
  ModelConfig config;
  try {
    merge_model_config(header.at("config"), config);
    config.validate();
  } catch (const std::exception& e) {
    throw LoadError(source + ": field 'config': " + e.what());
  }
  Checkpoint ck{config, ModelParams<float>::init(config, 0)};
  auto named = ck.params.named_tensors();
  const auto& entries = header.contains("params") ? header["params"] : Json::array();
  if (entries.size() != named.size()) {
    throw LoadError(source + ": field 'params': " + std::to_string(entries.size()) + " tensors stored, config " +
                    "expects " + std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto stored_name = entries[i].value("name", std::string());
    if (stored_name != name) {
      throw LoadError(source + ": field 'params[" + std::to_string(i) + "].name': expected '" + name + "', found '" +
                      stored_name + "'");
    }
    const auto stored_shape = entries[i].value("shape", Shape{});
    if (stored_shape != t.shape()) {
      throw LoadError(source + ": field '" + name + "': stored shape " + shape_str(stored_shape) +
                      " does not match config shape " + shape_str(t.shape()));
    }
  }
  for (auto& [name, t] : named) r.f32s<LoadError>(t.mutable_data(), "payload of '" + name + "'");
  if (r.remaining() != 0) throw LoadError(source + ": field 'payload': trailing bytes after last tensor");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

inline std::string checkpoint_hash(const std::filesystem::path& path) { return io::fnv1a_hex(io::read_file(path)); }

}  // namespace mos
