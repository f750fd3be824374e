#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mos/errors.hpp"
#include "mos/io.hpp"
#include "mos/json_util.hpp"
#include "mos/memory.hpp"
#include "mos/random.hpp"

namespace mos {

struct DurationRange {
  std::size_t min = 40;
  std::size_t max = 120;

  bool operator==(const DurationRange&) const = default;
};

// Stochastic linear-chain procedure generator. Phases are visited in order
// P0 -> P1 -> ... ; phase i (i > 0) is skipped with probability
// skip_probs[i]. Members of an ambiguous pair are rendered from the same
// base pattern, so only temporal context tells them apart.
struct GeneratorConfig {
  std::size_t num_phases = 7;
  std::vector<double> skip_probs;             // empty = never skip
  DurationRange duration{40, 120};            // default for every phase
  std::vector<DurationRange> phase_durations;  // optional per-phase override
  std::size_t image_size = 32;
  std::size_t channels = 1;
  double noise_sigma = 0.8;
  std::vector<std::pair<PhaseId, PhaseId>> ambiguous_pairs{{0, 4}};
  std::uint64_t seed = 7;
  std::size_t train_videos = 20;
  std::size_t val_videos = 4;
  std::size_t test_videos = 6;

  double skip_prob(std::size_t phase) const { return skip_probs.empty() ? 0.0 : skip_probs[phase]; }
  DurationRange duration_of(std::size_t phase) const {
    return phase_durations.empty() ? duration : phase_durations[phase];
  }
  std::size_t total_videos() const { return train_videos + val_videos + test_videos; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("generator config: " + m); };
    if (num_phases == 0) fail("num_phases must be positive");
    if (image_size == 0 || channels == 0) fail("image_size and channels must be positive");
    if (noise_sigma < 0) fail("noise_sigma must be non-negative");
    if (!skip_probs.empty()) {
      if (skip_probs.size() != num_phases) fail("skip_probs needs one entry per phase");
      if (skip_probs[0] != 0.0) fail("the first phase cannot be skipped");
      for (double p : skip_probs) {
        if (p < 0.0 || p >= 1.0) fail("skip probabilities must lie in [0, 1)");
      }
    }
    if (!phase_durations.empty() && phase_durations.size() != num_phases) {
      fail("phase_durations needs one entry per phase");
    }
    for (std::size_t i = 0; i < num_phases; ++i) {
      const auto r = duration_of(i);
      if (r.min < 1 || r.max < r.min) fail("duration ranges need 1 <= min <= max");
    }
    std::vector<bool> used(num_phases, false);
    for (const auto& [a, b] : ambiguous_pairs) {
      if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= num_phases || static_cast<std::size_t>(b) >= num_phases) {
        fail("ambiguous pair references an unknown phase");
      }
      if (a == b) fail("ambiguous pair must join two distinct phases");
      if (used[a] || used[b]) fail("ambiguous pairs must be disjoint");
      used[a] = used[b] = true;
    }
    if (total_videos() == 0) fail("at least one video is required");
  }

  bool operator==(const GeneratorConfig&) const = default;
};

using Frame = std::vector<float>;

struct ProcedureRecord {
  std::string video_id;
  std::size_t channels = 1;
  std::size_t image_size = 0;
  std::vector<Frame> frames;
  std::vector<PhaseId> labels;
  int fps = 1;

  std::size_t size() const { return frames.size(); }
  bool operator==(const ProcedureRecord&) const = default;
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + s + "'");
}

struct Dataset {
  GeneratorConfig config;
  std::vector<ProcedureRecord> videos;
  std::vector<Split> splits;  // parallel to videos

  std::vector<const ProcedureRecord*> split(Split s) const {
    std::vector<const ProcedureRecord*> out;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      if (splits[i] == s) out.push_back(&videos[i]);
    }
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

// Template index per phase: the second member of an ambiguous pair reuses
// the first member's template.
inline std::vector<std::size_t> template_assignment(const GeneratorConfig& config) {
  std::vector<std::size_t> out(config.num_phases, SIZE_MAX);
  for (const auto& [a, b] : config.ambiguous_pairs) {
    out[static_cast<std::size_t>(std::max(a, b))] = static_cast<std::size_t>(std::min(a, b));
  }
  std::size_t next = 0;
  std::vector<std::size_t> id_of_phase(config.num_phases);
  for (std::size_t p = 0; p < config.num_phases; ++p) {
    id_of_phase[p] = out[p] == SIZE_MAX ? next++ : id_of_phase[out[p]];
  }
  return id_of_phase;
}

// Orthonormal low-frequency DCT-II patterns (u, v) != (0, 0), ordered by
// total frequency; each has unit RMS over the image.
inline Frame base_template(std::size_t index, std::size_t image_size, std::size_t channels) {
  std::vector<std::pair<std::size_t, std::size_t>> freqs;
  for (std::size_t total = 1; freqs.size() <= index; ++total) {
    for (std::size_t u = total + 1; u-- > 0;) {
      freqs.emplace_back(u, total - u);
    }
  }
  const auto [u, v] = freqs[index];
  const double n = static_cast<double>(image_size);
  const double su = u ? std::numbers::sqrt2 : 1.0, sv = v ? std::numbers::sqrt2 : 1.0;
  Frame out(channels * image_size * image_size);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) {
        const double gx = std::cos(std::numbers::pi * static_cast<double>(u) * (static_cast<double>(x) + 0.5) / n);
        const double gy = std::cos(std::numbers::pi * static_cast<double>(v) * (static_cast<double>(y) + 0.5) / n);
        out[(c * image_size + y) * image_size + x] = static_cast<float>(su * sv * gx * gy);
      }
  return out;
}

inline Frame base_pattern(const GeneratorConfig& config, PhaseId phase) {
  return base_template(template_assignment(config).at(static_cast<std::size_t>(phase)), config.image_size,
                       config.channels);
}

inline ProcedureRecord sample_procedure(const GeneratorConfig& config, std::uint64_t video_seed,
                                        std::string video_id = "video") {
  config.validate();
  Rng rng(video_seed);
  ProcedureRecord rec;
  rec.video_id = std::move(video_id);
  rec.channels = config.channels;
  rec.image_size = config.image_size;
  for (std::size_t p = 0; p < config.num_phases; ++p) {
    if (p > 0 && rng.uniform() < config.skip_prob(p)) continue;
    const auto r = config.duration_of(p);
    const auto len = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(r.min),
                                                                static_cast<std::int64_t>(r.max)));
    rec.labels.insert(rec.labels.end(), len, static_cast<PhaseId>(p));
  }
  const auto ids = template_assignment(config);
  std::vector<Frame> templates;
  for (std::size_t p = 0; p < config.num_phases; ++p) {
    templates.push_back(base_template(ids[p], config.image_size, config.channels));
  }
  rec.frames.reserve(rec.labels.size());
  for (PhaseId label : rec.labels) {
    Frame f = templates[static_cast<std::size_t>(label)];
    for (auto& v : f) v += static_cast<float>(config.noise_sigma * rng.normal());
    rec.frames.push_back(std::move(f));
  }
  return rec;
}

inline std::string video_name(std::size_t index) {
  std::string s = std::to_string(index);
  return "video_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

// Videos are laid out train, then val, then test.
inline Dataset generate_dataset(const GeneratorConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  for (std::size_t i = 0; i < config.total_videos(); ++i) {
    ds.videos.push_back(sample_procedure(config, mix_seed(config.seed, i), video_name(i)));
    ds.splits.push_back(i < config.train_videos                       ? Split::train
                        : i < config.train_videos + config.val_videos ? Split::val
                                                                      : Split::test);
  }
  return ds;
}

// ---- JSON ------------------------------------------------------------------

inline void to_json(Json& j, const DurationRange& r) { j = Json::array({r.min, r.max}); }
inline void from_json(const Json& j, DurationRange& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("duration range must be [min, max]");
  r.min = j[0].get<std::size_t>();
  r.max = j[1].get<std::size_t>();
}

inline void to_json(Json& j, const GeneratorConfig& c) {
  Json pairs = Json::array();
  for (const auto& [a, b] : c.ambiguous_pairs) pairs.push_back({a, b});
  j = Json{{"num_phases", c.num_phases},
           {"skip_probs", c.skip_probs},
           {"duration", c.duration},
           {"phase_durations", c.phase_durations},
           {"image_size", c.image_size},
           {"channels", c.channels},
           {"noise_sigma", c.noise_sigma},
           {"ambiguous_pairs", pairs},
           {"seed", c.seed},
           {"train_videos", c.train_videos},
           {"val_videos", c.val_videos},
           {"test_videos", c.test_videos}};
}

// Overlays the keys present in `j` onto `c`.
inline void merge_generator_config(const Json& j, GeneratorConfig& c) {
  const std::string ctx = "generator";
  require_known_keys(j,
                     {"num_phases", "skip_probs", "duration", "phase_durations", "image_size", "channels",
                      "noise_sigma", "ambiguous_pairs", "seed", "train_videos", "val_videos", "test_videos"},
                     ctx);
  read_optional(j, "num_phases", c.num_phases, ctx);
  read_optional(j, "skip_probs", c.skip_probs, ctx);
  read_optional(j, "duration", c.duration, ctx);
  read_optional(j, "phase_durations", c.phase_durations, ctx);
  read_optional(j, "image_size", c.image_size, ctx);
  read_optional(j, "channels", c.channels, ctx);
  read_optional(j, "noise_sigma", c.noise_sigma, ctx);
  read_optional(j, "seed", c.seed, ctx);
  read_optional(j, "train_videos", c.train_videos, ctx);
  read_optional(j, "val_videos", c.val_videos, ctx);
  read_optional(j, "test_videos", c.test_videos, ctx);
  if (j.contains("ambiguous_pairs")) {
    c.ambiguous_pairs.clear();
    for (const auto& p : j.at("ambiguous_pairs")) {
      if (!p.is_array() || p.size() != 2) throw ConfigError("generator.ambiguous_pairs: entries must be [a, b]");
      c.ambiguous_pairs.emplace_back(p[0].get<PhaseId>(), p[1].get<PhaseId>());
    }
  }
}

// ---- On-disk format ----------------------------------------------------------
//
// <dir>/manifest.json          generator config, video list, split per video
// <dir>/<id>.labels.csv        "frame_index,phase_id" header, one row per frame
// <dir>/<id>.frames.bin        frame blob (below)
//
// Frame blob: "MOSFRAME" magic, u32 version (1), u32 frame count, u32
// channels, u32 height, u32 width, then count*channels*height*width
// little-endian float32 values, frame-major, channel-major within a frame.

inline constexpr char kFrameMagic[] = "MOSFRAME";
inline constexpr std::uint32_t kFrameBlobVersion = 1;
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::string encode_frame_blob(const ProcedureRecord& rec) {
  std::string out(kFrameMagic, 8);
  io::put_u32(out, kFrameBlobVersion);
  io::put_u32(out, static_cast<std::uint32_t>(rec.frames.size()));
  io::put_u32(out, static_cast<std::uint32_t>(rec.channels));
  io::put_u32(out, static_cast<std::uint32_t>(rec.image_size));
  io::put_u32(out, static_cast<std::uint32_t>(rec.image_size));
  for (const auto& f : rec.frames) io::put_f32s(out, f);
  return out;
}

// Fills frames/channels/image_size of `rec` from a blob file.
inline void read_frame_blob(const std::filesystem::path& path, ProcedureRecord& rec) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  if (r.take<IoError>(8, "magic") != std::string_view(kFrameMagic, 8)) {
    throw IoError(path.string() + ": not a frame blob (bad magic)");
  }
  const auto version = r.u32<IoError>("version");
  if (version != kFrameBlobVersion) {
    throw IoError(path.string() + ": unsupported frame blob version " + std::to_string(version));
  }
  const auto count = r.u32<IoError>("frame count");
  const auto channels = r.u32<IoError>("channels");
  const auto height = r.u32<IoError>("height");
  const auto width = r.u32<IoError>("width");
  if (height != width || channels == 0 || height == 0) {
    throw IoError(path.string() + ": unsupported frame shape " + std::to_string(channels) + "x" +
                  std::to_string(height) + "x" + std::to_string(width));
  }
  rec.channels = channels;
  rec.image_size = height;
  const std::size_t per_frame = static_cast<std::size_t>(channels) * height * width;
  rec.frames.assign(count, Frame(per_frame));
  for (std::uint32_t i = 0; i < count; ++i) r.f32s<IoError>(rec.frames[i], "frame " + std::to_string(i));
  if (r.remaining() != 0) throw IoError(path.string() + ": trailing bytes after last frame");
}

inline ProcedureRecord load_frame_blob(const std::filesystem::path& path) {
  ProcedureRecord rec;
  rec.video_id = path.stem().stem().string();
  read_frame_blob(path, rec);
  return rec;
}

inline std::string encode_labels_csv(const ProcedureRecord& rec) {
  std::string out = "frame_index,phase_id\n";
  for (std::size_t i = 0; i < rec.labels.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(rec.labels[i]) + "\n";
  }
  return out;
}

inline std::vector<PhaseId> read_labels_csv(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || io::trim(line) != "frame_index,phase_id") {
    throw IoError(path.string() + ": missing 'frame_index,phase_id' header");
  }
  std::vector<PhaseId> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const auto fields = io::split(io::trim(line), ',');
    try {
      if (fields.size() != 2) throw std::invalid_argument("expected 2 fields");
      const auto index = std::stoull(fields[0]);
      if (index != labels.size()) throw std::invalid_argument("frame_index out of sequence");
      labels.push_back(std::stoi(fields[1]));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed row (" + e.what() + ")");
    }
  }
  return labels;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  Json videos = Json::array();
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& rec = ds.videos[i];
    const std::string labels_name = rec.video_id + ".labels.csv";
    const std::string blob_name = rec.video_id + ".frames.bin";
    io::write_file(dir / labels_name, encode_labels_csv(rec));
    io::write_file(dir / blob_name, encode_frame_blob(rec));
    videos.push_back({{"id", rec.video_id},
                      {"split", to_string(ds.splits[i])},
                      {"frames", rec.frames.size()},
                      {"labels", labels_name},
                      {"blob", blob_name}});
  }
  const Json manifest{{"format", "mos-dataset"},
                      {"version", kDatasetVersion},
                      {"fps", 1},
                      {"generator", ds.config},
                      {"videos", videos}};
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  Json manifest;
  try {
    manifest = Json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": corrupt manifest (" + e.what() + ")");
  }
  Dataset ds;
  try {
    if (manifest.at("format") != "mos-dataset") throw IoError(manifest_path.string() + ": not a dataset manifest");
    if (manifest.at("version").get<std::uint32_t>() != kDatasetVersion) {
      throw IoError(manifest_path.string() + ": unsupported dataset version");
    }
    merge_generator_config(manifest.at("generator"), ds.config);
    for (const auto& v : manifest.at("videos")) {
      const auto labels_path = dir / v.at("labels").get<std::string>();
      const auto blob_path = dir / v.at("blob").get<std::string>();
      for (const auto& p : {labels_path, blob_path}) {
        if (!std::filesystem::exists(p)) throw IoError("dataset file listed in manifest is missing: " + p.string());
      }
      ProcedureRecord rec;
      rec.video_id = v.at("id").get<std::string>();
      read_frame_blob(blob_path, rec);
      rec.labels = read_labels_csv(labels_path);
      const auto expected = v.at("frames").get<std::size_t>();
      if (rec.frames.size() != expected || rec.labels.size() != expected) {
        throw IoError(blob_path.string() + ": manifest says " + std::to_string(expected) + " frames, found " +
                      std::to_string(rec.frames.size()) + " frames and " + std::to_string(rec.labels.size()) +
                      " labels");
      }
      ds.videos.push_back(std::move(rec));
      ds.splits.push_back(parse_split(v.at("split").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": corrupt manifest (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace mos
