#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mos/errors.hpp"
#include "mos/memory.hpp"
#include "mos/nn.hpp"
#include "mos/random.hpp"
#include "mos/tensor.hpp"

namespace mos {

// Which memory streams feed the network. `none` is the memoryless baseline,
// `short_term` adds impressions only, `long_term` history only.
enum class MemMode { none, short_term, long_term, full };

inline bool uses_history(MemMode m) { return m == MemMode::long_term || m == MemMode::full; }
inline bool uses_impressions(MemMode m) { return m == MemMode::short_term || m == MemMode::full; }

inline std::string to_string(MemMode m) {
  switch (m) {
    case MemMode::none: return "none";
    case MemMode::short_term: return "short";
    case MemMode::long_term: return "long";
    case MemMode::full: return "full";
  }
  return "?";
}

inline MemMode parse_mem_mode(const std::string& s) {
  if (s == "none") return MemMode::none;
  if (s == "short") return MemMode::short_term;
  if (s == "long") return MemMode::long_term;
  if (s == "full") return MemMode::full;
  throw ConfigError("unknown mem_mode '" + s + "' (expected none, short, long or full)");
}

// Both memory encoders are two stacked self-attention blocks.
inline constexpr std::size_t kMemoryEncoderDepth = 2;

struct ModelConfig {
  std::size_t num_phases = 7;
  std::size_t window = 16;
  std::size_t image_size = 32;
  std::size_t patch_size = 16;
  std::size_t channels = 1;
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t depth = 1;
  MemMode mem_mode = MemMode::full;
  std::vector<std::size_t> intervals = kDefaultImpressionIntervals;
  std::size_t step_size = kDefaultStepSize;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t patches_per_frame() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t frame_size() const { return channels * image_size * image_size; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (num_phases == 0) fail("num_phases must be positive");
    if (window == 0) fail("window must be at least 1");
    if (channels == 0) fail("channels must be positive");
    if (image_size == 0 || patch_size == 0) fail("image_size and patch_size must be positive");
    if (image_size % patch_size != 0) {
      fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (dim == 0 || dim % 2 != 0) fail("dim must be even and positive");
    if (heads == 0 || dim % heads != 0) {
      fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (depth == 0) fail("depth must be at least 1");
    if (step_size == 0) fail("step_size must be positive");
    if (intervals.empty()) fail("intervals must not be empty");
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      if (intervals[i] == 0) fail("intervals must be positive");
      if (i > 0 && intervals[i] <= intervals[i - 1]) fail("intervals must be strictly increasing");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct HistoryEncoderParams {
  LinearParams<T> phase_proj;  // one-hot [C] -> [d]
  Tensor<T> mask_embed;        // [1, d], scaled by the mask bit
  Tensor<T> query;             // [1, d] learnable history token
  std::vector<MhsaBlockParams<T>> blocks;

  template <typename F>
  void visit(F&& f) {
    phase_proj.visit("history.phase_proj", f);
    f(std::string("history.mask_embed"), mask_embed);
    f(std::string("history.query"), query);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("history.blocks." + std::to_string(i), f);
  }
};

template <typename T>
struct ImpressionEncoderParams {
  Tensor<T> query;  // [1, d] learnable impression token
  std::vector<MhsaBlockParams<T>> blocks;

  template <typename F>
  void visit(F&& f) {
    f(std::string("impression.query"), query);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("impression.blocks." + std::to_string(i), f);
  }
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  LinearParams<T> patch_proj;
  Tensor<T> cls_token;     // [1, d]
  Tensor<T> pos_spatial;   // [patches_per_frame, d]
  Tensor<T> pos_temporal;  // [window, d]
  std::vector<MhsaBlockParams<T>> blocks;
  LayerNormParams<T> norm;
  LinearParams<T> head;
  std::optional<HistoryEncoderParams<T>> history;
  std::optional<ImpressionEncoderParams<T>> impression;

  // Each parameter group draws from its own stream so the backbone is the
  // same for every mem_mode given a seed.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t d = config.dim;
    ModelParams p;
    p.config = config;
    Rng rng(mix_seed(seed, 0));
    p.patch_proj = LinearParams<T>::init(config.patch_dim(), d, rng);
    p.cls_token = init_projection<T>({1, d}, rng);
    p.pos_spatial = init_projection<T>({config.patches_per_frame(), d}, rng);
    p.pos_temporal = init_projection<T>({config.window, d}, rng);
    for (std::size_t i = 0; i < config.depth; ++i) p.blocks.push_back(MhsaBlockParams<T>::init(d, rng));
    p.norm = LayerNormParams<T>::init(d);
    p.head = LinearParams<T>::init(d, config.num_phases, rng);
    if (uses_history(config.mem_mode)) {
      Rng hrng(mix_seed(seed, 1));
      HistoryEncoderParams<T> h;
      h.phase_proj = LinearParams<T>::init(config.num_phases, d, hrng);
      h.mask_embed = init_projection<T>({1, d}, hrng);
      h.query = init_projection<T>({1, d}, hrng);
      for (std::size_t i = 0; i < kMemoryEncoderDepth; ++i) h.blocks.push_back(MhsaBlockParams<T>::init(d, hrng));
      p.history = std::move(h);
    }
    if (uses_impressions(config.mem_mode)) {
      Rng irng(mix_seed(seed, 2));
      ImpressionEncoderParams<T> e;
      e.query = init_projection<T>({1, d}, irng);
      for (std::size_t i = 0; i < kMemoryEncoderDepth; ++i) e.blocks.push_back(MhsaBlockParams<T>::init(d, irng));
      p.impression = std::move(e);
    }
    return p;
  }

  // Visits (name, tensor) in a fixed order; names are the checkpoint keys.
  template <typename F>
  void visit(F&& f) {
    patch_proj.visit("patch_proj", f);
    f(std::string("cls_token"), cls_token);
    f(std::string("pos_spatial"), pos_spatial);
    f(std::string("pos_temporal"), pos_temporal);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("blocks." + std::to_string(i), f);
    norm.visit("norm", f);
    head.visit("head", f);
    if (history) history->visit(f);
    if (impression) impression->visit(f);
  }

  // Handles share storage with this object.
  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto self = *this;
    self.visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
  }

  // Independent deep copy.
  ModelParams clone() const { return cast<T>(); }

  template <typename U>
  ModelParams<U> cast() const {
    auto out = ModelParams<U>::init(config, 0);
    const auto src = named_tensors();
    const auto dst = out.named_tensors();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto values = dst[i].second;
      const auto from = src[i].second.data();
      std::copy(from.begin(), from.end(), values.mutable_data().begin());
    }
    return out;
  }

  void zero_grad() {
    for (auto t : tensors()) t.zero_grad();
  }
};

using FrameView = std::span<const float>;

// Spatio-temporal tokens for a window of frames: [window * patches, d].
// Token (t, p) = patch_proj(patch p of frame t) + pos_spatial[p] + pos_temporal[t].
template <typename T>
Tensor<T> patch_embed(const ModelParams<T>& params, std::span<const FrameView> window) {
  const auto& cfg = params.config;
  if (window.size() != cfg.window) {
    throw InputError("patch_embed: expected " + std::to_string(cfg.window) + " frames, got " +
                     std::to_string(window.size()));
  }
  const std::size_t side = cfg.patches_per_side(), ps = cfg.patch_size, img = cfg.image_size;
  const std::size_t per_frame = cfg.patches_per_frame(), pdim = cfg.patch_dim();
  std::vector<T> patches(cfg.window * per_frame * pdim);
  std::size_t k = 0;
  for (std::size_t t = 0; t < window.size(); ++t) {
    const auto& frame = window[t];
    if (frame.size() != cfg.frame_size()) {
      throw InputError("patch_embed: frame " + std::to_string(t) + " has " + std::to_string(frame.size()) +
                       " values, expected " + std::to_string(cfg.frame_size()));
    }
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px)
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t y = 0; y < ps; ++y)
            for (std::size_t x = 0; x < ps; ++x)
              patches[k++] = static_cast<T>(frame[c * img * img + (py * ps + y) * img + px * ps + x]);
  }
  const Tensor<T> patch_matrix({cfg.window * per_frame, pdim}, std::move(patches));
  const auto projected = linear(patch_matrix, params.patch_proj);
  const auto pos = add(tile_rows(params.pos_spatial, cfg.window), repeat_rows(params.pos_temporal, per_frame));
  return add(projected, pos);
}

// Encodes the long-term history into one d-vector [1, d].
template <typename T>
Tensor<T> history_token(const ModelParams<T>& params, const HistoryState& history) {
  const auto& cfg = params.config;
  if (!params.history) throw ConfigError("history_token: model has no history encoder (mem_mode " +
                                         to_string(cfg.mem_mode) + ")");
  if (history.num_phases() != cfg.num_phases) {
    throw ConfigError("history_token: history has " + std::to_string(history.num_phases()) +
                      " phases, model expects " + std::to_string(cfg.num_phases));
  }
  const std::size_t c = cfg.num_phases, d = cfg.dim;
  const auto entries = entry_matrix(history);
  std::vector<T> onehot(c * c), steps(c * d), mask(c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) onehot[i * c + j] = static_cast<T>(entries(i, j));
    const auto enc = sinusoidal_encoding<T>(static_cast<std::size_t>(entries(i, c)), d);
    std::copy(enc.data().begin(), enc.data().end(), steps.begin() + i * d);
    mask[i] = static_cast<T>(entries(i, c + 1));
  }
  const auto& enc = *params.history;
  const auto phase_rows = linear(Tensor<T>({c, c}, std::move(onehot)), enc.phase_proj);
  const auto mask_rows = matmul(Tensor<T>({c, 1}, std::move(mask)), enc.mask_embed);
  const auto rows = add(add(phase_rows, Tensor<T>({c, d}, std::move(steps))), mask_rows);
  auto seq = concat_rows<T>({rows, enc.query});
  for (const auto& block : enc.blocks) seq = mhsa_block(seq, block, cfg.heads);
  return slice_rows(seq, c, 1);
}

// Encodes cached impressions (no positional encoding) into [1, d].
template <typename T>
Tensor<T> impression_token(const ModelParams<T>& params, std::span<const std::vector<float>> impressions) {
  const auto& cfg = params.config;
  if (!params.impression) throw ConfigError("impression_token: model has no impression encoder (mem_mode " +
                                            to_string(cfg.mem_mode) + ")");
  const std::size_t d = cfg.dim;
  std::vector<Tensor<T>> parts;
  if (!impressions.empty()) {
    std::vector<T> stacked;
    stacked.reserve(impressions.size() * d);
    for (const auto& v : impressions) {
      if (v.size() != d) {
        throw InputError("impression_token: impression of dimension " + std::to_string(v.size()) +
                         ", expected " + std::to_string(d));
      }
      stacked.insert(stacked.end(), v.begin(), v.end());
    }
    parts.emplace_back(Shape{impressions.size(), d}, std::move(stacked));
  }
  parts.push_back(params.impression->query);
  auto seq = concat_rows(parts);
  for (const auto& block : params.impression->blocks) seq = mhsa_block(seq, block, cfg.heads);
  return slice_rows(seq, impressions.size(), 1);
}

// Intermediate values at the fusion points, for hooks and tests.
template <typename T>
struct ForwardTrace {
  Tensor<T> history_token;     // undefined unless history is used
  Tensor<T> fused_cls;         // cls token after early fusion, fed to the decoder
  Tensor<T> decoder_cls;       // normalized decoder output at the cls position
  Tensor<T> impression_token;  // undefined unless impressions are used
  std::vector<AttentionProbe<T>> decoder_attention;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;  // [1, C]
  Tensor<T> cls;     // [1, d] final augmented cls token, cached as an impression
};

template <typename T>
ForwardOutput<T> forward(const ModelParams<T>& params, std::span<const FrameView> window, const HistoryState& history,
                         std::span<const std::vector<float>> impressions, ForwardTrace<T>* trace = nullptr) {
  const auto& cfg = params.config;
  const auto tokens = patch_embed(params, window);
  Tensor<T> cls = params.cls_token;
  if (uses_history(cfg.mem_mode)) {
    const auto h = history_token(params, history);
    cls = add(cls, h);
    if (trace) trace->history_token = h;
  }
  if (trace) trace->fused_cls = cls;
  auto seq = concat_rows<T>({cls, tokens});
  if (trace) trace->decoder_attention.assign(params.blocks.size(), {});
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    seq = mhsa_block(seq, params.blocks[i], cfg.heads, trace ? &trace->decoder_attention[i] : nullptr);
  }
  const auto decoder_cls = layer_norm(slice_rows(seq, 0, 1), params.norm);
  if (trace) trace->decoder_cls = decoder_cls;
  Tensor<T> final_cls = decoder_cls;
  if (uses_impressions(cfg.mem_mode)) {
    const auto imp = impression_token(params, impressions);
    final_cls = add(final_cls, imp);
    if (trace) trace->impression_token = imp;
  }
  return {linear(final_cls, params.head), final_cls};
}

// Index of the largest logit; ties go to the lowest phase id.
template <typename T>
PhaseId argmax_phase(std::span<const T> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<PhaseId>(best);
}

}  // namespace mos
