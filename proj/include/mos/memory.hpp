#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mos/errors.hpp"

namespace mos {

using PhaseId = int;

inline constexpr std::size_t kDefaultStepSize = 30;
inline const std::vector<std::size_t> kDefaultImpressionIntervals{64, 128, 192, 256, 320, 384, 448, 512};

// Number of whole steps covered by `frame_count` frames.
inline std::size_t step_filter(std::size_t frame_count, std::size_t step_size) {
  if (step_size == 0) throw ConfigError("step_filter: step size must be positive");
  return frame_count / step_size;
}

struct HistoryEntry {
  PhaseId phase_id = 0;
  std::size_t frame_count = 0;
  std::size_t step_count = 0;
  bool mask = false;

  bool operator==(const HistoryEntry&) const = default;
};

// Long-term history: one entry per phase class, ordered by phase id.
// Frame counts accumulate across every segment of a phase in the video.
class HistoryState {
 public:
  HistoryState() = default;
  HistoryState(std::size_t num_phases, std::size_t step_size) : step_size_(step_size) {
    if (num_phases == 0) throw ConfigError("HistoryState: phase count must be positive");
    if (step_size == 0) throw ConfigError("HistoryState: step size must be positive");
    entries_.resize(num_phases);
    for (std::size_t i = 0; i < num_phases; ++i) entries_[i].phase_id = static_cast<PhaseId>(i);
  }

  std::size_t num_phases() const { return entries_.size(); }
  std::size_t step_size() const { return step_size_; }
  std::span<const HistoryEntry> entries() const { return entries_; }
  const HistoryEntry& entry(PhaseId phase) const { return entries_.at(checked(phase)); }

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.frame_count;
    return n;
  }

  // One more frame of `phase`. The mask switches on once a full step has
  // accumulated and is never cleared here.
  void observe(PhaseId phase) {
    auto& e = entries_[checked(phase)];
    ++e.frame_count;
    e.step_count = step_filter(e.frame_count, step_size_);
    if (e.step_count >= 1) e.mask = true;
  }

  void erase(PhaseId phase) { entries_[checked(phase)].mask = false; }

  void set(PhaseId phase, std::size_t frame_count, bool mask) {
    auto& e = entries_[checked(phase)];
    e.frame_count = frame_count;
    e.step_count = step_filter(frame_count, step_size_);
    e.mask = mask;
  }

  bool operator==(const HistoryState&) const = default;

 private:
  std::size_t checked(PhaseId phase) const {
    if (phase < 0 || static_cast<std::size_t>(phase) >= entries_.size()) {
      throw InputError("phase " + std::to_string(phase) + " outside [0, " + std::to_string(entries_.size()) + ")");
    }
    return static_cast<std::size_t>(phase);
  }

  std::vector<HistoryEntry> entries_;
  std::size_t step_size_ = kDefaultStepSize;
};

inline HistoryState observe_phase(HistoryState state, PhaseId phase) {
  state.observe(phase);
  return state;
}

inline HistoryState intervene_erase(HistoryState state, const std::set<PhaseId>& phases) {
  for (PhaseId p : phases) state.erase(p);
  return state;
}

inline HistoryState intervene_set(HistoryState state, PhaseId phase, std::size_t frame_count, bool mask) {
  state.set(phase, frame_count, mask);
  return state;
}

// Row-major C x (C + 2) matrix; row i is [one-hot(i) | step_count_i | mask_i].
// This layout is what the history encoder consumes.
struct EntryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline EntryMatrix entry_matrix(const HistoryState& state) {
  const std::size_t c = state.num_phases();
  EntryMatrix m{c, c + 2, std::vector<double>(c * (c + 2), 0.0)};
  for (std::size_t i = 0; i < c; ++i) {
    const auto& e = state.entries()[i];
    m.values[i * m.cols + i] = 1.0;
    m.values[i * m.cols + c] = static_cast<double>(e.step_count);
    m.values[i * m.cols + c + 1] = e.mask ? 1.0 : 0.0;
  }
  return m;
}

// Short-term impressions: final cls vectors keyed by frame index.
class ImpressionCache {
 public:
  explicit ImpressionCache(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return slots_.size(); }
  bool contains(std::int64_t frame) const { return slots_.count(frame) != 0; }

  // Last write wins.
  void store(std::int64_t frame, std::span<const float> cls) {
    if (cls.size() != dim_) {
      throw InputError("impression of dimension " + std::to_string(cls.size()) + " stored in cache of dimension " +
                       std::to_string(dim_));
    }
    slots_[frame].assign(cls.begin(), cls.end());
  }

  // Null when the slot was never written.
  const std::vector<float>* find(std::int64_t frame) const {
    auto it = slots_.find(frame);
    return it == slots_.end() ? nullptr : &it->second;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::int64_t, std::vector<float>> slots_;
};

inline void impressions_store(ImpressionCache& cache, std::int64_t frame, std::span<const float> cls) {
  cache.store(frame, cls);
}

// One vector per offset, in offset order; slot (current - offset), or zeros
// when that slot is negative or empty.
inline std::vector<std::vector<float>> impressions_retrieve(const ImpressionCache& cache, std::int64_t current_frame,
                                                            std::span<const std::size_t> intervals) {
  std::vector<std::vector<float>> out;
  out.reserve(intervals.size());
  for (auto offset : intervals) {
    const std::int64_t index = current_frame - static_cast<std::int64_t>(offset);
    const auto* slot = index >= 0 ? cache.find(index) : nullptr;
    out.push_back(slot ? *slot : std::vector<float>(cache.dim(), 0.0f));
  }
  return out;
}

}  // namespace mos
