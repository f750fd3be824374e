#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mos/errors.hpp"
#include "mos/io.hpp"
#include "mos/memory.hpp"
#include "mos/metrics.hpp"
#include "mos/model.hpp"
#include "mos/synthdata.hpp"

namespace mos {

struct PushResult {
  PhaseId phase = 0;
  std::vector<float> logits;
};

// Causal per-video inference state. History is driven by the model's own
// argmax predictions; every frame's final cls vector is cached as an
// impression.
class OnlineSession {
 public:
  explicit OnlineSession(const ModelParams<float>& params)
      : params_(&params),
        history_(params.config.num_phases, params.config.step_size),
        impressions_(params.config.dim) {}

  PushResult push_frame(FrameView frame) {
    const auto& cfg = params_->config;
    if (frame.size() != cfg.frame_size()) {
      throw InputError("push_frame: frame has " + std::to_string(frame.size()) + " values, expected " +
                       std::to_string(cfg.frame_size()));
    }
    buffer_.emplace_back(frame.begin(), frame.end());
    if (buffer_.size() > cfg.window) buffer_.pop_front();

    // Left-pad with the first frame of the video until the window fills up.
    std::vector<FrameView> window;
    window.reserve(cfg.window);
    for (std::size_t i = buffer_.size(); i < cfg.window; ++i) window.emplace_back(buffer_.front());
    for (const auto& f : buffer_) window.emplace_back(f);

    const auto t = static_cast<std::int64_t>(frames_seen_);
    std::vector<std::vector<float>> retrieved;
    if (uses_impressions(cfg.mem_mode)) retrieved = impressions_retrieve(impressions_, t, cfg.intervals);

    NoGradGuard no_grad;
    const auto out = forward(*params_, std::span<const FrameView>(window), history_,
                             std::span<const std::vector<float>>(retrieved));
    PushResult result;
    result.logits.assign(out.logits.data().begin(), out.logits.data().end());
    result.phase = argmax_phase<float>(result.logits);

    impressions_.store(t, out.cls.data());
    history_.observe(result.phase);
    predictions_.push_back(result.phase);
    max_logits_.push_back(result.logits[static_cast<std::size_t>(result.phase)]);
    ++frames_seen_;
    return result;
  }

  const ModelConfig& config() const { return params_->config; }
  std::size_t frames_seen() const { return frames_seen_; }
  const HistoryState& history() const { return history_; }
  // Live history, for counterfactual edits between frames.
  HistoryState& mutable_history() { return history_; }
  const ImpressionCache& impressions() const { return impressions_; }
  const std::vector<PhaseId>& predictions() const { return predictions_; }
  const std::vector<float>& max_logits() const { return max_logits_; }

 private:
  const ModelParams<float>* params_;
  std::deque<Frame> buffer_;
  std::size_t frames_seen_ = 0;
  HistoryState history_;
  ImpressionCache impressions_;
  std::vector<PhaseId> predictions_;
  std::vector<float> max_logits_;
};

inline OnlineSession new_session(const ModelParams<float>& params, const ModelConfig& config) {
  if (!(params.config == config)) throw ConfigError("new_session: config does not match the parameters' config");
  return OnlineSession(params);
}

struct ReplayResult {
  std::vector<PhaseId> predictions;
  std::vector<float> max_logits;
};

// A single edit to the live history.
struct HistoryEdit {
  enum class Action { erase, set };
  Action action = Action::erase;
  PhaseId phase = 0;
  std::size_t frame_count = 0;  // set only
  bool mask = false;            // set only
};

// Edits applied immediately before the frame `frame_index` is processed.
struct FrameEdits {
  std::size_t frame_index = 0;
  std::vector<HistoryEdit> edits;
};

inline void apply_edits(HistoryState& history, std::span<const HistoryEdit> edits) {
  for (const auto& e : edits) {
    if (e.action == HistoryEdit::Action::erase) {
      history = intervene_erase(history, {e.phase});
    } else {
      history = intervene_set(history, e.phase, e.frame_count, e.mask);
    }
  }
}

inline ReplayResult counterfactual_replay(const ModelParams<float>& params, const ProcedureRecord& record,
                                          std::span<const FrameEdits> edits) {
  for (std::size_t i = 1; i < edits.size(); ++i) {
    if (edits[i].frame_index <= edits[i - 1].frame_index) {
      throw InputError("counterfactual_replay: edit frame indices must be strictly increasing (" +
                       std::to_string(edits[i - 1].frame_index) + " then " + std::to_string(edits[i].frame_index) +
                       ")");
    }
  }
  if (record.frames.empty()) throw InputError("replay: video '" + record.video_id + "' has no frames");
  OnlineSession session(params);
  std::size_t next = 0;
  for (std::size_t t = 0; t < record.frames.size(); ++t) {
    if (next < edits.size() && edits[next].frame_index == t) {
      apply_edits(session.mutable_history(), edits[next].edits);
      ++next;
    }
    session.push_frame(record.frames[t]);
  }
  return {session.predictions(), session.max_logits()};
}

inline ReplayResult replay_video(const ModelParams<float>& params, const ProcedureRecord& record) {
  return counterfactual_replay(params, record, {});
}

// Edits that overwrite the whole history with the ground-truth history before
// every frame from `first_frame` on.
inline std::vector<FrameEdits> ground_truth_history_edits(const ProcedureRecord& record, std::size_t num_phases,
                                                          std::size_t step_size, std::size_t first_frame = 0) {
  std::vector<FrameEdits> out;
  std::vector<std::size_t> counts(num_phases, 0);
  for (std::size_t t = 0; t < record.labels.size(); ++t) {
    if (t >= first_frame) {
      FrameEdits fe{t, {}};
      for (std::size_t p = 0; p < num_phases; ++p) {
        fe.edits.push_back({HistoryEdit::Action::set, static_cast<PhaseId>(p), counts[p],
                            step_filter(counts[p], step_size) >= 1});
      }
      out.push_back(std::move(fe));
    }
    ++counts[static_cast<std::size_t>(record.labels[t])];
  }
  return out;
}

// ---- Ribbon CSV -------------------------------------------------------------
// frame_index,predicted_phase,ground_truth_phase,max_logit
// ground_truth_phase is empty when labels are unknown.

inline std::string encode_ribbon(const ReplayResult& r, std::span<const PhaseId> ground_truth) {
  std::ostringstream os;
  os << "frame_index,predicted_phase,ground_truth_phase,max_logit\n";
  os.precision(9);
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    os << i << ',' << r.predictions[i] << ',';
    if (i < ground_truth.size()) os << ground_truth[i];
    os << ',' << r.max_logits[i] << '\n';
  }
  return os.str();
}

inline void write_ribbon(const std::filesystem::path& path, const ReplayResult& r,
                         std::span<const PhaseId> ground_truth) {
  io::write_file(path, encode_ribbon(r, ground_truth));
}

// Reads a ribbon back as predictions; ground truth is required.
inline VideoPredictions read_ribbon(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || io::trim(line) != "frame_index,predicted_phase,ground_truth_phase,max_logit") {
    throw IoError(path.string() + ": missing ribbon header");
  }
  VideoPredictions v;
  v.video_id = path.stem().string();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const auto f = io::split(io::trim(line), ',');
    try {
      if (f.size() != 4) throw std::invalid_argument("expected 4 fields");
      if (std::stoull(f[0]) != v.predicted.size()) throw std::invalid_argument("frame_index out of sequence");
      if (f[2].empty()) throw std::invalid_argument("ground_truth_phase is empty");
      v.predicted.push_back(std::stoi(f[1]));
      v.ground_truth.push_back(std::stoi(f[2]));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed ribbon row (" + e.what() + ")");
    }
  }
  return v;
}

// ---- Edits CSV --------------------------------------------------------------
// frame_index,action,phase_id,frame_count,mask
// action is erase or set; frame_count and mask may be empty for erase.
// Rows sharing a frame index form one edit group; indices must not decrease.

inline std::vector<FrameEdits> parse_edits_csv(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<FrameEdits> out;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw InputError(source + ": line " + std::to_string(line_no) + ": " + why);
  };
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = io::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (trimmed == "frame_index,action,phase_id,frame_count,mask") continue;
      fail("expected header 'frame_index,action,phase_id,frame_count,mask'");
    }
    const auto f = io::split(trimmed, ',');
    if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
    HistoryEdit edit;
    std::size_t frame = 0;
    try {
      std::size_t used = 0;
      frame = std::stoull(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("frame_index");
      edit.phase = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("phase_id");
    } catch (const std::exception&) {
      fail("frame_index and phase_id must be integers");
    }
    if (f[1] == "erase") {
      edit.action = HistoryEdit::Action::erase;
    } else if (f[1] == "set") {
      edit.action = HistoryEdit::Action::set;
      try {
        edit.frame_count = std::stoull(f[3]);
      } catch (const std::exception&) {
        fail("set requires a non-negative frame_count");
      }
      if (f[4] != "0" && f[4] != "1") fail("mask must be 0 or 1");
      edit.mask = f[4] == "1";
    } else {
      fail("unknown action '" + f[1] + "' (expected erase or set)");
    }
    if (!out.empty() && frame < out.back().frame_index) fail("frame_index decreases");
    if (out.empty() || out.back().frame_index != frame) out.push_back({frame, {}});
    out.back().edits.push_back(edit);
  }
  return out;
}

inline std::vector<FrameEdits> read_edits_csv(const std::filesystem::path& path) {
  return parse_edits_csv(io::read_file(path), path.string());
}

}  // namespace mos
