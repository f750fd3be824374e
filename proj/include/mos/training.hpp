#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mos/adam.hpp"
#include "mos/errors.hpp"
#include "mos/inference.hpp"
#include "mos/memory.hpp"
#include "mos/metrics.hpp"
#include "mos/model.hpp"
#include "mos/synthdata.hpp"

namespace mos {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  MemMode mem_mode = MemMode::full;
  std::size_t step_size = kDefaultStepSize;
  std::vector<std::size_t> intervals = kDefaultImpressionIntervals;

  void validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
    if (step_size == 0) throw ConfigError("train config: step_size must be positive");
  }

  // The memory settings of the model being trained come from here.
  ModelConfig apply_to(ModelConfig model) const {
    model.mem_mode = mem_mode;
    model.step_size = step_size;
    model.intervals = intervals;
    return model;
  }
};

// History from the ground-truth labels of frames [0, t); frame t itself is
// excluded.
inline HistoryState build_gt_history(std::span<const PhaseId> labels, std::size_t t, std::size_t num_phases,
                                     std::size_t step_size) {
  if (t > labels.size()) {
    throw InputError("build_gt_history: frame " + std::to_string(t) + " beyond " + std::to_string(labels.size()) +
                     " labels");
  }
  HistoryState h(num_phases, step_size);
  for (std::size_t i = 0; i < t; ++i) h.observe(labels[i]);
  return h;
}

struct Example {
  std::vector<FrameView> window;
  HistoryState history;
  std::vector<std::vector<float>> impressions;
  PhaseId label = 0;
};

// Window frames [t-T+1, t] (indices below 0 repeat frame 0), ground-truth
// history, impressions from `cache`.
inline Example make_example(const ProcedureRecord& record, std::size_t t, const ImpressionCache& cache,
                            const ModelConfig& config) {
  if (t >= record.frames.size()) {
    throw InputError("make_example: frame " + std::to_string(t) + " beyond video '" + record.video_id + "'");
  }
  Example ex;
  ex.window.reserve(config.window);
  for (std::size_t i = 0; i < config.window; ++i) {
    const auto idx = static_cast<std::int64_t>(t) - static_cast<std::int64_t>(config.window - 1 - i);
    ex.window.emplace_back(record.frames[static_cast<std::size_t>(std::max<std::int64_t>(idx, 0))]);
  }
  ex.history = build_gt_history(record.labels, t, config.num_phases, config.step_size);
  ex.impressions = impressions_retrieve(cache, static_cast<std::int64_t>(t), config.intervals);
  ex.label = record.labels[t];
  return ex;
}

struct FrameRef {
  std::size_t video = 0;  // index into the training video list
  std::size_t frame = 0;
};

// Visiting order of one epoch: a permutation of all training frames that
// depends only on (seed, epoch).
inline std::vector<FrameRef> epoch_order(std::span<const ProcedureRecord* const> videos, std::uint64_t seed,
                                         std::size_t epoch) {
  std::vector<FrameRef> refs;
  for (std::size_t v = 0; v < videos.size(); ++v)
    for (std::size_t f = 0; f < videos[v]->frames.size(); ++f) refs.push_back({v, f});
  Rng rng(mix_seed(seed ^ 0x5eed5eed5eedULL, epoch));
  rng.shuffle(refs);
  return refs;
}

// Observer for the training loop; default implementations ignore events.
class TrainAudit {
 public:
  virtual ~TrainAudit() = default;
  virtual void on_batch(std::size_t /*epoch*/, std::span<const FrameRef> /*batch*/) {}
  // `slot` is the frame index read (may be negative or empty -> zeros).
  virtual void on_cache_read(std::size_t /*epoch*/, const std::string& /*video*/, std::size_t /*frame*/,
                             std::int64_t /*slot*/, std::span<const float> /*value*/) {}
  virtual void on_cache_write(std::size_t /*epoch*/, const std::string& /*video*/, std::size_t /*frame*/,
                              std::span<const float> /*value*/) {}
  virtual void on_history(std::size_t /*epoch*/, const std::string& /*video*/, std::size_t /*frame*/,
                          const HistoryState& /*history*/) {}
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
  std::size_t cache_writes = 0;
};

// Impression caches are double-buffered: every read during epoch k sees the
// value written for that frame in epoch k-1 (zeros in epoch 1), and epoch k's
// writes become visible when the epoch ends.
struct TrainState {
  ModelParams<float> params;
  AdamState<float> adam;
  std::map<std::string, ImpressionCache> caches;
  std::size_t epoch = 0;
  std::vector<EpochStats> log;

  static TrainState create(const ModelConfig& model, const TrainConfig& train) {
    TrainState s;
    s.params = ModelParams<float>::init(train.apply_to(model), train.seed);
    const auto tensors = s.params.tensors();
    s.adam = make_adam_state<float>(tensors, train.learning_rate, train.beta1, train.beta2, train.epsilon);
    return s;
  }

  const ImpressionCache& cache_for(const std::string& video) {
    return caches.try_emplace(video, params.config.dim).first->second;
  }
};

inline EpochStats train_epoch(TrainState& state, std::span<const ProcedureRecord* const> videos,
                              const TrainConfig& config, TrainAudit* audit = nullptr) {
  if (videos.empty()) throw InputError("train_epoch: no training videos");
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = state.params.config;
  const std::size_t epoch = ++state.epoch;
  const auto order = epoch_order(videos, config.seed, epoch);
  auto tensors = state.params.tensors();

  std::map<std::string, ImpressionCache> next;
  for (const auto* v : videos) next.try_emplace(v->video_id, cfg.dim);

  EpochStats stats;
  stats.epoch = epoch;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const auto batch = std::span<const FrameRef>(order).subspan(begin, std::min(config.batch_size, order.size() - begin));
    if (audit) audit->on_batch(epoch, batch);
    state.params.zero_grad();

    std::vector<Tensor<float>> logits;
    std::vector<Tensor<float>> cls;
    std::vector<int> labels;
    for (const auto& ref : batch) {
      const auto& rec = *videos[ref.video];
      const auto ex = make_example(rec, ref.frame, state.cache_for(rec.video_id), cfg);
      if (audit) {
        audit->on_history(epoch, rec.video_id, ref.frame, ex.history);
        for (std::size_t k = 0; k < cfg.intervals.size(); ++k) {
          audit->on_cache_read(epoch, rec.video_id, ref.frame,
                               static_cast<std::int64_t>(ref.frame) - static_cast<std::int64_t>(cfg.intervals[k]),
                               ex.impressions[k]);
        }
      }
      auto out = forward(state.params, std::span<const FrameView>(ex.window), ex.history,
                         std::span<const std::vector<float>>(ex.impressions));
      logits.push_back(out.logits);
      cls.push_back(out.cls);
      labels.push_back(ex.label);
    }
    const auto loss = cross_entropy(concat_rows(logits), std::span<const int>(labels));
    if (!std::isfinite(loss.item())) {
      const auto& first = *videos[batch.front().video];
      throw NumericError("train_epoch: non-finite loss " + std::to_string(loss.item()) + " in epoch " +
                         std::to_string(epoch) + ", batch starting at frame " + std::to_string(batch.front().frame) +
                         " of '" + first.video_id + "'");
    }
    backward(loss);
    adam_step<float>(tensors, state.adam);
    loss_sum += loss.item() * static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& rec = *videos[batch[i].video];
      next.at(rec.video_id).store(static_cast<std::int64_t>(batch[i].frame), cls[i].data());
      ++stats.cache_writes;
      if (audit) audit->on_cache_write(epoch, rec.video_id, batch[i].frame, cls[i].data());
    }
  }
  for (auto& [id, cache] : next) state.caches.insert_or_assign(id, std::move(cache));
  stats.loss = loss_sum / static_cast<double>(order.size());
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  state.log.push_back(stats);
  return stats;
}

// Mean per-video frame accuracy of online replay.
inline double replay_accuracy(const ModelParams<float>& params, std::span<const ProcedureRecord* const> videos) {
  std::vector<VideoPredictions> preds;
  for (const auto* v : videos) preds.push_back({v->video_id, v->labels, replay_video(params, *v).predictions});
  return video_accuracy(preds).mean;
}

struct FitResult {
  ModelParams<float> params;  // best validation epoch
  std::vector<EpochStats> log;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
};

// Trains for config.epochs epochs and keeps the parameters of the epoch with
// the highest validation video accuracy (earliest on ties). Without
// validation videos the last epoch wins.
inline FitResult fit(const Dataset& data, const ModelConfig& model, const TrainConfig& config,
                     const std::function<void(const EpochStats&)>& on_epoch = {}, TrainAudit* audit = nullptr) {
  config.validate();
  auto state = TrainState::create(model, config);
  const auto train = data.split(Split::train);
  const auto val = data.split(Split::val);
  FitResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    auto stats = train_epoch(state, train, config, audit);
    const auto t0 = std::chrono::steady_clock::now();
    stats.val_accuracy = val.empty() ? 0.0 : replay_accuracy(state.params, val);
    stats.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.back() = stats;
    if (val.empty() || stats.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = stats.val_accuracy;
      result.best_epoch = stats.epoch;
      result.params = state.params.clone();
    }
    if (on_epoch) on_epoch(stats);
  }
  result.log = state.log;
  return result;
}

inline std::string encode_train_log(std::span<const EpochStats> log) {
  std::ostringstream os;
  os << "epoch,loss,val_accuracy,seconds\n";
  os.precision(9);
  for (const auto& s : log) os << s.epoch << ',' << s.loss << ',' << s.val_accuracy << ',' << s.seconds << '\n';
  return os.str();
}

}  // namespace mos
