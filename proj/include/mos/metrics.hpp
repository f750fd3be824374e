#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "mos/errors.hpp"
#include "mos/json_util.hpp"
#include "mos/memory.hpp"

namespace mos {

// Ground truth and predictions of one video.
struct VideoPredictions {
  std::string video_id;
  std::vector<PhaseId> ground_truth;
  std::vector<PhaseId> predicted;
};

// counts[gt * C + pred]
struct ConfusionMatrix {
  std::size_t num_phases = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts[gt * num_phases + pred]; }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const PhaseId> gt, std::span<const PhaseId> pred,
                                        std::size_t num_phases) {
  if (gt.size() != pred.size()) {
    throw InputError("confusion_matrix: " + std::to_string(gt.size()) + " labels vs " + std::to_string(pred.size()) +
                     " predictions");
  }
  ConfusionMatrix m{num_phases, std::vector<std::uint64_t>(num_phases * num_phases, 0)};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (PhaseId p : {gt[i], pred[i]}) {
      if (p < 0 || static_cast<std::size_t>(p) >= num_phases) {
        throw InputError("confusion_matrix: phase " + std::to_string(p) + " outside [0, " +
                         std::to_string(num_phases) + ")");
      }
    }
    ++m.counts[static_cast<std::size_t>(gt[i]) * num_phases + static_cast<std::size_t>(pred[i])];
  }
  return m;
}

struct PhaseScores {
  PhaseId phase = 0;
  double precision = 0.0;
  double recall = 0.0;
  double jaccard = 0.0;
  double f1 = 0.0;
};

// Per-phase scores for every phase that occurs in gt or pred. A zero
// denominator scores 0; phases absent from both are left out.
inline std::vector<PhaseScores> phase_scores(const ConfusionMatrix& m) {
  std::vector<PhaseScores> out;
  const std::size_t c = m.num_phases;
  for (std::size_t p = 0; p < c; ++p) {
    std::uint64_t tp = m(p, p), fp = 0, fn = 0;
    for (std::size_t q = 0; q < c; ++q) {
      if (q == p) continue;
      fp += m(q, p);
      fn += m(p, q);
    }
    if (tp + fp + fn == 0) continue;
    auto ratio = [](std::uint64_t num, std::uint64_t den) {
      return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    PhaseScores s;
    s.phase = static_cast<PhaseId>(p);
    s.precision = ratio(tp, tp + fp);
    s.recall = ratio(tp, tp + fn);
    s.jaccard = ratio(tp, tp + fp + fn);
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    out.push_back(s);
  }
  return out;
}

enum class Protocol { concat, per_video };

inline std::string to_string(Protocol p) { return p == Protocol::concat ? "concat" : "per_video"; }

inline Protocol parse_protocol(const std::string& s) {
  if (s == "concat") return Protocol::concat;
  if (s == "per_video") return Protocol::per_video;
  throw ConfigError("unknown protocol '" + s + "' (expected concat or per_video)");
}

struct EvalReport {
  Protocol protocol = Protocol::concat;
  double video_accuracy_mean = 0.0;
  double video_accuracy_std = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  // Jaccard under the concat protocol, F1 under per_video.
  double jaccard_or_f1 = 0.0;
  std::vector<PhaseScores> per_phase;
  std::size_t videos = 0;
  std::size_t frames = 0;

  std::string score_name() const { return protocol == Protocol::concat ? "jaccard" : "f1"; }
};

struct AccuracySummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t videos = 0;
};

// Frame accuracy per video, then mean and population std across videos.
// Empty videos are skipped with a warning.
inline AccuracySummary video_accuracy(std::span<const VideoPredictions> videos) {
  std::vector<double> acc;
  for (const auto& v : videos) {
    if (v.ground_truth.size() != v.predicted.size()) {
      throw InputError("video_accuracy: " + v.video_id + " has " + std::to_string(v.ground_truth.size()) +
                       " labels but " + std::to_string(v.predicted.size()) + " predictions");
    }
    if (v.ground_truth.empty()) {
      std::cerr << "warning: video '" << v.video_id << "' has no frames; skipped\n";
      continue;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < v.ground_truth.size(); ++i) correct += v.ground_truth[i] == v.predicted[i];
    acc.push_back(static_cast<double>(correct) / static_cast<double>(v.ground_truth.size()));
  }
  if (acc.empty()) throw InputError("video_accuracy: no non-empty videos");
  AccuracySummary s;
  s.videos = acc.size();
  for (double a : acc) s.mean += a;
  s.mean /= static_cast<double>(acc.size());
  for (double a : acc) s.std += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(acc.size()));
  return s;
}

namespace detail {

inline void fill_accuracy(EvalReport& r, std::span<const VideoPredictions> videos) {
  const auto acc = video_accuracy(videos);
  r.video_accuracy_mean = acc.mean;
  r.video_accuracy_std = acc.std;
  r.videos = videos.size();
  for (const auto& v : videos) r.frames += v.ground_truth.size();
}

}  // namespace detail

// One confusion matrix over all videos concatenated; unweighted mean over
// the phases that occur.
inline EvalReport phase_metrics_concat(std::span<const VideoPredictions> videos, std::size_t num_phases) {
  EvalReport r;
  r.protocol = Protocol::concat;
  detail::fill_accuracy(r, videos);
  ConfusionMatrix total{num_phases, std::vector<std::uint64_t>(num_phases * num_phases, 0)};
  for (const auto& v : videos) {
    const auto m = confusion_matrix(v.ground_truth, v.predicted, num_phases);
    for (std::size_t i = 0; i < total.counts.size(); ++i) total.counts[i] += m.counts[i];
  }
  r.per_phase = phase_scores(total);
  for (const auto& s : r.per_phase) {
    r.precision += s.precision;
    r.recall += s.recall;
    r.jaccard_or_f1 += s.jaccard;
  }
  if (!r.per_phase.empty()) {
    const auto n = static_cast<double>(r.per_phase.size());
    r.precision /= n;
    r.recall /= n;
    r.jaccard_or_f1 /= n;
  }
  return r;
}

// Per-phase scores within each video, averaged over that video's phases,
// then over videos. The per-phase table averages each phase over the videos
// where it occurs.
inline EvalReport phase_metrics_per_video(std::span<const VideoPredictions> videos, std::size_t num_phases) {
  EvalReport r;
  r.protocol = Protocol::per_video;
  detail::fill_accuracy(r, videos);
  std::vector<PhaseScores> sums(num_phases);
  std::vector<std::size_t> seen(num_phases, 0);
  std::size_t scored_videos = 0;
  for (const auto& v : videos) {
    const auto scores = phase_scores(confusion_matrix(v.ground_truth, v.predicted, num_phases));
    if (scores.empty()) continue;
    double p = 0, rc = 0, f = 0;
    for (const auto& s : scores) {
      p += s.precision;
      rc += s.recall;
      f += s.f1;
      auto& acc = sums[static_cast<std::size_t>(s.phase)];
      acc.precision += s.precision;
      acc.recall += s.recall;
      acc.jaccard += s.jaccard;
      acc.f1 += s.f1;
      ++seen[static_cast<std::size_t>(s.phase)];
    }
    const auto n = static_cast<double>(scores.size());
    r.precision += p / n;
    r.recall += rc / n;
    r.jaccard_or_f1 += f / n;
    ++scored_videos;
  }
  if (scored_videos > 0) {
    const auto n = static_cast<double>(scored_videos);
    r.precision /= n;
    r.recall /= n;
    r.jaccard_or_f1 /= n;
  }
  for (std::size_t p = 0; p < num_phases; ++p) {
    if (seen[p] == 0) continue;
    const auto n = static_cast<double>(seen[p]);
    r.per_phase.push_back({static_cast<PhaseId>(p), sums[p].precision / n, sums[p].recall / n, sums[p].jaccard / n,
                           sums[p].f1 / n});
  }
  return r;
}

inline EvalReport evaluate(std::span<const VideoPredictions> videos, std::size_t num_phases, Protocol protocol) {
  return protocol == Protocol::concat ? phase_metrics_concat(videos, num_phases)
                                      : phase_metrics_per_video(videos, num_phases);
}

inline Json report_to_json(const EvalReport& r) {
  Json phases = Json::array();
  for (const auto& s : r.per_phase) {
    phases.push_back({{"phase", s.phase},
                      {"precision", s.precision},
                      {"recall", s.recall},
                      {"jaccard", s.jaccard},
                      {"f1", s.f1}});
  }
  return Json{{"protocol", to_string(r.protocol)},
              {"videos", r.videos},
              {"frames", r.frames},
              {"video_accuracy_mean", r.video_accuracy_mean},
              {"video_accuracy_std", r.video_accuracy_std},
              {"precision", r.precision},
              {"recall", r.recall},
              {r.score_name(), r.jaccard_or_f1},
              {"per_phase", phases}};
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "protocol: " << to_string(r.protocol) << "  videos: " << r.videos << "  frames: " << r.frames << "\n";
  os << "video accuracy: " << 100.0 * r.video_accuracy_mean << " +- " << 100.0 * r.video_accuracy_std << "\n";
  os << "precision " << 100.0 * r.precision << "  recall " << 100.0 * r.recall << "  " << r.score_name() << " "
     << 100.0 * r.jaccard_or_f1 << "\n";
  os << "phase  precision  recall  jaccard      f1\n";
  for (const auto& s : r.per_phase) {
    os << std::setw(5) << s.phase << std::setw(11) << 100.0 * s.precision << std::setw(8) << 100.0 * s.recall
       << std::setw(9) << 100.0 * s.jaccard << std::setw(8) << 100.0 * s.f1 << "\n";
  }
  return os.str();
}

}  // namespace mos
