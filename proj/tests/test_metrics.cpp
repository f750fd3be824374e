#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "metric_oracle.hpp"
#include "test_util.hpp"

using namespace mos;


using namespace mos::testing;

TEST(Confusion, HandCase) {
  const std::vector<PhaseId> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto m = confusion_matrix(gt, pred, 2);
  EXPECT_EQ(m(0, 0), 1u);
  EXPECT_EQ(m(0, 1), 1u);
  EXPECT_EQ(m(1, 0), 0u);
  EXPECT_EQ(m(1, 1), 2u);
  EXPECT_EQ(m.total(), 4u);
}

TEST(Confusion, PerfectIsDiagonalAndErrors) {
  const std::vector<PhaseId> gt{0, 2, 2, 1, 0};
  const auto m = confusion_matrix(gt, gt, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) {
        EXPECT_EQ(m(i, j), 0u);
      }
  EXPECT_EQ(m.total(), gt.size());
  EXPECT_THROW(confusion_matrix(gt, std::vector<PhaseId>{0}, 3), InputError);
  EXPECT_THROW(confusion_matrix(std::vector<PhaseId>{3}, std::vector<PhaseId>{0}, 3), InputError);
}

TEST(VideoAccuracy, ClosedForms) {
  std::vector<VideoPredictions> one{{"a", {0, 1, 2}, {0, 1, 2}}};
  auto s = video_accuracy(one);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 0.0);
  std::vector<VideoPredictions> two{{"a", {0, 1}, {0, 0}}, {"b", {1, 1}, {1, 1}}};
  s = video_accuracy(two);
  EXPECT_DOUBLE_EQ(s.mean, 0.75);
  EXPECT_DOUBLE_EQ(s.std, 0.25);
}

TEST(VideoAccuracy, EmptyVideoSkipped) {
  std::vector<VideoPredictions> v{{"empty", {}, {}}, {"b", {1, 1}, {1, 0}}};
  const auto s = video_accuracy(v);
  EXPECT_EQ(s.videos, 1u);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  std::vector<VideoPredictions> none{{"empty", {}, {}}};
  EXPECT_THROW(video_accuracy(none), InputError);
}

TEST(VideoAccuracy, RandomMatchesRecount) {
  Rng rng(1);
  std::vector<VideoPredictions> vids;
  for (int v = 0; v < 5; ++v) {
    VideoPredictions p{"v", {}, {}};
    const auto n = 1 + rng.uniform_int(30);
    for (std::uint64_t i = 0; i < n; ++i) {
      p.ground_truth.push_back(static_cast<PhaseId>(rng.uniform_int(4)));
      p.predicted.push_back(static_cast<PhaseId>(rng.uniform_int(4)));
    }
    vids.push_back(p);
  }
  std::vector<double> acc;
  for (const auto& v : vids) {
    double c = 0;
    for (std::size_t i = 0; i < v.ground_truth.size(); ++i) c += v.ground_truth[i] == v.predicted[i];
    acc.push_back(c / static_cast<double>(v.ground_truth.size()));
  }
  double mean = 0, var = 0;
  for (double a : acc) mean += a / 5;
  for (double a : acc) var += (a - mean) * (a - mean) / 5;
  const auto s = video_accuracy(vids);
  EXPECT_NEAR(s.mean, mean, 1e-15);
  EXPECT_NEAR(s.std, std::sqrt(var), 1e-15);
}

TEST(Concat, HandCase) {
  std::vector<VideoPredictions> v{{"a", {0, 0, 1, 1}, {0, 1, 1, 1}}};
  const auto r = phase_metrics_concat(v, 2);
  ASSERT_EQ(r.per_phase.size(), 2u);
  EXPECT_DOUBLE_EQ(r.per_phase[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_phase[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_phase[0].jaccard, 0.5);
  EXPECT_DOUBLE_EQ(r.per_phase[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_phase[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_phase[1].jaccard, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.precision, 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.jaccard_or_f1, 7.0 / 12.0);
}

TEST(Concat, PerfectAndZeroDenominators) {
  std::vector<VideoPredictions> v{{"a", {0, 1, 1}, {0, 1, 1}}, {"b", {2, 2}, {2, 2}}};
  const auto r = phase_metrics_concat(v, 5);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.jaccard_or_f1, 1.0);
  EXPECT_EQ(r.per_phase.size(), 3u) << "phases 3 and 4 are absent and skipped";
  // Phase 2 only predicted, never true: precision 0 and still counted.
  std::vector<VideoPredictions> w{{"a", {0, 0}, {0, 2}}};
  const auto q = phase_metrics_concat(w, 3);
  ASSERT_EQ(q.per_phase.size(), 2u);
  EXPECT_EQ(q.per_phase[1].phase, 2);
  EXPECT_EQ(q.per_phase[1].precision, 0.0);
  EXPECT_EQ(q.per_phase[1].recall, 0.0);
}

TEST(PerVideo, SinglePhaseVideoScoresOne) {
  std::vector<VideoPredictions> v{{"a", {0, 0, 0}, {0, 0, 0}}};
  const auto r = phase_metrics_per_video(v, 7);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.jaccard_or_f1, 1.0);
  EXPECT_EQ(r.score_name(), "f1");
}

TEST(Protocols, RandomInstancesMatchBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 1 + rng.uniform_int(5);
    const auto vids = random_instance(rng, c);
    const auto concat = phase_metrics_concat(vids, c), want_c = oracle_concat(vids, c);
    EXPECT_EQ(concat.precision, want_c.precision);
    EXPECT_EQ(concat.recall, want_c.recall);
    EXPECT_EQ(concat.jaccard_or_f1, want_c.jaccard_or_f1);
    const auto per = phase_metrics_per_video(vids, c), want_p = oracle_per_video(vids, c);
    EXPECT_EQ(per.precision, want_p.precision);
    EXPECT_EQ(per.recall, want_p.recall);
    EXPECT_EQ(per.jaccard_or_f1, want_p.jaccard_or_f1);
  }
}

TEST(Protocols, Invariants) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.uniform_int(4);
    auto vids = random_instance(rng, c);
    for (auto proto : {Protocol::concat, Protocol::per_video}) {
      const auto r = evaluate(vids, c, proto);
      for (double v : {r.precision, r.recall, r.jaccard_or_f1, r.video_accuracy_mean}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      for (const auto& s : r.per_phase) {
        EXPECT_LE(s.jaccard, std::min(s.precision, s.recall) + 1e-15);
        EXPECT_GE(s.f1 + 1e-15, s.jaccard);
      }
    }
    // Concat is invariant to video order; per-video to frame order.
    auto reordered = vids;
    std::reverse(reordered.begin(), reordered.end());
    EXPECT_DOUBLE_EQ(phase_metrics_concat(reordered, c).jaccard_or_f1, phase_metrics_concat(vids, c).jaccard_or_f1);
    auto shuffled = vids;
    for (auto& v : shuffled) {
      std::vector<std::size_t> idx(v.ground_truth.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx);
      VideoPredictions s{v.video_id, {}, {}};
      for (auto i : idx) s.ground_truth.push_back(v.ground_truth[i]), s.predicted.push_back(v.predicted[i]);
      v = s;
    }
    EXPECT_DOUBLE_EQ(phase_metrics_per_video(shuffled, c).jaccard_or_f1,
                     phase_metrics_per_video(vids, c).jaccard_or_f1);
    // A single video: both protocols report identical precision/recall and
    // per-phase tables.
    std::vector<VideoPredictions> single{vids[0]};
    const auto a = phase_metrics_concat(single, c), b = phase_metrics_per_video(single, c);
    EXPECT_DOUBLE_EQ(a.precision, b.precision);
    EXPECT_DOUBLE_EQ(a.recall, b.recall);
    ASSERT_EQ(a.per_phase.size(), b.per_phase.size());
    for (std::size_t i = 0; i < a.per_phase.size(); ++i) {
      EXPECT_DOUBLE_EQ(a.per_phase[i].jaccard, b.per_phase[i].jaccard);
      EXPECT_DOUBLE_EQ(a.per_phase[i].f1, b.per_phase[i].f1);
    }
  }
}

TEST(Report, JsonAndTable) {
  std::vector<VideoPredictions> v{{"a", {0, 0, 1, 1}, {0, 1, 1, 1}}};
  const auto j = report_to_json(phase_metrics_concat(v, 2));
  EXPECT_EQ(j["protocol"], "concat");
  EXPECT_DOUBLE_EQ(j["jaccard"].get<double>(), 7.0 / 12.0);
  EXPECT_EQ(j["per_phase"].size(), 2u);
  const auto jp = report_to_json(phase_metrics_per_video(v, 2));
  EXPECT_TRUE(jp.contains("f1"));
  EXPECT_NE(report_table(phase_metrics_concat(v, 2)).find("jaccard"), std::string::npos);
  EXPECT_EQ(parse_protocol("per_video"), Protocol::per_video);
  EXPECT_THROW(parse_protocol("macro"), ConfigError);
}
