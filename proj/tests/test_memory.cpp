#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace mos;

TEST(StepFilter, FloorDivision) {
  EXPECT_EQ(step_filter(95, 30), 3u);
  EXPECT_EQ(step_filter(0, 30), 0u);
  EXPECT_EQ(step_filter(30, 30), 1u);
  EXPECT_EQ(step_filter(29, 30), 0u);
  EXPECT_THROW(step_filter(5, 0), ConfigError);
}

TEST(History, BelowOneStepStaysMasked) {
  HistoryState h(5, 30);
  for (int i = 0; i < 29; ++i) h = observe_phase(h, 2);
  EXPECT_EQ(h.entry(2).frame_count, 29u);
  EXPECT_EQ(h.entry(2).step_count, 0u);
  EXPECT_FALSE(h.entry(2).mask);
  h = observe_phase(h, 2);
  EXPECT_EQ(h.entry(2).step_count, 1u);
  EXPECT_TRUE(h.entry(2).mask);
}

TEST(History, BriefSegmentIsSuppressed) {
  HistoryState h(5, 30);
  for (int i = 0; i < 29; ++i) h.observe(2);
  h.observe(3);
  EXPECT_FALSE(h.entry(3).mask);
  EXPECT_EQ(h.entry(3).frame_count, 1u);
}

TEST(History, CountsAccumulateAcrossSegments) {
  HistoryState h(3, 10);
  for (int i = 0; i < 6; ++i) h.observe(1);
  for (int i = 0; i < 3; ++i) h.observe(0);
  for (int i = 0; i < 4; ++i) h.observe(1);
  EXPECT_EQ(h.entry(1).frame_count, 10u);
  EXPECT_TRUE(h.entry(1).mask);
  EXPECT_EQ(h.total_frames(), 13u);
}

TEST(History, OutOfRangePhaseIsInputError) {
  HistoryState h(3, 30);
  EXPECT_THROW(h.observe(3), InputError);
  EXPECT_THROW(h.observe(-1), InputError);
  EXPECT_THROW(intervene_set(h, 5, 10, true), InputError);
}

TEST(History, RandomWalkInvariants) {
  Rng rng(3);
  for (std::size_t step : {1u, 7u, 30u}) {
    HistoryState h(6, step);
    std::vector<bool> was_on(6, false);
    for (std::size_t n = 1; n <= 500; ++n) {
      h.observe(static_cast<PhaseId>(rng.uniform_int(6)));
      std::size_t total = 0;
      for (const auto& e : h.entries()) {
        const auto p = static_cast<std::size_t>(e.phase_id);
        total += e.frame_count;
        EXPECT_EQ(e.step_count, e.frame_count / step);
        EXPECT_EQ(e.mask, e.step_count >= 1);
        if (was_on[p]) {
          EXPECT_TRUE(e.mask);
        }
        was_on[p] = e.mask;
      }
      EXPECT_EQ(total, n);
    }
  }
}

TEST(EntryMatrix, EmptyState) {
  const auto m = entry_matrix(HistoryState(3, 30));
  ASSERT_EQ(m.rows, 3u);
  ASSERT_EQ(m.cols, 5u);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(m(r, c), r == c ? 1.0 : 0.0);
    EXPECT_EQ(m(r, 3), 0.0);
    EXPECT_EQ(m(r, 4), 0.0);
  }
}

TEST(EntryMatrix, ObservedPhaseRow) {
  HistoryState h(3, 30);
  for (int i = 0; i < 95; ++i) h.observe(0);
  const auto m = entry_matrix(h);
  const std::vector<double> row0{1, 0, 0, 3, 1};
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(m(0, c), row0[c]);
  EXPECT_EQ(m.rows, 3u);
}

TEST(Intervene, EraseClearsMaskOnly) {
  HistoryState h(6, 30);
  for (int i = 0; i < 40; ++i) h.observe(5);
  for (int i = 0; i < 70; ++i) h.observe(1);
  const auto e = intervene_erase(h, {5});
  EXPECT_FALSE(e.entry(5).mask);
  EXPECT_EQ(e.entry(5).frame_count, 40u);
  EXPECT_EQ(e.entry(5).step_count, 1u);
  for (PhaseId p = 0; p < 5; ++p) EXPECT_EQ(e.entry(p), h.entry(p));
  EXPECT_TRUE(h.entry(5).mask) << "erase must not mutate its input";
}

TEST(Intervene, EraseIsIdempotentAndEmptyIsIdentity) {
  HistoryState h(4, 3);
  for (int i = 0; i < 7; ++i) h.observe(2);
  EXPECT_EQ(intervene_erase(h, {}), h);
  const auto once = intervene_erase(h, {0, 2});
  EXPECT_EQ(intervene_erase(once, {0, 2}), once);
  EXPECT_EQ(intervene_erase(h, {0}), h) << "erasing an absent phase changes nothing";
  // Commutes with entry_matrix except in the mask column.
  const auto a = entry_matrix(h), b = entry_matrix(once);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(a(r, c), b(r, c));
  EXPECT_EQ(b(2, 5), 0.0);
}

TEST(Intervene, SetRecomputesStep) {
  const auto h = intervene_set(HistoryState(4, 30), 2, 60, true);
  EXPECT_EQ(h.entry(2).frame_count, 60u);
  EXPECT_EQ(h.entry(2).step_count, 2u);
  EXPECT_TRUE(h.entry(2).mask);
  const auto m = entry_matrix(h);
  EXPECT_EQ(m(2, 2), 1.0);
  EXPECT_EQ(m(2, 4), 2.0);
  EXPECT_EQ(m(2, 5), 1.0);
  // An explicit set may break the mask/step coupling.
  const auto odd = intervene_set(h, 1, 5, true);
  EXPECT_EQ(odd.entry(1).step_count, 0u);
  EXPECT_TRUE(odd.entry(1).mask);
}

TEST(Impressions, StoreRetrieveOverwrite) {
  ImpressionCache cache(3);
  const std::vector<float> a{1, 2, 3}, b{4, 5, 6};
  impressions_store(cache, 0, a);
  ASSERT_NE(cache.find(0), nullptr);
  EXPECT_EQ(*cache.find(0), a);
  EXPECT_EQ(cache.find(1), nullptr);
  impressions_store(cache, 0, b);
  EXPECT_EQ(*cache.find(0), b);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_THROW(impressions_store(cache, 1, std::vector<float>{1, 2}), InputError);
}

TEST(Impressions, ColdStartIsZeros) {
  ImpressionCache cache(4);
  impressions_store(cache, 3, std::vector<float>{1, 1, 1, 1});
  const auto out = impressions_retrieve(cache, 10, kDefaultImpressionIntervals);
  ASSERT_EQ(out.size(), 8u);
  for (const auto& v : out) EXPECT_EQ(v, std::vector<float>(4, 0.0f));
}

TEST(Impressions, OffsetArithmetic) {
  ImpressionCache cache(2);
  for (std::int64_t f = 0; f < 600; ++f) {
    impressions_store(cache, f, std::vector<float>{static_cast<float>(f), 1.0f});
  }
  const auto at100 = impressions_retrieve(cache, 100, kDefaultImpressionIntervals);
  EXPECT_EQ(at100[0][0], 36.0f);
  for (std::size_t k = 1; k < 8; ++k) EXPECT_EQ(at100[k][1], 0.0f);
  const auto full = impressions_retrieve(cache, 599, kDefaultImpressionIntervals);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(full[k][0], static_cast<float>(599 - kDefaultImpressionIntervals[k]));
    EXPECT_EQ(full[k][1], 1.0f);
  }
}

TEST(Impressions, OutputLengthMatchesIntervals) {
  ImpressionCache cache(2);
  for (std::size_t n = 1; n < 6; ++n) {
    std::vector<std::size_t> iv;
    for (std::size_t i = 1; i <= n; ++i) iv.push_back(i * 3);
    EXPECT_EQ(impressions_retrieve(cache, 7, iv).size(), n);
  }
}
