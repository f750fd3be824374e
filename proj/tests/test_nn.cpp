#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace mos;
using mos::testing::random_tensor;
using mos::testing::weighted_sum;

namespace {

MhsaBlockParams<double> random_block(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  auto p = MhsaBlockParams<double>::init(d, rng);
  // Larger weights than the 0.02 init so the check exercises real curvature.
  std::uint64_t s = seed * 100;
  p.visit("b", [&](const std::string&, Tensor<double>& t) {
    auto v = t.mutable_data();
    const auto r = random_tensor(t.shape(), s++, false, 0.5);
    std::copy(r.data().begin(), r.data().end(), v.begin());
  });
  return p;
}

}  // namespace

TEST(Linear, InitShapesAndValues) {
  Rng rng(1);
  const auto p = LinearParams<float>::init(5, 3, rng);
  EXPECT_EQ(p.weight.shape(), (Shape{5, 3}));
  EXPECT_EQ(p.bias.shape(), (Shape{3}));
  for (float b : p.bias.data()) EXPECT_EQ(b, 0.0f);
  for (float w : p.weight.data()) EXPECT_LE(std::abs(w), 0.04f);
  const auto ln = LayerNormParams<float>::init(4);
  for (float g : ln.gain.data()) EXPECT_EQ(g, 1.0f);
  for (float b : ln.bias.data()) EXPECT_EQ(b, 0.0f);
}

TEST(MhsaBlock, SingleTokenKeepsShape) {
  Rng rng(2);
  const auto p = MhsaBlockParams<double>::init(4, rng);
  const auto x = random_tensor({1, 4}, 3, false);
  EXPECT_EQ(mhsa_block(x, p, 2).shape(), (Shape{1, 4}));
}

TEST(MhsaBlock, ZeroOutputProjectionsAreIdentity) {
  Rng rng(4);
  auto p = MhsaBlockParams<double>::init(6, rng);
  for (auto* t : {&p.out.weight, &p.out.bias, &p.fc2.weight, &p.fc2.bias}) {
    for (auto& v : t->mutable_data()) v = 0.0;
  }
  const auto x = random_tensor({5, 6}, 5, false);
  const auto y = mhsa_block(x, p, 3);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(MhsaBlock, AttentionRowsSumToOne) {
  Rng rng(6);
  const auto p = MhsaBlockParams<float>::init(4, rng);
  const auto x = random_tensor<float>({3, 4}, 7, false);
  AttentionProbe<float> probe;
  mhsa_block(x, p, 2, &probe);
  ASSERT_EQ(probe.per_head.size(), 2u);
  for (const auto& head : probe.per_head) {
    for (std::size_t i = 0; i < 3; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < 3; ++j) row += head[i * 3 + j];
      EXPECT_NEAR(row, 1.0, 1e-5);
    }
  }
}

TEST(MhsaBlock, IndivisibleHeadsIsConfigError) {
  Rng rng(8);
  const auto p = MhsaBlockParams<float>::init(6, rng);
  const auto x = random_tensor<float>({2, 6}, 9, false);
  EXPECT_THROW(mhsa_block(x, p, 4), ConfigError);
}

TEST(MhsaBlock, GradCheck) {
  auto p = random_block(4, 10);
  auto x = random_tensor({3, 4}, 11);
  std::vector<Tensor<double>> inputs{x};
  p.visit("b", [&](const std::string&, Tensor<double>& t) { inputs.push_back(t); });
  auto loss = [&] { return weighted_sum(mhsa_block(x, p, 2), 12); };
  EXPECT_LT(grad_check(loss, inputs), 1e-4);
}

TEST(Sinusoidal, PositionZeroAlternates) {
  const auto e = sinusoidal_encoding<double>(0, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e.data()[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Sinusoidal, FirstPairClosedForm) {
  const auto a = sinusoidal_encoding<double>(0, 6);
  const auto b = sinusoidal_encoding<double>(1, 6);
  EXPECT_NEAR(b.data()[0] - a.data()[0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(b.data()[1] - a.data()[1], std::cos(1.0) - 1.0, 1e-15);
  // Pair i uses frequency 10000^(-2i/d).
  EXPECT_NEAR(b.data()[2], std::sin(std::pow(10000.0, -2.0 / 6.0)), 1e-15);
}

TEST(Sinusoidal, RangeAndDeterminism) {
  for (std::size_t pos : {0u, 1u, 7u, 300u, 100000u}) {
    const auto e = sinusoidal_encoding<float>(pos, 16);
    const auto f = sinusoidal_encoding<float>(pos, 16);
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_LE(std::abs(e.data()[i]), 1.0f);
      EXPECT_EQ(e.data()[i], f.data()[i]);
    }
  }
}

TEST(Sinusoidal, OddWidthIsConfigError) {
  EXPECT_THROW(sinusoidal_encoding<float>(3, 7), ConfigError);
  EXPECT_THROW(sinusoidal_encoding<float>(3, 0), ConfigError);
}
