#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "specknet/rng.hpp"
#include "specknet/tensor.hpp"

using namespace specknet;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t(1, 2, 3) = 7.0f;
  EXPECT_FLOAT_EQ(t[23], 7.0f);
  t(0, 1, 0) = 2.5f;
  EXPECT_FLOAT_EQ(t[4], 2.5f);
}

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
}

TEST(Tensor, ReshapePreservesCountOrThrows) {
  Tensor<double> t({4, 6});
  Tensor<double> r = t.reshaped({2, 12});
  EXPECT_EQ(r.shape(), (Shape{2, 12}));
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
}

TEST(Tensor, FillAndCast) {
  Tensor<double> t = Tensor<double>::full({3}, 1.5);
  Tensor<float> f = t.cast<float>();
  EXPECT_FLOAT_EQ(f[2], 1.5f);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(43);
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, UniformRangeAndMean) {
  Rng r(7);
  double s = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
  }
  EXPECT_NEAR(s / 100000.0, 0.5, 0.005);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowIsUnbiasedOverSmallRange) {
  Rng r(13);
  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 100000; ++i) ++counts[r.below(5)];
  for (int c : counts) EXPECT_NEAR(double(c) / 100000.0, 0.2, 0.01);
}

TEST(Rng, MixSeparatesStreams) {
  EXPECT_NE(Rng::mix(1, 0), Rng::mix(1, 1));
  EXPECT_NE(Rng::mix(1, 0), Rng::mix(2, 0));
  EXPECT_EQ(Rng::mix(9, 4), Rng::mix(9, 4));
}

TEST(Rng, ShuffleIsSeededPermutation) {
  std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  Rng a(3), b(3);
  a.shuffle(v1.begin(), v1.end());
  b.shuffle(v2.begin(), v2.end());
  EXPECT_EQ(v1, v2);
  std::vector<int> sorted = v1;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}
