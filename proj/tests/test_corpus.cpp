#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "specknet/corpus.hpp"

using namespace specknet;

TEST(SynthDigits, DeterministicQuantizedAndLabeled) {
  LabeledImageSet a = synth_digits(30, 4);
  LabeledImageSet b = synth_digits(30, 4);
  EXPECT_EQ(a.images.values(), b.images.values());
  EXPECT_EQ(a.source, CorpusSource::digits);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a.labels[i], i % 10);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const double lv = a.images[i] * 255.0;
    ASSERT_NEAR(lv, std::round(lv), 1e-9);  // on the 8-bit grid
  }
  LabeledImageSet c = synth_digits(30, 5);
  EXPECT_NE(a.images.values(), c.images.values());
}

TEST(SynthDigits, InkSitsInsideTheFrame) {
  LabeledImageSet set = synth_digits(50, 9);
  for (std::size_t i = 0; i < 50; ++i) {
    double peak = 0.0, border = 0.0;
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x) {
        const double v = set.images(i, y, x);
        peak = std::max(peak, v);
        if (x == 0 || y == 0 || x == 27 || y == 27)
          border = std::max(border, v);
      }
    EXPECT_GT(peak, 0.5) << "image " << i;
    EXPECT_LT(border, 0.25) << "image " << i;
  }
}

TEST(SynthDigits, NearestPrototypeSeparatesClasses) {
  LabeledImageSet train = synth_digits(200, 11);
  LabeledImageSet probe = synth_digits(100, 12);
  Tensor<double> proto({10, 784});
  std::vector<double> count(10, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::size_t c = train.labels[i];
    count[c] += 1.0;
    for (std::size_t q = 0; q < 784; ++q)
      proto(c, q) += train.images[i * 784 + q];
  }
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t q = 0; q < 784; ++q) proto(c, q) /= count[c];

  std::size_t hits = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      double d = 0.0;
      for (std::size_t q = 0; q < 784; ++q) {
        const double e = probe.images[i * 784 + q] - proto(c, q);
        d += e * e;
      }
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    hits += arg == probe.labels[i];
  }
  EXPECT_GE(double(hits) / double(probe.size()), 0.95);
}

TEST(SynthFashion, ClassSilhouettesAreDistinct) {
  LabeledImageSet set = synth_fashion(10, 6);  // one instance per class
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = a + 1; b < 10; ++b) {
      double diff = 0.0;
      for (std::size_t q = 0; q < 784; ++q)
        diff += std::abs(set.images[a * 784 + q] - set.images[b * 784 + q]);
      EXPECT_GT(diff / 784.0, 0.02) << "classes " << a << " vs " << b;
    }
}

TEST(SynthFashion, FillFractionIsSilhouetteLike) {
  LabeledImageSet set = synth_fashion(40, 7);
  for (std::size_t i = 0; i < 40; ++i) {
    double ink = 0.0;
    for (std::size_t q = 0; q < 784; ++q)
      ink += set.images[i * 784 + q] > 0.3 ? 1.0 : 0.0;
    const double frac = ink / 784.0;
    EXPECT_GT(frac, 0.04) << "image " << i;
    EXPECT_LT(frac, 0.60) << "image " << i;
  }
}

TEST(SynthCorpus, DispatchesAllSources) {
  EXPECT_EQ(synth_corpus(CorpusSource::digits, 5, 1).source,
            CorpusSource::digits);
  EXPECT_EQ(synth_corpus(CorpusSource::fashion, 5, 1).source,
            CorpusSource::fashion);
  LabeledImageSet r = synth_corpus(CorpusSource::random, 5, 1);
  EXPECT_EQ(r.source, CorpusSource::random);
  for (auto l : r.labels) EXPECT_EQ(l, kSentinelLabel);
}

TEST(SynthCorpus, IdxRoundTripIsExact) {
  LabeledImageSet set = synth_digits(12, 8);
  write_corpus_idx("corpus_rt.idx3", "corpus_rt.idx1", set);
  LabeledImageSet back =
      load_idx("corpus_rt.idx3", "corpus_rt.idx1", CorpusSource::digits);
  EXPECT_EQ(back.images.values(), set.images.values());
  EXPECT_EQ(back.labels, set.labels);
  std::remove("corpus_rt.idx3");
  std::remove("corpus_rt.idx1");
}
