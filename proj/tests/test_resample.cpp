#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "specknet/resample.hpp"
#include "support/testutil.hpp"

using namespace specknet;
using testutil::rand_tensor;

namespace {

double kernel(double x, double a) {
  if (x == 0.0) return 1.0;
  if (x <= -a || x >= a) return 0.0;
  const double px = std::numbers::pi * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

// Brute-force reference: for each output pixel, sum the full 2D product
// window over every source pixel and normalize by the total weight.
double direct_pixel(const Tensor<double>& img, std::size_t target,
                    std::size_t a, std::size_t orow, std::size_t ocol) {
  const std::size_t src = img.dim(0);
  const double ratio = double(src) / double(target);
  const double fs = std::max(1.0, ratio);
  const double cy = (double(orow) + 0.5) * ratio - 0.5;
  const double cx = (double(ocol) + 0.5) * ratio - 0.5;
  double num = 0.0, den = 0.0;
  for (std::size_t sy = 0; sy < src; ++sy)
    for (std::size_t sx = 0; sx < src; ++sx) {
      const double w = kernel((cy - double(sy)) / fs, double(a)) *
                       kernel((cx - double(sx)) / fs, double(a));
      num += w * img(sy, sx);
      den += w;
    }
  return num / den;
}

}  // namespace

TEST(Lanczos, ConstantImageStaysConstant) {
  Tensor<double> img = Tensor<double>::full({128, 128}, 0.37);
  Tensor<double> out = lanczos_resample(img, 64);
  ASSERT_EQ(out.shape(), (Shape{64, 64}));
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_NEAR(out[i], 0.37, 1e-12);
}

TEST(Lanczos, SameSizeIsIdentity) {
  Rng rng(7);
  Tensor<double> img = rand_tensor<double>(rng, {32, 32}, 0.0, 1.0);
  Tensor<double> out = lanczos_resample(img, 32);
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_NEAR(out[i], img[i], 1e-12);
}

TEST(Lanczos, CenteredImpulseMatchesDirectSummation) {
  Tensor<double> img({128, 128});
  img(64, 64) = 1.0;
  Tensor<double> out = detail::lanczos_resample_raw(img, 64);
  // response support is narrow; sweep a window around the impulse
  for (std::size_t r = 24; r < 40; ++r)
    for (std::size_t c = 24; c < 40; ++c)
      EXPECT_NEAR(out(r, c), direct_pixel(img, 64, 3, r, c), 1e-10)
          << r << "," << c;
}

TEST(Lanczos, RandomImageMatchesDirectSummation) {
  Rng rng(11);
  Tensor<double> img = rand_tensor<double>(rng, {48, 48}, 0.0, 1.0);
  Tensor<double> out = detail::lanczos_resample_raw(img, 20);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      EXPECT_NEAR(out(r, c), direct_pixel(img, 20, 3, r, c), 1e-10);
}

TEST(Lanczos, CommutesWithIntensityScaling) {
  Rng rng(3);
  Tensor<double> img = rand_tensor<double>(rng, {64, 64}, 0.0, 1.0);
  Tensor<double> a = detail::lanczos_resample_raw(img, 40);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] *= 3.7;
  Tensor<double> b = detail::lanczos_resample_raw(img, 40);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(b[i], 3.7 * a[i], 1e-10);
}

TEST(Lanczos, NegativeLobesExistRawAndAreClampedPublicly) {
  Tensor<double> img({8, 8});
  img(4, 4) = 1.0;
  Tensor<double> raw = detail::lanczos_resample_raw(img, 16);
  double lo = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) lo = std::min(lo, raw[i]);
  EXPECT_LT(lo, 0.0);
  Tensor<double> clamped = lanczos_resample(img, 16);
  for (std::size_t i = 0; i < clamped.size(); ++i) {
    EXPECT_GE(clamped[i], 0.0);
    EXPECT_LE(clamped[i], 1.0);
  }
}

TEST(Lanczos, UpsamplePreservesConstant) {
  Tensor<double> img = Tensor<double>::full({16, 16}, 0.5);
  Tensor<double> out = lanczos_resample(img, 24);
  ASSERT_EQ(out.shape(), (Shape{24, 24}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.5, 1e-12);
}

TEST(Lanczos, RejectsBadArguments) {
  Tensor<double> rect({4, 5});
  EXPECT_THROW(lanczos_resample(rect, 4), DimensionError);
  Tensor<double> sq({8, 8});
  EXPECT_THROW(lanczos_resample(sq, 0), UsageError);
  EXPECT_THROW(lanczos_resample(sq, 4, 0), UsageError);
}
