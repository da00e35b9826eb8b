#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "specknet/fiber.hpp"
#include "support/testutil.hpp"

using namespace specknet;
using testutil::rand_tensor;

namespace {

FiberConfig make_config(FiberMode mode, std::size_t n_in,
                        std::size_t camera_side, std::uint64_t seed,
                        double eps = 0.0, bool unitary = false) {
  FiberConfig c;
  c.mode = mode;
  c.n_in = n_in;
  c.camera_side = camera_side;
  c.seed = seed;
  c.drift_epsilon = eps;
  c.unitary = unitary;
  return c;
}

// complex Frobenius inner-product magnitude over split-storage matrices
double corr(const TransmissionMatrix& a, const TransmissionMatrix& b) {
  double re = 0.0, im = 0.0, na = 0.0, nb = 0.0;
  const bool cplx = a.im.size() > 0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const double ar = a.re[i], ai = cplx ? a.im[i] : 0.0;
    const double br = b.re[i], bi = cplx ? b.im[i] : 0.0;
    re += ar * br + ai * bi;
    im += ar * bi - ai * br;
    na += ar * ar + ai * ai;
    nb += br * br + bi * bi;
  }
  return std::sqrt((re * re + im * im) / (na * nb));
}

}  // namespace

TEST(Transmission, GenerationIsDeterministic) {
  const auto cfg = make_config(FiberMode::coherent, 49, 8, 123);
  auto a = generate_transmission(cfg);
  auto b = generate_transmission(cfg);
  EXPECT_EQ(a.re.values(), b.re.values());
  EXPECT_EQ(a.im.values(), b.im.values());
  auto c = generate_transmission(make_config(FiberMode::coherent, 49, 8, 124));
  EXPECT_NE(a.re.values(), c.re.values());
}

TEST(Transmission, UnitarySquareMatrixIsUnitary) {
  // 16 x 16 square case
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 16, 4, 5, 0.0, true));
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t q = 0; q < 16; ++q) {
      double gr = 0.0, gi = 0.0;
      for (std::size_t r = 0; r < 16; ++r) {
        gr += t.re(r, p) * t.re(r, q) + t.im(r, p) * t.im(r, q);
        gi += t.re(r, p) * t.im(r, q) - t.im(r, p) * t.re(r, q);
      }
      EXPECT_NEAR(gr, p == q ? 1.0 : 0.0, 1e-10);
      EXPECT_NEAR(gi, 0.0, 1e-10);
    }
}

TEST(Transmission, UnitaryTallMatrixHasOrthonormalColumns) {
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 24, 8, 6, 0.0, true));
  for (std::size_t p = 0; p < 24; ++p)
    for (std::size_t q = p; q < 24; ++q) {
      double gr = 0.0, gi = 0.0;
      for (std::size_t r = 0; r < 64; ++r) {
        gr += t.re(r, p) * t.re(r, q) + t.im(r, p) * t.im(r, q);
        gi += t.re(r, p) * t.im(r, q) - t.im(r, p) * t.re(r, q);
      }
      EXPECT_NEAR(gr, p == q ? 1.0 : 0.0, 1e-10);
      EXPECT_NEAR(gi, 0.0, 1e-10);
    }
}

TEST(Transmission, UnitaryRequiresCoherentAndEnoughRows) {
  EXPECT_THROW(generate_transmission(
                   make_config(FiberMode::incoherent, 16, 4, 1, 0.0, true)),
               ConfigError);
  EXPECT_THROW(generate_transmission(
                   make_config(FiberMode::coherent, 65, 8, 1, 0.0, true)),
               ConfigError);
}

TEST(Transmission, CoherentColumnEnergyMatchesLaw) {
  // E |t_ij|^2 = 1/n_in, so a column's squared norm concentrates at
  // n_out/n_in = 4096/784
  auto t = generate_transmission(make_config(FiberMode::coherent, 784, 64, 9));
  double total = 0.0;
  for (std::size_t i = 0; i < t.re.size(); ++i)
    total += t.re[i] * t.re[i] + t.im[i] * t.im[i];
  const double mean_col = total / 784.0;
  EXPECT_NEAR(mean_col, 4096.0 / 784.0, 0.05 * 4096.0 / 784.0);
}

TEST(Transmission, IncoherentEntriesNonnegativeHalfNormal) {
  auto t =
      generate_transmission(make_config(FiberMode::incoherent, 784, 64, 10));
  EXPECT_EQ(t.im.size(), 0u);
  double sum = 0.0;
  for (std::size_t i = 0; i < t.re.size(); ++i) {
    ASSERT_GE(t.re[i], 0.0);
    sum += t.re[i];
  }
  const double mean = sum / double(t.re.size());
  const double expected = std::sqrt(2.0 / std::numbers::pi) / 28.0;
  EXPECT_NEAR(mean, expected, 0.01 * expected);
}

TEST(Propagate, BlackInputGivesBlackOutput) {
  for (FiberMode mode : {FiberMode::coherent, FiberMode::incoherent}) {
    auto t = generate_transmission(make_config(mode, 49, 8, 2));
    Tensor<double> out = propagate(t, Tensor<double>({7, 7}));
    ASSERT_EQ(out.shape(), (Shape{8, 8}));
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
  }
}

TEST(Propagate, SingleLitPixelReadsOutOneColumn) {
  const std::size_t j = 13;
  Tensor<double> x({49});
  x[j] = 1.0;
  auto tc = generate_transmission(make_config(FiberMode::coherent, 49, 8, 3));
  Tensor<double> ic = propagate(tc, x);
  for (std::size_t i = 0; i < 64; ++i)
    EXPECT_NEAR(ic[i], tc.re(i, j) * tc.re(i, j) + tc.im(i, j) * tc.im(i, j),
                1e-15);
  auto ti = generate_transmission(make_config(FiberMode::incoherent, 49, 8, 3));
  Tensor<double> ii = propagate(ti, x);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(ii[i], ti.re(i, j), 1e-15);
}

TEST(Propagate, RejectsBadInput) {
  auto t = generate_transmission(make_config(FiberMode::coherent, 49, 8, 2));
  EXPECT_THROW(propagate(t, Tensor<double>({48})), DimensionError);
  Tensor<double> neg({7, 7});
  neg[3] = -0.25;
  EXPECT_THROW(propagate(t, neg), UsageError);
}

TEST(Propagate, UnitaryConservesEnergy) {
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 784, 32, 4, 0.0, true));
  Rng rng(8);
  Tensor<double> x = rand_tensor<double>(rng, {784}, 0.0, 1.0);
  Tensor<double> inten = propagate(t, x);
  double in = 0.0, out = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) in += x[i];
  for (std::size_t i = 0; i < inten.size(); ++i) out += inten[i];
  EXPECT_NEAR(out / in, 1.0, 1e-9);
}

TEST(Propagate, UnitarySpeckleIntensityIsExponential) {
  // full-size medium: 16,384 sensor pixels
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 784, 128, 21, 0.0, true));
  Rng rng(22);
  Tensor<double> x = rand_tensor<double>(rng, {784}, 0.0, 1.0);
  Tensor<double> inten = propagate(t, x);

  double in = 0.0, out = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) in += x[i];
  std::vector<double> u(inten.data(), inten.data() + inten.size());
  for (double v : u) out += v;
  EXPECT_NEAR(out / in, 1.0, 1e-9);

  const double mean = out / double(u.size());
  for (double& v : u) v /= mean;
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  const double n = double(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double f = 1.0 - std::exp(-u[i]);
    ks = std::max(ks, std::max(f - double(i) / n, double(i + 1) / n - f));
  }
  EXPECT_LT(ks, 0.02);
}

TEST(Drift, ZeroEpsilonLeavesEntriesUntouched) {
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 49, 8, 5, 0.0));
  auto d = drift_step(t, 5);
  EXPECT_EQ(d.steps, 5u);
  EXPECT_EQ(d.re.values(), t.re.values());
  EXPECT_EQ(d.im.values(), t.im.values());
}

TEST(Drift, ZeroStepsIsIdentity) {
  auto t = generate_transmission(
      make_config(FiberMode::incoherent, 49, 8, 5, 0.1));
  auto d = drift_step(t, 0);
  EXPECT_EQ(d.steps, 0u);
  EXPECT_EQ(d.re.values(), t.re.values());
}

TEST(Drift, SplitPathEqualsSingleCall) {
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 49, 8, 7, 0.05));
  auto once = drift_step(t, 3);
  auto twice = drift_step(drift_step(t, 1), 2);
  EXPECT_EQ(once.steps, twice.steps);
  EXPECT_EQ(once.re.values(), twice.re.values());
  EXPECT_EQ(once.im.values(), twice.im.values());
}

TEST(Drift, BaseKeepsGenerationNorm) {
  auto t = generate_transmission(
      make_config(FiberMode::coherent, 49, 8, 7, 0.05));
  auto d = drift_step(t, 10);
  const double norm = specknet::detail::frobenius(d.base_re, d.base_im);
  EXPECT_NEAR(norm / t.base_norm, 1.0, 1e-12);
}

TEST(Drift, IncoherentStaysNonnegative) {
  auto t = generate_transmission(
      make_config(FiberMode::incoherent, 49, 8, 7, 0.2));
  auto d = drift_step(t, 20);
  for (std::size_t i = 0; i < d.re.size(); ++i) ASSERT_GE(d.re[i], 0.0);
}

TEST(Drift, CorrelationDecaysOnAverage) {
  const std::size_t n_steps = 8;
  std::vector<double> avg(n_steps + 1, 0.0);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto t0 = generate_transmission(
        make_config(FiberMode::coherent, 49, 8, seed, 0.05));
    auto t = t0;
    avg[0] += corr(t0, t0);
    for (std::size_t k = 1; k <= n_steps; ++k) {
      t = drift_step(t, 1);
      avg[k] += corr(t0, t);
    }
  }
  for (std::size_t k = 0; k < n_steps; ++k)
    EXPECT_LE(avg[k + 1], avg[k] + 1e-12) << "step " << k;
}

TEST(Sense, QuantizesRoundHalfAwayAndClips) {
  Tensor<double> field({2, 3});
  field(0, 0) = 0.0;
  field(0, 1) = 0.5;     // 127.5 -> 128
  field(0, 2) = 1.0;     // 255
  field(1, 0) = 1.7;     // clips to 255
  field(1, 1) = 0.1;     // 25.5 -> 26
  field(1, 2) = 0.002;   // 0.51 -> 1
  CameraImage img = sense(field, 1.0, 12.5);
  EXPECT_EQ(img.timestamp, 12.5);
  EXPECT_EQ(img.pixels(0, 0), 0);
  EXPECT_EQ(img.pixels(0, 1), 128);
  EXPECT_EQ(img.pixels(0, 2), 255);
  EXPECT_EQ(img.pixels(1, 0), 255);
  EXPECT_EQ(img.pixels(1, 1), 26);
  EXPECT_EQ(img.pixels(1, 2), 1);
  Tensor<double> neg({1, 1});
  neg[0] = -1e-9;
  EXPECT_THROW(sense(neg, 1.0), UsageError);
}

TEST(Exposure, PercentileMapsToFullScale) {
  auto t = generate_transmission(make_config(FiberMode::incoherent, 49, 8, 31));
  Rng rng(32);
  Tensor<double> truths = rand_tensor<double>(rng, {120, 49}, 0.0, 1.0);
  const double scale = calibrate_exposure(t, truths);

  // recompute the pooled nearest-rank percentile over the first 100 images
  Tensor<double> first({100, 49});
  std::copy(truths.data(), truths.data() + first.size(), first.data());
  Tensor<double> inten = propagate_batch(t, first);
  std::vector<double> pool(inten.data(), inten.data() + inten.size());
  std::sort(pool.begin(), pool.end());
  const std::size_t rank = std::size_t(std::ceil(0.995 * double(pool.size())));
  const double p = pool[rank - 1];
  EXPECT_DOUBLE_EQ(scale, 1.0 / p);

  Tensor<double> probe({1, 1});
  probe[0] = p;
  EXPECT_EQ(sense(probe, scale).pixels[0], 255);

  // images beyond the first 100 do not participate
  for (std::size_t i = 100 * 49; i < truths.size(); ++i) truths[i] *= 1000.0;
  EXPECT_DOUBLE_EQ(calibrate_exposure(t, truths), scale);
}

TEST(PseudoInverse, RecoversNoiselessUnquantizedImages) {
  auto t = generate_transmission(make_config(FiberMode::incoherent, 784, 64, 41));
  Rng rng(42);
  Tensor<double> truths = rand_tensor<double>(rng, {8, 784}, 0.0, 1.0);
  const double scale = calibrate_exposure(t, truths);

  Tensor<double> speckles({8, 64, 64});
  for (std::size_t i = 0; i < 8; ++i) {
    Tensor<double> one({1, 784});
    std::copy(truths.data() + i * 784, truths.data() + (i + 1) * 784,
              one.data());
    Tensor<double> inten = propagate_batch(t, one);
    inten.reshape_in_place({64, 64});
    for (std::size_t j = 0; j < inten.size(); ++j) inten[j] *= scale;
    Tensor<double> small = specknet::detail::lanczos_resample_raw(inten, 64);
    std::copy(small.data(), small.data() + 4096,
              speckles.data() + i * 4096);
  }

  Tensor<double> rec = pseudo_inverse_reconstruct(t, scale, speckles, 1e-8);
  ASSERT_EQ(rec.shape(), (Shape{8, 28, 28}));
  for (std::size_t i = 0; i < 8; ++i) {
    double mse = 0.0;
    for (std::size_t j = 0; j < 784; ++j) {
      const double d = rec[i * 784 + j] - truths[i * 784 + j];
      mse += d * d;
    }
    mse /= 784.0;
    EXPECT_LE(mse, 1e-6) << "image " << i;
  }
}

TEST(PseudoInverse, HugeRidgeDrivesOutputToZero) {
  auto t = generate_transmission(make_config(FiberMode::incoherent, 49, 8, 43));
  Rng rng(44);
  Tensor<double> speckles = rand_tensor<double>(rng, {2, 8, 8}, 0.0, 1.0);
  Tensor<double> rec = pseudo_inverse_reconstruct(t, 1.0, speckles, 1e9);
  for (std::size_t i = 0; i < rec.size(); ++i) EXPECT_LT(rec[i], 1e-3);
}

TEST(PseudoInverse, RejectsCoherentMedia) {
  auto t = generate_transmission(make_config(FiberMode::coherent, 49, 8, 45));
  Tensor<double> speckles({1, 8, 8});
  EXPECT_THROW(pseudo_inverse_reconstruct(t, 1.0, speckles),
               UnsupportedModeError);
}

TEST(FiberConfig, KvRoundTrip) {
  FiberConfig c = make_config(FiberMode::incoherent, 784, 128, 77, 0.002);
  FiberConfig d = FiberConfig::from_kv(c.to_kv());
  EXPECT_EQ(d.to_kv(), c.to_kv());
  EXPECT_THROW(FiberConfig::from_kv("bogus_key=1\n"), FormatError);
  EXPECT_THROW(fiber_mode_from_name("laser"), ConfigError);
}
