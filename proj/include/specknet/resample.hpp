#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

namespace detail {

// Lanczos window: sinc(x) * sinc(x/a) on (-a, a), zero outside.
inline double lanczos_kernel(double x, double a) {
  if (x == 0.0) return 1.0;
  if (x <= -a || x >= a) return 0.0;
  const double px = std::numbers::pi * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

struct ResampleTaps {
  std::size_t start = 0;
  std::vector<double> w;
};

// Per-output-pixel source taps for one axis. When shrinking, the kernel is
// dilated by the scale ratio so it acts as a low-pass filter; taps falling
// outside the image are dropped and the remainder renormalized to sum to 1.
inline std::vector<ResampleTaps> lanczos_taps(std::size_t src, std::size_t dst,
                                              std::size_t a) {
  const double ratio = double(src) / double(dst);
  const double scale = std::max(1.0, ratio);
  std::vector<ResampleTaps> taps(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    const double center = (double(o) + 0.5) * ratio - 0.5;
    const long lo = std::max(long(std::ceil(center - double(a) * scale)), 0L);
    const long hi = std::min(long(std::floor(center + double(a) * scale)),
                             long(src) - 1);
    ResampleTaps& t = taps[o];
    t.start = std::size_t(lo);
    double sum = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double w = lanczos_kernel((center - double(i)) / scale, double(a));
      t.w.push_back(w);
      sum += w;
    }
    for (double& w : t.w) w /= sum;
  }
  return taps;
}

// Separable resample without the final [0,1] clamp; linear in the input.
inline Tensor<double> lanczos_resample_raw(const Tensor<double>& img,
                                           std::size_t target_side,
                                           std::size_t a = 3) {
  if (img.rank() != 2 || img.dim(0) != img.dim(1))
    throw DimensionError("lanczos_resample: expected a square image, got " +
                         shape_to_string(img.shape()));
  if (target_side < 1)
    throw UsageError("lanczos_resample: target side must be >= 1");
  if (a < 1) throw UsageError("lanczos_resample: kernel radius must be >= 1");
  const std::size_t src = img.dim(0);
  if (target_side > src)
    std::clog << "lanczos_resample: upsampling " << src << " -> "
              << target_side << "\n";
  const auto taps = lanczos_taps(src, target_side, a);

  Tensor<double> mid({src, target_side});
  for (std::size_t r = 0; r < src; ++r)
    for (std::size_t o = 0; o < target_side; ++o) {
      const ResampleTaps& t = taps[o];
      double acc = 0.0;
      for (std::size_t i = 0; i < t.w.size(); ++i)
        acc += t.w[i] * img(r, t.start + i);
      mid(r, o) = acc;
    }
  Tensor<double> out({target_side, target_side});
  for (std::size_t o = 0; o < target_side; ++o) {
    const ResampleTaps& t = taps[o];
    for (std::size_t c = 0; c < target_side; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < t.w.size(); ++i)
        acc += t.w[i] * mid(t.start + i, c);
      out(o, c) = acc;
    }
  }
  return out;
}

}  // namespace detail

// Lanczos-windowed separable resampling of a square image, output clamped
// to [0,1]. Kernel radius a defaults to 3 lobes.
inline Tensor<double> lanczos_resample(const Tensor<double>& img,
                                       std::size_t target_side,
                                       std::size_t a = 3) {
  Tensor<double> out = detail::lanczos_resample_raw(img, target_side, a);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

}  // namespace specknet
