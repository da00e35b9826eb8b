#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "specknet/common.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

// Structural similarity with global image statistics: one mean, one variance
// and one covariance per image, no sliding window. Defaults follow the usual
// k1=0.01, k2=0.03 stabilizers on a unit dynamic range, with c3 = c2/2.
struct SsimParams {
  double c1 = 1e-4;
  double c2 = 9e-4;
  double c3 = 4.5e-4;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

struct SsimFactors {
  double luminance;
  double contrast;
  double structure;
};

namespace detail {

struct Moments {
  double mean_x, mean_y, var_x, var_y, cov;
};

template <typename T>
inline Moments moments(const T* x, const T* y, std::size_t n) {
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += double(x[i]);
    sy += double(y[i]);
  }
  const double mx = sx / double(n);
  const double my = sy / double(n);
  double vx = 0.0, vy = 0.0, cv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = double(x[i]) - mx;
    const double dy = double(y[i]) - my;
    vx += dx * dx;
    vy += dy * dy;
    cv += dx * dy;
  }
  return {mx, my, vx / double(n), vy / double(n), cv / double(n)};
}

inline void check_pair(std::size_t nx, std::size_t ny, const char* op) {
  if (nx != ny)
    throw DimensionError(std::string(op) + ": lengths differ, " +
                         std::to_string(nx) + " vs " + std::to_string(ny));
  if (nx == 0) throw DimensionError(std::string(op) + ": empty input");
}

}  // namespace detail

template <typename T>
SsimFactors ssim_factors(const T* x, const T* y, std::size_t n,
                         const SsimParams& p = {}) {
  const detail::Moments m = detail::moments(x, y, n);
  const double sdx = std::sqrt(m.var_x);
  const double sdy = std::sqrt(m.var_y);
  SsimFactors f;
  f.luminance = (2.0 * m.mean_x * m.mean_y + p.c1) /
                (m.mean_x * m.mean_x + m.mean_y * m.mean_y + p.c1);
  f.contrast = (2.0 * sdx * sdy + p.c2) / (m.var_x + m.var_y + p.c2);
  f.structure = (m.cov + p.c3) / (sdx * sdy + p.c3);
  return f;
}

template <typename T>
double ssim(const T* x, const T* y, std::size_t n, const SsimParams& p = {}) {
  const SsimFactors f = ssim_factors(x, y, n, p);
  if (p.alpha == 1.0 && p.beta == 1.0 && p.gamma == 1.0)
    return f.luminance * f.contrast * f.structure;
  return std::pow(f.luminance, p.alpha) * std::pow(f.contrast, p.beta) *
         std::pow(std::abs(f.structure), p.gamma) *
         (f.structure < 0.0 ? -1.0 : 1.0);
}

template <typename T>
SsimFactors ssim_factors(const Tensor<T>& x, const Tensor<T>& y,
                         const SsimParams& p = {}) {
  detail::check_pair(x.size(), y.size(), "ssim");
  return ssim_factors(x.data(), y.data(), x.size(), p);
}

template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  detail::check_pair(x.size(), y.size(), "ssim");
  return ssim(x.data(), y.data(), x.size(), p);
}

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_pair(x.size(), y.size(), "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x[i]) - double(y[i]);
    s += d * d;
  }
  return s / double(x.size());
}

// Mean binary cross-entropy; predictions clamped to [1e-7, 1-1e-7].
template <typename T>
double cross_entropy(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_pair(pred.size(), target.size(), "cross_entropy");
  constexpr double eps = 1e-7;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::min(1.0 - eps, std::max(eps, double(pred[i])));
    const double t = double(target[i]);
    s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return s / double(pred.size());
}

// Sample Pearson correlation coefficient.
template <typename T>
double pearson(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check_pair(x.size(), y.size(), "pearson");
  if (x.size() < 2)
    throw UsageError("pearson: need at least 2 samples, got " +
                     std::to_string(x.size()));
  const detail::Moments m = detail::moments(x.data(), y.data(), x.size());
  if (m.var_x == 0.0 || m.var_y == 0.0)
    throw UsageError("pearson: undefined for zero-variance input");
  return m.cov / std::sqrt(m.var_x * m.var_y);
}

}  // namespace specknet
