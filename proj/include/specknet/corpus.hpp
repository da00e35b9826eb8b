#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "specknet/common.hpp"
#include "specknet/datasets.hpp"
#include "specknet/idx.hpp"
#include "specknet/rng.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

namespace detail {

// 5x7 digit glyphs, row-major, '1' = ink
inline const std::array<std::array<const char*, 7>, 10>& digit_glyphs() {
  static const std::array<std::array<const char*, 7>, 10> g = {{
      {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
      {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
      {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
      {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
      {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
      {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
      {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
      {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
      {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
      {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
  }};
  return g;
}

// bilinear sample of a glyph treated as cell-centered [0,1] samples
inline double glyph_sample(const std::array<const char*, 7>& glyph, double u,
                           double v) {
  if (u < -0.5 || u > 4.5 || v < -0.5 || v > 6.5) return 0.0;
  const double fu = std::clamp(u, 0.0, 4.0);
  const double fv = std::clamp(v, 0.0, 6.0);
  const std::size_t u0 = std::size_t(fu), v0 = std::size_t(fv);
  const std::size_t u1 = std::min<std::size_t>(u0 + 1, 4);
  const std::size_t v1 = std::min<std::size_t>(v0 + 1, 6);
  const double au = fu - double(u0), av = fv - double(v0);
  auto ink = [&](std::size_t x, std::size_t y) {
    return glyph[y][x] == '1' ? 1.0 : 0.0;
  };
  return (1 - au) * (1 - av) * ink(u0, v0) + au * (1 - av) * ink(u1, v0) +
         (1 - au) * av * ink(u0, v1) + au * av * ink(u1, v1);
}

}  // namespace detail

// Procedural stand-in for a handwritten-digit corpus: the 5x7 glyph of each
// class, smoothly upscaled with per-image offset, scale, and brightness
// jitter, quantized to 8 bits. Classes cycle 0..9.
inline LabeledImageSet synth_digits(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw UsageError("synth_digits: n must be >= 1");
  LabeledImageSet set;
  set.source = CorpusSource::digits;
  set.images = Tensor<double>({n, 28, 28});
  set.labels.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t d = std::uint8_t(i % 10);
    set.labels[i] = d;
    const auto& glyph = detail::digit_glyphs()[d];
    // scale and offset ranges keep the 5x7 cell grid strictly inside the
    // frame: 7 * sy <= 22.68 and |offset| <= 1.5 leave the border rows blank
    const double sx = 3.6 * rng.uniform(0.85, 1.08);
    const double sy = 3.0 * rng.uniform(0.85, 1.08);
    const double ox = 14.0 + rng.uniform(-1.5, 1.5) - 2.5 * sx;
    const double oy = 14.0 + rng.uniform(-1.5, 1.5) - 3.5 * sy;
    const double bright = rng.uniform(0.7, 1.0);
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x) {
        const double u = (double(x) - ox) / sx - 0.5;
        const double v = (double(y) - oy) / sy - 0.5;
        const double val = bright * detail::glyph_sample(glyph, u, v);
        set.images(i, y, x) = double(quantize_byte(val)) / 255.0;
      }
  }
  return set;
}

namespace detail {

// filled silhouettes on a centered (dx, dy) frame, x right / y down,
// all coordinates relative to the image center
inline bool fashion_mask(std::uint8_t cls, double x, double y, double w) {
  const double ax = std::abs(x);
  switch (cls) {
    case 0:  // tee: torso plus short sleeves
      return (ax < 4.5 * w && y > -6 && y < 8) ||
             (ax < 8.5 * w && y > -6 && y < -1);
    case 1:  // trousers: yoke then two legs
      return (y > -8 && y < -4 && ax < 5 * w) ||
             (y >= -4 && y < 10 && std::abs(ax - 3.0) < 2.0 * w);
    case 2:  // pullover: torso with full-length sleeves
      return (ax < 5 * w && y > -7 && y < 8) ||
             (ax < 8.8 * w && y > -7 && y < 6);
    case 3:  // dress: trapezoid flaring downward
      return y > -8 && y < 10 && ax < (2.5 + 0.45 * (y + 8)) * w;
    case 4:  // coat: long torso, front slit
      return ax < 7.5 * w && y > -8 && y < 10 &&
             !(ax < 0.7 && y > -5);
    case 5:  // sandal: straps above a sole
      return (y > 0 && y < 2 && ax < 8 * w) ||
             (y > 4 && y < 6 && ax < 8.5 * w) ||
             (y > 7 && y < 9.5 && ax < 9 * w);
    case 6:  // shirt: torso, short sleeves, collar notch
      return ((ax < 6 * w && y > -7 && y < 9) ||
              (ax < 9 * w && y > -7 && y < -2)) &&
             !(ax < 1.6 && y < -4);
    case 7:  // sneaker: low profile with a toe box
      return (y > 1 && y < 8 && ax < 9 * w) ||
             (y > -2 && y <= 1 && x > -7 * w && x < 2);
    case 8:  // bag: body plus handle loop
      return (ax < 7.5 * w && y > -3 && y < 9) ||
             (ax < 4.5 * w && y > -8 && y <= -3 && !(ax < 2.8 && y > -6.8));
    case 9:  // boot: shaft plus foot
      return (std::abs(x + 3) < 3.2 * w && y > -9 && y < 7) ||
             (y > 2 && y < 8 && x > -6.5 && x < 8 * w);
    default: return false;
  }
}

}  // namespace detail

// Procedural stand-in for a fashion-product corpus: ten filled silhouette
// classes with position, width, and brightness jitter, 2x2 supersampled and
// quantized to 8 bits. Classes cycle 0..9.
inline LabeledImageSet synth_fashion(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw UsageError("synth_fashion: n must be >= 1");
  LabeledImageSet set;
  set.source = CorpusSource::fashion;
  set.images = Tensor<double>({n, 28, 28});
  set.labels.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t cls = std::uint8_t(i % 10);
    set.labels[i] = cls;
    const double cx = 13.5 + rng.uniform(-1.5, 1.5);
    const double cy = 13.5 + rng.uniform(-1.2, 1.2);
    const double w = rng.uniform(0.85, 1.15);
    const double bright = rng.uniform(0.75, 1.0);
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x) {
        double cover = 0.0;
        for (double sy : {0.25, 0.75})
          for (double sx : {0.25, 0.75})
            cover += detail::fashion_mask(cls, double(x) + sx - cx,
                                          double(y) + sy - cy, w)
                         ? 0.25
                         : 0.0;
        set.images(i, y, x) = double(quantize_byte(bright * cover)) / 255.0;
      }
  }
  return set;
}

// Dispatch by source tag; random-pixel images have no class structure.
inline LabeledImageSet synth_corpus(CorpusSource source, std::size_t n,
                                    std::uint64_t seed) {
  switch (source) {
    case CorpusSource::digits: return synth_digits(n, seed);
    case CorpusSource::fashion: return synth_fashion(n, seed);
    default: return random_pixel_images(n, seed);
  }
}

// IDX export; pixels are already byte multiples, so load_idx round-trips
// bit-exactly.
inline void write_corpus_idx(const std::string& images_path,
                             const std::string& labels_path,
                             const LabeledImageSet& set) {
  Tensor<std::uint8_t> bytes(set.images.shape());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = quantize_byte(set.images[i]);
  write_idx_images(images_path, bytes);
  write_idx_labels(labels_path, set.labels);
}

}  // namespace specknet
