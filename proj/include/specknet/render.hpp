#pragma once

// Reconstruction grids as plain PGM (P5) rasters. One row per sample, three
// columns: ground truth | camera speckle | reconstruction, with the row's
// score printed in a caption strip under the images.
//
// Layout, all sizes in pixels:
//   border  b = 2 on every side
//   margin  m = 2 between cells
//   caption c = 9 under each image row (5x7 glyphs + 1 px above and below)
//   tile_w / tile_h = max image width / height over the whole grid
//   width  = 2b + 3*tile_w + 2m
//   height = 2b + R*(tile_h + c) + (R-1)*m          (R = number of rows)
// Images are centered in their tiles; the caption starts under the left edge
// of the reconstruction column, shifted left if the text would overrun.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/corpus.hpp"
#include "specknet/io_util.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

template <typename T>
struct ImageTriplet {
  Tensor<T> truth;    // [h x w], values in [0, 1]
  Tensor<T> speckle;  // [h' x w']
  Tensor<T> recon;    // same shape as truth
  double score = 0.0;
};

namespace detail {

inline const std::array<const char*, 7>& render_glyph(char ch) {
  static const std::array<const char*, 7> dot = {
      "     ", "     ", "     ", "     ", "     ", " 11  ", " 11  "};
  static const std::array<const char*, 7> minus = {
      "     ", "     ", "     ", "1111 ", "     ", "     ", "     "};
  static const std::array<const char*, 7> question = {
      " 111 ", "1   1", "    1", "  11 ", "  1  ", "     ", "  1  "};
  if (ch >= '0' && ch <= '9') return digit_glyphs()[std::size_t(ch - '0')];
  if (ch == '.') return dot;
  if (ch == '-') return minus;
  return question;
}

inline std::string format_score(double score) {
  if (!std::isfinite(score)) return "?";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", score);
  return buf;
}

inline std::uint8_t unit_to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::uint8_t(std::lround(v * 255.0));
}

template <typename T>
void blit_image(Tensor<std::uint8_t>& canvas, const Tensor<T>& img,
                std::size_t y0, std::size_t x0) {
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  const std::size_t stride = canvas.shape()[1];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      canvas[(y0 + y) * stride + x0 + x] = unit_to_byte(double(img[y * w + x]));
}

inline void blit_text(Tensor<std::uint8_t>& canvas, const std::string& text,
                      std::size_t y0, std::size_t x0) {
  const std::size_t stride = canvas.shape()[1];
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto& glyph = render_glyph(text[i]);
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 5; ++x)
        if (glyph[y][x] == '1')
          canvas[(y0 + y) * stride + x0 + i * 6 + x] = 255;
  }
}

}  // namespace detail

inline constexpr std::size_t kGridBorder = 2;
inline constexpr std::size_t kGridMargin = 2;
inline constexpr std::size_t kGridCaption = 9;

template <typename T>
Tensor<std::uint8_t> render_grid(const std::vector<ImageTriplet<T>>& rows) {
  if (rows.empty()) throw UsageError("render_grid: no triplets");
  std::size_t tile_w = 0, tile_h = 0;
  for (const ImageTriplet<T>& t : rows) {
    for (const Tensor<T>* img : {&t.truth, &t.speckle, &t.recon}) {
      if (img->rank() != 2 || img->size() == 0)
        throw DimensionError("render_grid: images must be non-empty rank 2, got " +
                             shape_to_string(img->shape()));
      tile_h = std::max(tile_h, img->shape()[0]);
      tile_w = std::max(tile_w, img->shape()[1]);
    }
    if (t.truth.shape() != t.recon.shape())
      throw DimensionError("render_grid: truth " + shape_to_string(t.truth.shape()) +
                           " vs reconstruction " + shape_to_string(t.recon.shape()));
  }
  const std::size_t b = kGridBorder, m = kGridMargin, c = kGridCaption;
  const std::size_t width = 2 * b + 3 * tile_w + 2 * m;
  const std::size_t height = 2 * b + rows.size() * (tile_h + c) + (rows.size() - 1) * m;
  Tensor<std::uint8_t> canvas({height, width});

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const ImageTriplet<T>& t = rows[r];
    const std::size_t y0 = b + r * (tile_h + c + m);
    const Tensor<T>* cols[3] = {&t.truth, &t.speckle, &t.recon};
    for (std::size_t col = 0; col < 3; ++col) {
      const std::size_t x0 = b + col * (tile_w + m);
      const std::size_t h = cols[col]->shape()[0], w = cols[col]->shape()[1];
      detail::blit_image(canvas, *cols[col], y0 + (tile_h - h) / 2,
                         x0 + (tile_w - w) / 2);
    }
    const std::string text = detail::format_score(t.score);
    const std::size_t text_w = text.size() * 6 - 1;
    std::size_t tx = b + 2 * (tile_w + m);
    if (tx + text_w > width - b)
      tx = text_w + 2 * b > width ? b : width - b - text_w;
    detail::blit_text(canvas, text, y0 + tile_h + 1, tx);
  }
  return canvas;
}

inline std::string pgm_bytes(const Tensor<std::uint8_t>& img) {
  if (img.rank() != 2 || img.size() == 0)
    throw DimensionError("pgm_bytes: need non-empty rank 2, got " +
                         shape_to_string(img.shape()));
  std::string out = "P5\n" + std::to_string(img.shape()[1]) + ' ' +
                    std::to_string(img.shape()[0]) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data()), img.size());
  return out;
}

template <typename T>
void render_grid_pgm(const std::string& path,
                     const std::vector<ImageTriplet<T>>& rows) {
  detail::write_file(path, pgm_bytes(render_grid(rows)));
}

}  // namespace specknet
