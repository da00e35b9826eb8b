#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "specknet/metrics.hpp"
#include "specknet/render.hpp"
#include "specknet/rng.hpp"

using namespace specknet;

namespace {

Tensor<double> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<double> img({h, w});
  Rng rng(seed);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

Tensor<double> flat_image(std::size_t side, double value) {
  Tensor<double> img({side, side});
  img.fill(value);
  return img;
}

std::vector<ImageTriplet<double>> one_row(Tensor<double> truth,
                                          Tensor<double> speckle,
                                          Tensor<double> recon, double score) {
  std::vector<ImageTriplet<double>> rows(1);
  rows[0] = {std::move(truth), std::move(speckle), std::move(recon), score};
  return rows;
}

// independent copy of the 5x7 face, only the characters captions can emit
const std::array<const char*, 7>& face(char ch) {
  static const std::map<char, std::array<const char*, 7>> table = {
      {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
      {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
      {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
      {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
      {'.', {"     ", "     ", "     ", "     ", "     ", " 11  ", " 11  "}},
      {'-', {"     ", "     ", "     ", "1111 ", "     ", "     ", "     "}},
      {'?', {" 111 ", "1   1", "    1", "  11 ", "  1  ", "     ", "  1  "}},
  };
  return table.at(ch);
}

// every pixel of the text block must match the face exactly
void expect_caption(const Tensor<std::uint8_t>& canvas, std::size_t y0,
                    std::size_t x0, const std::string& text) {
  const std::size_t stride = canvas.shape()[1];
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto& glyph = face(text[i]);
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        const int want = glyph[y][x] == '1' ? 255 : 0;
        ASSERT_EQ(int(canvas[(y0 + y) * stride + x0 + i * 6 + x]), want)
            << "char " << i << " ('" << text[i] << "') cell " << y << "," << x;
      }
    if (i + 1 < text.size())
      for (std::size_t y = 0; y < 7; ++y)
        ASSERT_EQ(int(canvas[(y0 + y) * stride + x0 + i * 6 + 5]), 0)
            << "gap after char " << i;
  }
}

}  // namespace

TEST(Layout, GridDimensionsFollowTheFormula) {
  // tiles pad to the largest image: 64; W = 4 + 3*64 + 4, H = 4 + 2*73 + 2
  std::vector<ImageTriplet<double>> rows(2);
  rows[0] = {random_image(28, 28, 1), random_image(64, 64, 2),
             random_image(28, 28, 3), 0.5};
  rows[1] = {random_image(28, 28, 4), random_image(64, 64, 5),
             random_image(28, 28, 6), 0.25};
  const Tensor<std::uint8_t> grid = render_grid(rows);
  EXPECT_EQ(grid.shape(), (Shape{152, 200}));
  const std::string pgm = pgm_bytes(grid);
  EXPECT_EQ(pgm.substr(0, 15), "P5\n200 152\n255\n");
  EXPECT_EQ(pgm.size(), 15u + 152u * 200u);

  // all-28 grid: W = 4 + 3*28 + 4, H = 4 + (28 + 9)
  const auto small = one_row(random_image(28, 28, 7), random_image(28, 28, 8),
                             random_image(28, 28, 9), 0.1);
  EXPECT_EQ(render_grid(small).shape(), (Shape{41, 92}));
}

TEST(Layout, ImagesLandCenteredInTheirCells) {
  const auto rows =
      one_row(flat_image(28, 1.0), flat_image(64, 0.5), flat_image(28, 1.0), 1.0);
  const Tensor<std::uint8_t> g = render_grid(rows);
  const std::size_t stride = g.shape()[1];
  auto at = [&](std::size_t y, std::size_t x) { return int(g[y * stride + x]); };
  // truth: 28x28 centered in a 64 tile at x0 = 2 + 18, y0 = 2 + 18
  EXPECT_EQ(at(20, 20), 255);
  EXPECT_EQ(at(47, 47), 255);
  EXPECT_EQ(at(19, 20), 0);   // just above the image
  EXPECT_EQ(at(20, 19), 0);   // just left of it
  EXPECT_EQ(at(2, 2), 0);     // cell padding stays background
  // speckle column spans the full tile: x in [68, 132); 0.5 rounds half away
  EXPECT_EQ(at(2, 68), 128);
  EXPECT_EQ(at(65, 131), 128);
  EXPECT_EQ(at(2, 67), 0);    // margin column between cells
  // recon column starts at x = 2 + 2*66 = 134
  EXPECT_EQ(at(34, 134 + 18 + 14), 255);
}

TEST(Caption, IdentityTripletPrintsOne) {
  const Tensor<double> truth = random_image(28, 28, 11);
  const double score = ssim(truth, truth);
  ASSERT_DOUBLE_EQ(score, 1.0);
  const auto rows = one_row(truth, random_image(64, 64, 12), truth, score);
  const Tensor<std::uint8_t> g = render_grid(rows);
  // caption starts under the recon column: x = 2 + 2*(64+2), y = 2 + 64 + 1
  expect_caption(g, 67, 134, "1.000");
}

TEST(Caption, NegativeScoreGetsAMinusSign) {
  const auto rows = one_row(random_image(28, 28, 13), random_image(64, 64, 14),
                            random_image(28, 28, 15), -0.25);
  expect_caption(render_grid(rows), 67, 134, "-0.250");
}

TEST(Caption, NonFiniteScoreShowsPlaceholder) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto rows = one_row(random_image(28, 28, 16), random_image(64, 64, 17),
                            random_image(28, 28, 18), nan);
  expect_caption(render_grid(rows), 67, 134, "?");
}

TEST(Caption, ShiftsLeftWhenTextWouldOverrun) {
  // 28-wide tiles: recon column starts at 62 but "0.500" is 29 px wide and
  // the right border sits at 90, so the text must slide to x = 61
  const auto rows = one_row(random_image(28, 28, 19), random_image(28, 28, 20),
                            random_image(28, 28, 21), 0.5);
  const Tensor<std::uint8_t> g = render_grid(rows);
  expect_caption(g, 31, 61, "0.500");
}

TEST(Determinism, SameTripletsSameBytes) {
  std::vector<ImageTriplet<double>> rows(2);
  rows[0] = {random_image(28, 28, 31), random_image(64, 64, 32),
             random_image(28, 28, 33), 0.731};
  rows[1] = {random_image(28, 28, 34), random_image(64, 64, 35),
             random_image(28, 28, 36), 0.002};
  const std::string a = pgm_bytes(render_grid(rows));
  const std::string b = pgm_bytes(render_grid(rows));
  EXPECT_EQ(a, b);

  const auto path = std::filesystem::temp_directory_path() / "render_grid.pgm";
  render_grid_pgm(path.string(), rows);
  std::ifstream in(path, std::ios::binary);
  std::string on_disk((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  EXPECT_EQ(on_disk, a);
  std::filesystem::remove(path);
}

TEST(Validation, RejectsEmptyAndMismatchedInputs) {
  EXPECT_THROW(render_grid(std::vector<ImageTriplet<double>>{}), UsageError);
  auto bad = one_row(random_image(28, 28, 41), random_image(64, 64, 42),
                     random_image(27, 27, 43), 0.0);
  EXPECT_THROW(render_grid(bad), DimensionError);
  auto rank1 = one_row(random_image(28, 28, 44), Tensor<double>({64}),
                       random_image(28, 28, 45), 0.0);
  EXPECT_THROW(render_grid(rank1), DimensionError);
  EXPECT_THROW(pgm_bytes(Tensor<std::uint8_t>({3})), DimensionError);
}
