#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtse/tensor.hpp"

namespace mtse {

struct GrayImage {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> v;

  GrayImage() = default;
  GrayImage(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * cols + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * cols + x]; }
};

struct RgbImage {
  int rows = 0, cols = 0;
  std::vector<std::array<std::uint8_t, 3>> v;

  RgbImage() = default;
  RgbImage(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {}
  std::array<std::uint8_t, 3>& at(int y, int x) {
    return v[static_cast<std::size_t>(y) * cols + x];
  }
  const std::array<std::uint8_t, 3>& at(int y, int x) const {
    return v[static_cast<std::size_t>(y) * cols + x];
  }
};

// Plain (ASCII) PGM/PPM, max value 255. Diffable and dependency free.
void write_pgm(const GrayImage& img, const std::string& path);
void write_ppm(const RgbImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);
RgbImage read_ppm(const std::string& path);

// [0,1] -> 0..255, clipping outside the range.
std::uint8_t scale_unit(double v);
// [-1,1] -> 0..255 with 0 at 128, clipping outside the range.
std::uint8_t scale_symmetric(double v);

// Grayscale image of a [h,w] or [h,w,1] tensor under the given scaling.
GrayImage gray_from_tensor(const Tensor& t, bool symmetric = false,
                           double scale = 1.0);

// Fixed 17-entry class palette; indices beyond it wrap around.
std::array<std::uint8_t, 3> class_color(int cls);
RgbImage colorize_labels(const std::vector<std::int16_t>& labels, int rows,
                         int cols);

}  // namespace mtse
