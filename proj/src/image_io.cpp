#include "mtse/image_io.hpp"

#include <cmath>
#include <fstream>

#include "mtse/errors.hpp"

namespace mtse {

namespace {

void write_lines(std::ofstream& out, const char* magic, int rows, int cols) {
  out << magic << "\n" << cols << " " << rows << "\n255\n";
}

std::ifstream open_image(const std::string& path, const char* magic) {
  std::ifstream in(path);
  if (!in) throw DataError("image: cannot open: " + path);
  std::string m;
  in >> m;
  if (m != magic) throw DataError("image: unexpected magic in " + path);
  return in;
}

}  // namespace

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("image: cannot open for writing: " + path);
  write_lines(out, "P2", img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x)
      out << static_cast<int>(img.at(y, x)) << (x + 1 < img.cols ? ' ' : '\n');
  }
  if (!out) throw DataError("image: write failed: " + path);
}

void write_ppm(const RgbImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("image: cannot open for writing: " + path);
  write_lines(out, "P3", img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      const auto& p = img.at(y, x);
      out << static_cast<int>(p[0]) << ' ' << static_cast<int>(p[1]) << ' '
          << static_cast<int>(p[2]) << (x + 1 < img.cols ? ' ' : '\n');
    }
  }
  if (!out) throw DataError("image: write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in = open_image(path, "P2");
  int cols = 0, rows = 0, maxval = 0;
  in >> cols >> rows >> maxval;
  if (!in || maxval != 255 || cols < 1 || rows < 1)
    throw DataError("image: bad PGM header in " + path);
  GrayImage img(rows, cols);
  for (auto& v : img.v) {
    int value = 0;
    in >> value;
    if (!in || value < 0 || value > 255)
      throw DataError("image: bad PGM payload in " + path);
    v = static_cast<std::uint8_t>(value);
  }
  return img;
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in = open_image(path, "P3");
  int cols = 0, rows = 0, maxval = 0;
  in >> cols >> rows >> maxval;
  if (!in || maxval != 255 || cols < 1 || rows < 1)
    throw DataError("image: bad PPM header in " + path);
  RgbImage img(rows, cols);
  for (auto& p : img.v) {
    for (int c = 0; c < 3; ++c) {
      int value = 0;
      in >> value;
      if (!in || value < 0 || value > 255)
        throw DataError("image: bad PPM payload in " + path);
      p[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(value);
    }
  }
  return img;
}

std::uint8_t scale_unit(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::uint8_t scale_symmetric(double v) {
  return scale_unit((v + 1.0) * 0.5);
}

GrayImage gray_from_tensor(const Tensor& t, bool symmetric, double scale) {
  const int rows = t.extent(0), cols = t.extent(1);
  GrayImage img(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const double v = t.rank() == 2
                           ? t[static_cast<std::size_t>(y) * cols + x]
                           : t.at(y, x, 0);
      img.at(y, x) = symmetric ? scale_symmetric(v * scale)
                               : scale_unit(v * scale);
    }
  }
  return img;
}

std::array<std::uint8_t, 3> class_color(int cls) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 17> kPalette = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
      {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},
      {210, 245, 60},  {250, 190, 190}, {0, 128, 128},   {230, 190, 255},
      {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195},
      {128, 128, 0},
  }};
  if (cls < 0) return {0, 0, 0};  // IGNORE renders black
  return kPalette[static_cast<std::size_t>(cls) % kPalette.size()];
}

RgbImage colorize_labels(const std::vector<std::int16_t>& labels, int rows,
                         int cols) {
  RgbImage img(rows, cols);
  for (std::size_t i = 0; i < labels.size(); ++i)
    img.v[i] = class_color(labels[i]);
  return img;
}

}  // namespace mtse
