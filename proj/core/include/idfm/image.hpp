#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace idfm {

// 8-bit image, row-major, interleaved channels (1 = grayscale, 3 = RGB).
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

// Binary PPM (P6) and PGM (P5), maxval 255.
void write_ppm(const Image& img, const std::string& path);   // channels == 3
void write_pgm(const Image& img, const std::string& path);   // channels == 1
Image read_ppm(const std::string& path);
Image read_pgm(const std::string& path);

// [0,255] <-> [-1,1] with clamping on the way back.
std::vector<double> to_unit_range(const Image& img);
Image from_unit_range(const std::vector<double>& data, int width, int height, int channels);

}  // namespace idfm
