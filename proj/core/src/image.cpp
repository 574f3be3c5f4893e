#include "idfm/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace idfm {

namespace {

void write_pnm(const Image& img, const std::string& path, const char* magic, int channels) {
  if (img.channels != channels)
    throw std::invalid_argument(std::string(magic) + " writer expects " + std::to_string(channels) +
                                " channel(s), image has " + std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << magic << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

int read_pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one integer.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      in.unget();
      break;
    }
    c = in.get();
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("malformed PNM header: " + path);
  return value;
}

Image read_pnm(const std::string& path, const char* magic, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != magic[0] || m1 != magic[1])
    throw std::runtime_error(path + ": expected " + magic + " header");
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported PNM geometry");
  in.get();  // single whitespace before raster
  Image img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error(path + ": truncated raster");
  return img;
}

}  // namespace

void write_ppm(const Image& img, const std::string& path) { write_pnm(img, path, "P6", 3); }
void write_pgm(const Image& img, const std::string& path) { write_pnm(img, path, "P5", 1); }
Image read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
Image read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

std::vector<double> to_unit_range(const Image& img) {
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(img.pixels[i]) / 127.5 - 1.0;
  return out;
}

Image from_unit_range(const std::vector<double>& data, int width, int height, int channels) {
  if (data.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("from_unit_range: size mismatch");
  Image img(width, height, channels);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double v = data[i];
    if (v < -1.0) v = -1.0;
    if (v > 1.0) v = 1.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  return img;
}

}  // namespace idfm
