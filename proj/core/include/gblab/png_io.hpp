#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gblab {

// Interleaved row-major 8-bit image; channels is 1 (grayscale) or 3 (RGB).
struct ImageU8 {
  int64_t width = 0;
  int64_t height = 0;
  int64_t channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t& at(int64_t y, int64_t x, int64_t c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  uint8_t at(int64_t y, int64_t x, int64_t c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

// Minimal PNG codec for the dataset layout: 8-bit depth, colour types 0
// (grayscale) and 2 (RGB), no interlacing. The reader honours all five
// scanline filters; the writer emits filter 0 rows, which keeps output
// byte-identical for identical pixels.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& image);

}  // namespace gblab
