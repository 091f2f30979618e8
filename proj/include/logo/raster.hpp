#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace logo::img {

// Interleaved 8-bit raster, 1 (gray) or 3 (rgb) channels.
struct Image {
  int w = 0, h = 0, c = 1;
  std::vector<uint8_t> px;

  Image() = default;
  Image(int width, int height, int channels = 1, uint8_t fill = 0)
      : w(width), h(height), c(channels),
        px(static_cast<size_t>(width) * height * channels, fill) {}

  uint8_t& at(int x, int y, int ch = 0) {
    return px[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  uint8_t at(int x, int y, int ch = 0) const {
    return px[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  bool inside(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h; }
};

// Bilinear sample of channel ch at continuous coords; pixel (i,j) is centered
// at (i+0.5, j+0.5). Out-of-image contributions are zero-filled.
double sample_bilinear(const Image& im, double x, double y, int ch = 0);

// PNG support: 8-bit gray / rgb, non-interlaced. The encoder emits stored
// (uncompressed) deflate blocks so output bytes depend only on pixel content;
// the decoder handles stored, fixed and dynamic Huffman streams.
void write_png(const std::string& path, const Image& im);
Image read_png(const std::string& path);
std::vector<uint8_t> encode_png(const Image& im);
Image decode_png(const uint8_t* data, size_t n);

// Separable Gaussian blur, reflect padding. sigma <= 0 returns the input.
Image gaussian_blur(const Image& im, double sigma);

}  // namespace logo::img
