#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cosemdepth {

// Thin libpng wrappers. 16-bit images are stored big-endian per the PNG spec.

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& interleaved);
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels);
void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels);

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 or 3
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint8_t> data8;    // when bit_depth == 8
  std::vector<std::uint16_t> data16;  // when bit_depth == 16
};

PngImage read_png(const std::string& path);

}  // namespace cosemdepth
