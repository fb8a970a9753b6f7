#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace csg {

// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
};

// PNG, PPM (P6) and PGM (P5). Alpha is dropped, 16-bit samples are reduced.
Image8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace csg
