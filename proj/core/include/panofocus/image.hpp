#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "panofocus/geometry.hpp"

namespace panofocus {

// Interleaved 8-bit image, row-major. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(int x, int y, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Integer crop window obtained by rounding a fractional box outward and
// clamping to the frame.
struct CropWindow {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

CropWindow integer_crop_bounds(const Box& b, const FrameSpec& frame);

Image make_image(int width, int height, int channels, std::uint8_t fill = 0);

// PNG/JPEG by extension. Throws ValidationError on unreadable files.
Image load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& img);

Image crop_image(const Image& img, const CropWindow& win);
Image resize_image(const Image& img, int new_width, int new_height);

}  // namespace panofocus
