#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace labeldiff {

// 8-bit RGB raster; channel values map to [0, 1] by /255.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double unit(int y, int x, int c) const { return at(y, x, c) / 255.0; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Strictly binary H x W mask.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);

// PNG I/O: images as 8-bit RGB, masks as 8-bit gray with values {0, 255}.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);
RgbImage read_rgb_png(const std::filesystem::path& path);
// Any nonzero gray value reads as 1.
BinaryMask read_mask_png(const std::filesystem::path& path);

}  // namespace labeldiff
