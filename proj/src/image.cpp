#include "labeldiff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>

#include "labeldiff/errors.hpp"

namespace labeldiff {

namespace {

void write_raw(const std::filesystem::path& path, int h, int w, png_uint_32 format,
               const std::uint8_t* data) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& h,
                                   int& w) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return buffer;
}

}  // namespace

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("mask_union: dimensions differ");
  BinaryMask out(a.height, a.width);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_raw(path, image.height, image.width, PNG_FORMAT_RGB, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), gray.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  write_raw(path, mask.height, mask.width, PNG_FORMAT_GRAY, gray.data());
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage image;
  image.pixels = read_raw(path, PNG_FORMAT_RGB, image.height, image.width);
  return image;
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  BinaryMask mask;
  auto gray = read_raw(path, PNG_FORMAT_GRAY, mask.height, mask.width);
  mask.bits.resize(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    if (gray[i] != 0 && gray[i] != 255) {
      throw DataError("mask '" + path.string() + "' has non-binary value " + std::to_string(gray[i]));
    }
    mask.bits[i] = gray[i] ? 1 : 0;
  }
  return mask;
}

}  // namespace labeldiff
