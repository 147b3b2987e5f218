#include "png_util.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace flowattack::pngio {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("png: " + path + ": " + why);
}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    default: throw std::invalid_argument("png: unsupported channel count");
  }
}

template <typename T>
void write_png(const std::string& path, int height, int width, int channels,
               int bit_depth, const std::vector<T>& interleaved) {
  if (height < 1 || width < 1) fail(path, "bad dimensions");
  if (interleaved.size() != static_cast<size_t>(height) * width * channels) {
    fail(path, "payload size mismatch");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "libpng write error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type_for(channels),
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows supplied in host (little) order

  std::vector<png_bytep> rows(height);
  const size_t stride = static_cast<size_t>(width) * channels * sizeof(T);
  for (int y = 0; y < height; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(
        const_cast<T*>(interleaved.data() + static_cast<size_t>(y) * width * channels));
  }
  (void)stride;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename T>
std::vector<T> read_png(const std::string& path, int expected_channels,
                        int expected_depth, int& height, int& width) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path, "cannot open");

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail(path, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "libpng read error");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  const int channels = png_get_channels(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));

  if (depth != expected_depth || channels != expected_channels ||
      (color & PNG_COLOR_MASK_PALETTE) != 0) {
    const std::string got = std::to_string(depth) + "-bit/" + std::to_string(channels) + "ch";
    const std::string want =
        std::to_string(expected_depth) + "-bit/" + std::to_string(expected_channels) + "ch";
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "format mismatch: got " + got + ", expected " + want);
  }
  if (depth == 16) png_set_swap(png);

  std::vector<T> data(static_cast<size_t>(height) * width * channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(data.data() +
                                          static_cast<size_t>(y) * width * channels);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace

void write_png8(const std::string& path, int height, int width, int channels,
                const std::vector<uint8_t>& interleaved) {
  write_png(path, height, width, channels, 8, interleaved);
}

void write_png16(const std::string& path, int height, int width, int channels,
                 const std::vector<uint16_t>& interleaved) {
  write_png(path, height, width, channels, 16, interleaved);
}

std::vector<uint8_t> read_png8(const std::string& path, int expected_channels,
                               int& height, int& width) {
  return read_png<uint8_t>(path, expected_channels, 8, height, width);
}

std::vector<uint16_t> read_png16(const std::string& path, int expected_channels,
                                 int& height, int& width) {
  return read_png<uint16_t>(path, expected_channels, 16, height, width);
}

}  // namespace flowattack::pngio
